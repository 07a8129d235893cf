#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedpit/kernels.hpp"
#include "fedpit/rng.hpp"
#include "fedpit/tinylm.hpp"

namespace testutil {

using namespace fedpit;

inline lm::BackboneParams random_backbone(std::size_t V, std::size_t d, std::size_t k, Rng& rng,
                                          double scale = 0.5) {
  lm::BackboneParams bb;
  bb.embed = lm::Matrix(V, d);
  bb.out = lm::Matrix(V, d);
  for (auto& x : bb.embed.data) x = rng.normal(0.0, scale);
  for (auto& x : bb.out.data) x = rng.normal(0.0, scale);
  bb.position = lm::position_weights(k);
  return bb;
}

inline lm::AdapterParams random_adapter(std::size_t V, std::size_t d, std::size_t r, Rng& rng,
                                        double scale = 0.5) {
  auto ad = lm::AdapterParams::zeros(V, d, r);
  for (auto& x : ad.a.data) x = rng.normal(0.0, scale);
  for (auto& x : ad.b.data) x = rng.normal(0.0, scale);
  return ad;
}

inline lm::TrainingSequence random_sequence(std::size_t V, std::size_t len, Rng& rng) {
  lm::TrainingSequence s;
  for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(static_cast<lm::TokenId>(rng.below(V)));
  s.loss_from = 1;
  return s;
}

// Window 1, one-hot embeddings: the previous token alone picks the row of
// `next_logits` used as logits.
inline lm::BackboneParams lookup_backbone(const std::vector<std::vector<double>>& next_logits) {
  const std::size_t V = next_logits.size();
  lm::BackboneParams bb;
  bb.embed = lm::Matrix(V, V);
  bb.out = lm::Matrix(V, V);
  for (std::size_t i = 0; i < V; ++i) bb.embed(i, i) = 1.0;
  for (std::size_t prev = 0; prev < V; ++prev)
    for (std::size_t v = 0; v < V; ++v) bb.out(v, prev) = next_logits[prev][v];
  bb.position = {1.0};
  return bb;
}

// Argmax of prev -> succ(prev) with a margin of 5.
inline lm::BackboneParams chain_backbone(const std::vector<std::size_t>& succ) {
  std::vector<std::vector<double>> logits(succ.size(), std::vector<double>(succ.size(), 0.0));
  for (std::size_t i = 0; i < succ.size(); ++i) logits[i][succ[i]] = 5.0;
  return lookup_backbone(logits);
}

inline lm::Vocab vocab_of_size(std::size_t V) {
  std::vector<std::string> words;
  for (std::size_t i = lm::Vocab::kNumReserved; i < V; ++i) words.push_back("w" + std::to_string(100 + i));
  return lm::Vocab::from_words(words);
}

// Relative error ||g - fd|| / max(||g||, ||fd||) of the adapter gradient of the
// summed loss against central finite differences with step h.
inline double gradient_rel_error(const lm::BackboneParams& bb, const lm::AdapterParams& ad,
                                 const std::vector<lm::TrainingSequence>& seqs, double h = 1e-5) {
  std::vector<const lm::TrainingSequence*> batch;
  for (const auto& s : seqs) batch.push_back(&s);
  const auto g = kernels::adapter_gradient_serial(bb, ad, batch);
  std::vector<double> analytic(g.grad_a.data);
  analytic.insert(analytic.end(), g.grad_b.data.begin(), g.grad_b.data.end());

  auto loss = [&](const lm::AdapterParams& p) {
    double total = 0.0;
    for (const auto& s : seqs) total += kernels::adapter_loss_sum(bb, p, s);
    return total;
  };
  const auto base = lm::flatten(ad);
  const lm::AdapterShape shape{bb.vocab_size(), bb.dim(), ad.rank()};
  double diff2 = 0.0, na = 0.0, nf = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (loss(lm::unflatten(plus, shape)) - loss(lm::unflatten(minus, shape))) / (2 * h);
    diff2 += (analytic[i] - fd) * (analytic[i] - fd);
    na += analytic[i] * analytic[i];
    nf += fd * fd;
  }
  const double scale = std::sqrt(std::max(na, nf));
  return scale > 0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
}

}  // namespace testutil
