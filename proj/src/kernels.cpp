#include "fedpit/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedpit::kernels {

using lm::AdapterParams;
using lm::BackboneParams;
using lm::Matrix;
using lm::TokenId;
using lm::TrainingSequence;

namespace {

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// Contribution of one sequence, accumulated into `out` (which starts zeroed).
void sequence_adapter_gradient(const BackboneParams& bb, const AdapterParams& ad,
                               const TrainingSequence& seq, BatchGradient& out) {
  const std::size_t V = bb.vocab_size(), d = bb.dim(), r = ad.rank();
  std::vector<double> c(d), h(r), z(V), atg(r);
  const auto& toks = seq.tokens;
  for (std::size_t t = std::max<std::size_t>(1, seq.loss_from); t < toks.size(); ++t) {
    lm::context_vector(bb, std::span<const TokenId>(toks.data(), t), c);
    for (std::size_t j = 0; j < r; ++j) {
      double s = 0.0;
      for (std::size_t m = 0; m < d; ++m) s += ad.b(m, j) * c[m];
      h[j] = s;
    }
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0.0;
      const auto w = bb.out.row(v);
      for (std::size_t m = 0; m < d; ++m) s += w[m] * c[m];
      const auto arow = ad.a.row(v);
      for (std::size_t j = 0; j < r; ++j) s += arow[j] * h[j];
      z[v] = s;
    }
    const auto y = static_cast<std::size_t>(toks[t]);
    const double zy = z[y];
    out.loss_sum += lm::softmax_inplace(z) - zy;
    ++out.positions;
    // g = softmax - onehot(y); dA += g h^T; dB += c (A^T g)^T
    z[y] -= 1.0;
    std::fill(atg.begin(), atg.end(), 0.0);
    for (std::size_t v = 0; v < V; ++v) {
      const double g = z[v];
      auto ga = out.grad_a.row(v);
      const auto arow = ad.a.row(v);
      for (std::size_t j = 0; j < r; ++j) {
        ga[j] += g * h[j];
        atg[j] += arow[j] * g;
      }
    }
    for (std::size_t m = 0; m < d; ++m) {
      auto gb = out.grad_b.row(m);
      for (std::size_t j = 0; j < r; ++j) gb[j] += c[m] * atg[j];
    }
  }
}

BatchGradient empty_adapter_gradient(const BackboneParams& bb, const AdapterParams& ad) {
  BatchGradient g;
  g.grad_a = Matrix(bb.vocab_size(), ad.rank());
  g.grad_b = Matrix(bb.dim(), ad.rank());
  return g;
}

void fold(BatchGradient& total, const BatchGradient& part) {
  total.loss_sum += part.loss_sum;
  total.positions += part.positions;
  add_into(total.grad_a, part.grad_a);
  add_into(total.grad_b, part.grad_b);
}

void sequence_backbone_gradient(const BackboneParams& bb, const TrainingSequence& seq,
                                BackboneGradient& out) {
  const std::size_t V = bb.vocab_size(), d = bb.dim(), k = bb.window();
  std::vector<double> c(d), z(V), dc(d);
  const auto& toks = seq.tokens;
  for (std::size_t t = std::max<std::size_t>(1, seq.loss_from); t < toks.size(); ++t) {
    lm::context_vector(bb, std::span<const TokenId>(toks.data(), t), c);
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0.0;
      const auto w = bb.out.row(v);
      for (std::size_t m = 0; m < d; ++m) s += w[m] * c[m];
      z[v] = s;
    }
    const auto y = static_cast<std::size_t>(toks[t]);
    const double zy = z[y];
    out.loss_sum += lm::softmax_inplace(z) - zy;
    ++out.positions;
    z[y] -= 1.0;
    std::fill(dc.begin(), dc.end(), 0.0);
    for (std::size_t v = 0; v < V; ++v) {
      const double g = z[v];
      auto go = out.grad_out.row(v);
      const auto w = bb.out.row(v);
      for (std::size_t m = 0; m < d; ++m) {
        go[m] += g * c[m];
        dc[m] += g * w[m];
      }
    }
    for (std::size_t i = 0; i < k && i < t; ++i) {
      const auto tok = static_cast<std::size_t>(toks[t - 1 - i]);
      if (tok == static_cast<std::size_t>(lm::Vocab::kPad)) continue;
      auto ge = out.grad_embed.row(tok);
      const double w = bb.position[i];
      for (std::size_t m = 0; m < d; ++m) ge[m] += w * dc[m];
    }
  }
}

BackboneGradient empty_backbone_gradient(const BackboneParams& bb) {
  BackboneGradient g;
  g.grad_embed = Matrix(bb.vocab_size(), bb.dim());
  g.grad_out = Matrix(bb.vocab_size(), bb.dim());
  return g;
}

void fold(BackboneGradient& total, const BackboneGradient& part) {
  total.loss_sum += part.loss_sum;
  total.positions += part.positions;
  add_into(total.grad_embed, part.grad_embed);
  add_into(total.grad_out, part.grad_out);
}

}  // namespace

BatchGradient adapter_gradient_serial(const BackboneParams& backbone, const AdapterParams& adapter,
                                      std::span<const TrainingSequence* const> batch) {
  BatchGradient total = empty_adapter_gradient(backbone, adapter);
  for (const auto* seq : batch) {
    BatchGradient part = empty_adapter_gradient(backbone, adapter);
    sequence_adapter_gradient(backbone, adapter, *seq, part);
    fold(total, part);
  }
  return total;
}

BatchGradient adapter_gradient_omp(const BackboneParams& backbone, const AdapterParams& adapter,
                                   std::span<const TrainingSequence* const> batch) {
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<BatchGradient> parts(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    parts[idx] = empty_adapter_gradient(backbone, adapter);
    sequence_adapter_gradient(backbone, adapter, *batch[idx], parts[idx]);
  }
  BatchGradient total = empty_adapter_gradient(backbone, adapter);
  for (const auto& p : parts) fold(total, p);
  return total;
}

BackboneGradient backbone_gradient_serial(const BackboneParams& backbone,
                                          std::span<const TrainingSequence* const> batch) {
  BackboneGradient total = empty_backbone_gradient(backbone);
  for (const auto* seq : batch) {
    BackboneGradient part = empty_backbone_gradient(backbone);
    sequence_backbone_gradient(backbone, *seq, part);
    fold(total, part);
  }
  return total;
}

BackboneGradient backbone_gradient_omp(const BackboneParams& backbone,
                                       std::span<const TrainingSequence* const> batch) {
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<BackboneGradient> parts(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    parts[idx] = empty_backbone_gradient(backbone);
    sequence_backbone_gradient(backbone, *batch[idx], parts[idx]);
  }
  BackboneGradient total = empty_backbone_gradient(backbone);
  for (const auto& p : parts) fold(total, p);
  return total;
}

double adapter_loss_sum(const BackboneParams& backbone, const AdapterParams& adapter,
                        const TrainingSequence& seq, std::size_t* positions) {
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t t = std::max<std::size_t>(1, seq.loss_from); t < seq.tokens.size(); ++t) {
    auto z = lm::forward_logits(backbone, adapter, std::span<const TokenId>(seq.tokens.data(), t));
    const double zy = z[static_cast<std::size_t>(seq.tokens[t])];
    loss += lm::softmax_inplace(z) - zy;
    ++count;
  }
  if (positions) *positions = count;
  return loss;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace fedpit::kernels
