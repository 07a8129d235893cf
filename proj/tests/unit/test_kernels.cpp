#include <omp.h>

#include "doctest.h"
#include "fedpit/kernels.hpp"
#include "helpers.hpp"

using namespace fedpit;
using namespace fedpit::lm;

namespace {

std::vector<TrainingSequence> batch_of(std::size_t V, int n, Rng& rng) {
  std::vector<TrainingSequence> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(testutil::random_sequence(V, 4 + rng.below(20), rng));
    out.back().loss_from = 1 + rng.below(3);
  }
  return out;
}

std::vector<const TrainingSequence*> pointers(const std::vector<TrainingSequence>& seqs) {
  std::vector<const TrainingSequence*> p;
  for (const auto& s : seqs) p.push_back(&s);
  return p;
}

}  // namespace

TEST_CASE("omp adapter gradient is bit-identical to the serial one") {
  Rng rng(12);
  const auto bb = testutil::random_backbone(40, 8, 6, rng);
  const auto ad = testutil::random_adapter(40, 8, 4, rng);
  const auto seqs = batch_of(40, 16, rng);
  const auto p = pointers(seqs);
  const auto ref = kernels::adapter_gradient_serial(bb, ad, p);
  for (int threads : {1, 2, 3, 4}) {
    omp_set_num_threads(threads);
    const auto got = kernels::adapter_gradient_omp(bb, ad, p);
    CHECK(got.loss_sum == ref.loss_sum);
    CHECK(got.positions == ref.positions);
    CHECK(got.grad_a == ref.grad_a);
    CHECK(got.grad_b == ref.grad_b);
  }
}

TEST_CASE("omp backbone gradient is bit-identical to the serial one") {
  Rng rng(13);
  const auto bb = testutil::random_backbone(30, 8, 5, rng);
  const auto seqs = batch_of(30, 9, rng);
  const auto p = pointers(seqs);
  const auto ref = kernels::backbone_gradient_serial(bb, p);
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    const auto got = kernels::backbone_gradient_omp(bb, p);
    CHECK(got.loss_sum == ref.loss_sum);
    CHECK(got.grad_embed == ref.grad_embed);
    CHECK(got.grad_out == ref.grad_out);
  }
}

TEST_CASE("batch loss is the sum of per-sequence losses") {
  Rng rng(14);
  const auto bb = testutil::random_backbone(20, 4, 3, rng);
  const auto ad = testutil::random_adapter(20, 4, 2, rng);
  const auto seqs = batch_of(20, 5, rng);
  double total = 0;
  std::size_t positions = 0;
  for (const auto& s : seqs) {
    std::size_t n = 0;
    total += kernels::adapter_loss_sum(bb, ad, s, &n);
    positions += n;
    CHECK(n == s.tokens.size() - s.loss_from);
  }
  const auto g = kernels::adapter_gradient_serial(bb, ad, pointers(seqs));
  CHECK(g.loss_sum == doctest::Approx(total).epsilon(1e-12));
  CHECK(g.positions == positions);
}

TEST_CASE("empty batch") {
  Rng rng(15);
  const auto bb = testutil::random_backbone(10, 4, 3, rng);
  const auto ad = testutil::random_adapter(10, 4, 2, rng);
  const std::vector<const TrainingSequence*> none;
  const auto g = kernels::adapter_gradient_omp(bb, ad, none);
  CHECK(g.positions == 0);
  CHECK(g.loss_sum == 0.0);
}
