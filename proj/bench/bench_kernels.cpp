// Serial reference vs OpenMP kernels on canonical-sized inputs: V = 256,
// d = 32, window 16, rank 16, batch 16 sequences of 24-40 tokens.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "fedpit/kernels.hpp"
#include "fedpit/rng.hpp"
#include "fedpit/tinylm.hpp"

using namespace fedpit;

namespace {

constexpr std::size_t kVocab = 256, kDim = 32, kWindow = 16, kRank = 16;

struct Inputs {
  lm::BackboneParams backbone;
  lm::AdapterParams adapter;
  std::vector<lm::TrainingSequence> seqs;
  std::vector<const lm::TrainingSequence*> batch;
};

const Inputs& inputs() {
  static const Inputs in = [] {
    Inputs out;
    Rng rng(1);
    out.backbone.embed = lm::Matrix(kVocab, kDim);
    out.backbone.out = lm::Matrix(kVocab, kDim);
    for (auto& x : out.backbone.embed.data) x = rng.normal(0, 0.1);
    for (auto& x : out.backbone.out.data) x = rng.normal(0, 0.1);
    out.backbone.position = lm::position_weights(kWindow);
    out.adapter = lm::AdapterParams::init(kVocab, kDim, kRank, rng);
    for (auto& x : out.adapter.a.data) x = rng.normal(0, 0.01);
    for (int i = 0; i < 16; ++i) {
      lm::TrainingSequence s;
      const auto len = 24 + rng.below(17);
      for (std::size_t t = 0; t < len; ++t) s.tokens.push_back(static_cast<lm::TokenId>(rng.below(kVocab)));
      out.seqs.push_back(std::move(s));
    }
    for (const auto& s : out.seqs) out.batch.push_back(&s);
    return out;
  }();
  return in;
}

void BM_AdapterGradientSerial(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::adapter_gradient_serial(in.backbone, in.adapter, in.batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.batch.size()));
}

void BM_AdapterGradientOmp(benchmark::State& state) {
  const auto& in = inputs();
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::adapter_gradient_omp(in.backbone, in.adapter, in.batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.batch.size()));
}

void BM_BackboneGradientSerial(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::backbone_gradient_serial(in.backbone, in.batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.batch.size()));
}

void BM_BackboneGradientOmp(benchmark::State& state) {
  const auto& in = inputs();
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::backbone_gradient_omp(in.backbone, in.batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.batch.size()));
}

}  // namespace

BENCHMARK(BM_AdapterGradientSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AdapterGradientOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_BackboneGradientSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BackboneGradientOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond)->UseRealTime();

BENCHMARK_MAIN();
