#include <benchmark/benchmark.h>

#include <random>

#include "flowmix/augment.hpp"
#include "flowmix/data.hpp"
#include "flowmix/flowcore.hpp"

using namespace flowmix;

namespace {

FlowField noisy_flow(int side, std::uint64_t seed, FlowDirection dir) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 3.0f);
  FlowField f(side, side, dir);
  for (auto& v : f.values()) v = d(rng);
  return f;
}

void BM_ConfidenceMap(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto fwd = noisy_flow(side, 1, FlowDirection::kForward);
  auto bwd = noisy_flow(side, 2, FlowDirection::kBackward);
  for (auto _ : state) {
    benchmark::DoNotOptimize(confidence_map(fwd, bwd));
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ConfidenceMap)->Arg(64)->Arg(256)->Arg(512);

void BM_Mix(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Image a(side, side, 0.2f), b(side, side, 0.7f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mix(a, b, MixingRatio(0.3)));
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Mix)->Arg(64)->Arg(512);

void BM_DistractedPair(benchmark::State& state) {
  SynthConfig cfg;
  auto samples = generate_dataset(cfg, 16);
  auto pool = make_frame_pool(samples);
  AugmentConfig aug;
  Rng rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(make_distracted_pair(samples[0].frame1, samples[0].frame2, aug, pool, samples[0].id, rng));
  }
}
BENCHMARK(BM_DistractedPair);

void BM_GenerateSample(benchmark::State& state) {
  SynthConfig cfg;
  Rng rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_sample(cfg, rng));
  }
}
BENCHMARK(BM_GenerateSample);

}  // namespace

BENCHMARK_MAIN();
