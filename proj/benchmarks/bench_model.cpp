#include <benchmark/benchmark.h>

#include "flowmix/model.hpp"

using namespace flowmix;

namespace {

void BM_ToyForward(benchmark::State& state) {
  torch::set_num_threads(1);
  const auto batch = state.range(0);
  ToyFlowModel model(ToyModelConfig{}, 0);
  model.set_training(false);
  torch::NoGradGuard no_grad;
  auto f1 = torch::rand({batch, 3, 64, 64});
  auto f2 = torch::rand({batch, 3, 64, 64});
  for (auto _ : state) {
    auto seq = model.forward(f1, f2, kDefaultIterations);
    benchmark::DoNotOptimize(seq.final().data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ToyForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  torch::set_num_threads(1);
  ToyFlowModel model(ToyModelConfig{}, 0);
  model.set_training(true);
  torch::optim::AdamW opt(model.parameters(), torch::optim::AdamWOptions(1e-3));
  auto f1 = torch::rand({4, 3, 64, 64});
  auto f2 = torch::rand({4, 3, 64, 64});
  auto gt = torch::randn({4, 2, 64, 64});
  auto valid = torch::ones({4, 64, 64});
  for (auto _ : state) {
    opt.zero_grad();
    auto loss = sequence_l1(model.forward(f1, f2, kDefaultIterations), gt, valid, 0.8);
    loss.backward();
    opt.step();
  }
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
