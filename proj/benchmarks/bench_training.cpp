#include <benchmark/benchmark.h>

#include <vector>

#include "flop/evaluation.hpp"
#include "flop/federation.hpp"
#include "flop/model.hpp"
#include "flop/optimizer.hpp"

namespace {

flop::Tensor random_batch(std::size_t batch, std::uint64_t seed) {
  flop::Tensor t({batch, 1, 28, 28});
  flop::Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

// One SGD step of the small CNN on a 28x28 batch.
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const flop::ModelSpec spec = flop::small_cnn();
  flop::Rng rng(1);
  flop::ParamSet params = build_model(spec, flop::SplitSpec::before_last(spec), rng);
  flop::Optimizer opt(flop::OptimizerConfig{});
  const flop::Tensor x = random_batch(batch, 2);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flop::train_step(params, opt, spec, x, labels));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const flop::ModelSpec spec = flop::small_cnn();
  flop::Rng rng(1);
  const flop::ParamSet params = build_model(spec, flop::SplitSpec::before_last(spec), rng);
  const flop::Tensor x = random_batch(batch, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flop::forward(params, spec, x));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Forward)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
