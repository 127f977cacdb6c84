#include <benchmark/benchmark.h>

#include <vector>

#include "flop/gemm.hpp"
#include "flop/ops.hpp"
#include "flop/rng.hpp"
#include "flop/tensor.hpp"

namespace {

flop::Tensor random_tensor(flop::Shape shape, std::uint64_t seed) {
  flop::Tensor t(std::move(shape));
  flop::Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform() - 0.5;
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> a(n * n, 0.5), b(n * n, 0.25), c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    flop::kernels::gemm_accumulate(n, n, n, a.data(), n, b.data(), n, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

// First conv of the small CNN on a 28x28 batch.
void BM_Conv2dForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const flop::Tensor x = random_tensor({batch, 1, 28, 28}, 1);
  const flop::Tensor w = random_tensor({16, 1, 5, 5}, 2);
  const flop::Tensor b = random_tensor({16}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flop::ops::conv2d(x, w, b, 1, 0));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dForward)->Arg(60);

// Second conv, where most of the compute sits.
void BM_Conv2dBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const flop::Tensor x = random_tensor({batch, 16, 12, 12}, 4);
  const flop::Tensor w = random_tensor({32, 16, 5, 5}, 5);
  const flop::Tensor g = random_tensor({batch, 32, 8, 8}, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flop::ops::conv2d_backward(x, w, g, 1, 0, true));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dBackward)->Arg(60);

}  // namespace
