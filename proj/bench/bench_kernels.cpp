// Parallel kernels vs. the serial reference on decoder-sized problems.
//
//   ./build/bench_kernels --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>

#include "cellseg/kernels.hpp"

using namespace cellseg;

namespace {

Tensor<float> random_tensor(Shape s, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor<float> t(s);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

// args: channels, spatial size
void BM_ConvForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, hw, hw}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  std::vector<float> b(c, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_forward<float>(x, w, b, 1, 1));
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * c * c * 9 * hw * hw, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_ConvForwardReference(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, hw, hw}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  std::vector<float> b(c, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::conv2d_forward<float>(x, w, b, 1, 1));
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * c * c * 9 * hw * hw, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, hw, hw}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  auto g = random_tensor({1, c, hw, hw}, 3);
  for (auto _ : state) {
    Tensor<float> gx(x.shape()), gw(w.shape());
    std::vector<float> gb(c);
    kernels::conv2d_backward<float>(x, w, g, 1, 1, &gx, &gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(4.0 * c * c * 9 * hw * hw, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, hw, hw}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  auto g = random_tensor({1, c, hw, hw}, 3);
  for (auto _ : state) {
    Tensor<float> gx(x.shape()), gw(w.shape());
    std::vector<float> gb(c);
    kernels::reference::conv2d_backward<float>(x, w, g, 1, 1, &gx, &gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(4.0 * c * c * 9 * hw * hw, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_Upsample(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? kernels::Upsample::kNearest : kernels::Upsample::kBilinear;
  auto x = random_tensor({1, 64, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::upsample_forward<float>(x, 2, mode));
}

void BM_UpsampleReference(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? kernels::Upsample::kNearest : kernels::Upsample::kBilinear;
  auto x = random_tensor({1, 64, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::upsample_forward<float>(x, 2, mode));
}

}  // namespace

BENCHMARK(BM_ConvForward)->Args({32, 64})->Args({96, 32})->Args({32, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Args({32, 64})->Args({96, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Args({32, 64})->Args({96, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample)->Arg(0)->Arg(1);
BENCHMARK(BM_UpsampleReference)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
