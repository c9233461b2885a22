#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "robarch/kernels.hpp"

using namespace robarch::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      gemm(Trans::no, Trans::no, n, n, n, a.data(), n, b.data(), n, 0.0, c.data(), n);
    } else {
      reference::gemm(Trans::no, Trans::no, n, n, n, a.data(), n, b.data(), n, 0.0, c.data(), n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

ConvGeometry conv_geometry(std::size_t channels, bool depthwise) {
  ConvGeometry g;
  g.batch = 16;
  g.in_channels = channels;
  g.out_channels = channels;
  g.in_h = g.in_w = 32;
  g.kernel = depthwise ? 7 : 3;
  g.pad = g.kernel / 2;
  g.depthwise = depthwise;
  return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(static_cast<std::size_t>(state.range(0)), state.range(1) != 0);
  const auto x = random_vector(g.batch * g.in_channels * g.in_h * g.in_w, 3);
  const auto w = random_vector(g.weight_size(), 4);
  std::vector<double> y(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv2d_forward(g, x.data(), w.data(), nullptr, y.data());
    } else {
      reference::conv2d_forward(g, x.data(), w.data(), nullptr, y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(static_cast<std::size_t>(state.range(0)), state.range(1) != 0);
  const auto x = random_vector(g.batch * g.in_channels * g.in_h * g.in_w, 5);
  const auto w = random_vector(g.weight_size(), 6);
  const auto dy = random_vector(g.batch * g.out_channels * g.out_h() * g.out_w(), 7);
  std::vector<double> dx(x.size()), dw(w.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv2d_backward_input(g, dy.data(), w.data(), dx.data());
      conv2d_backward_weight(g, x.data(), dy.data(), dw.data(), nullptr);
    } else {
      reference::conv2d_backward_input(g, dy.data(), w.data(), dx.data());
      reference::conv2d_backward_weight(g, x.data(), dy.data(), dw.data(), nullptr);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->UseRealTime();
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Args({32, 0})->Args({64, 1});
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Args({32, 0})->Args({64, 1})->UseRealTime();
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Args({32, 0})->Args({64, 1});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Args({32, 0})->Args({64, 1})->UseRealTime();

BENCHMARK_MAIN();
