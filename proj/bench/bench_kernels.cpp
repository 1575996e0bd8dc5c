// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "attflow/kernels/conv.hpp"
#include "attflow/kernels/resample.hpp"

namespace k = attflow::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// A generator-sized 3x3 layer on a 12x18 feature map, batch 8.
k::Conv2dGeometry conv_geometry(benchmark::State& state) {
  k::Conv2dGeometry g;
  g.batch = 8;
  g.in_channels = g.out_channels = static_cast<std::size_t>(state.range(0));
  g.in_h = 12;
  g.in_w = 18;
  g.kernel_h = g.kernel_w = 3;
  g.pad_h = g.pad_w = 1;
  return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto in = noise(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = noise(g.out_channels * g.in_channels * 9, 2);
  const auto b = noise(g.out_channels, 3);
  std::vector<double> out(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) k::conv2d_forward(g, in, w, b, out);
    else k::serial::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto in = noise(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = noise(g.out_channels * g.in_channels * 9, 2);
  const auto go = noise(g.batch * g.out_channels * g.out_h() * g.out_w(), 4);
  std::vector<double> gi(in.size()), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_input(g, go, w, gi);
      k::conv2d_backward_weight(g, go, in, gw, gb);
    } else {
      k::serial::conv2d_backward_input(g, go, w, gi);
      k::serial::conv2d_backward_weight(g, go, in, gw, gb);
    }
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

// x8 upsampling of a batch-8, 2-channel prediction.
template <bool Parallel>
void BM_Resize(benchmark::State& state) {
  const std::size_t planes = 16, h = 12, w = 18;
  const auto in = noise(planes * h * w, 5);
  std::vector<double> out(planes * h * 8 * w * 8);
  for (auto _ : state) {
    if constexpr (Parallel) k::resize_bilinear(in, planes, h, w, h * 8, w * 8, out);
    else k::serial::resize_bilinear(in, planes, h, w, h * 8, w * 8, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// Pyramid level 0 of the saliency channels for one scene.
template <bool Parallel>
void BM_Blur(benchmark::State& state) {
  const std::size_t planes = 7, h = 96, w = 144;
  const auto in = noise(planes * h * w, 6);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if constexpr (Parallel) k::binomial_blur(in, planes, h, w, out);
    else k::serial::binomial_blur(in, planes, h, w, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_ConvForward<true>)->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackward<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackward<true>)->Arg(16)->Arg(64);
BENCHMARK(BM_Resize<false>);
BENCHMARK(BM_Resize<true>);
BENCHMARK(BM_Blur<false>);
BENCHMARK(BM_Blur<true>);

BENCHMARK_MAIN();
