#include <benchmark/benchmark.h>

#include <random>

#include "batvision/kernels.hpp"

using namespace bv;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

struct ConvCase {
  Tensor x, w, b, gy;
  ConvGeom g;
};

// Generator upsampling conv at full resolution: (batch, 8, 128, 128), 3x3.
ConvCase generator_case(std::int64_t batch) {
  ConvCase c;
  c.g = {3, 3, 1, 1, 1, 1};
  c.x = random_tensor({batch, 8, 128, 128}, 1);
  c.w = random_tensor({8, 8, 3, 3}, 2);
  c.b = random_tensor({8}, 3);
  c.gy = random_tensor({batch, 8, 128, 128}, 4);
  return c;
}

// First discriminator layer: 4x4 stride 2 on a 128x128 image.
ConvCase discriminator_case(std::int64_t batch) {
  ConvCase c;
  c.g = {4, 4, 2, 2, 1, 1};
  c.x = random_tensor({batch, 1, 128, 128}, 5);
  c.w = random_tensor({16, 1, 4, 4}, 6);
  c.b = random_tensor({16}, 7);
  c.gy = random_tensor({batch, 16, 64, 64}, 8);
  return c;
}

template <typename Fn>
void run_forward(benchmark::State& state, ConvCase c, Fn fn) {
  for (auto _ : state) benchmark::DoNotOptimize(fn(c.x, c.w, c.b, c.g));
}

template <typename Fn>
void run_backward(benchmark::State& state, ConvCase c, Fn fn) {
  for (auto _ : state) benchmark::DoNotOptimize(fn(c.x, c.w, c.gy, c.g, true));
}

void BM_GenConvForward(benchmark::State& s) { run_forward(s, generator_case(s.range(0)), kernels::conv2d_forward); }
void BM_GenConvForwardRef(benchmark::State& s) {
  run_forward(s, generator_case(s.range(0)), reference::conv2d_forward);
}
void BM_GenConvBackward(benchmark::State& s) {
  run_backward(s, generator_case(s.range(0)), kernels::conv2d_backward);
}
void BM_GenConvBackwardRef(benchmark::State& s) {
  run_backward(s, generator_case(s.range(0)), reference::conv2d_backward);
}
void BM_DiscConvForward(benchmark::State& s) {
  run_forward(s, discriminator_case(s.range(0)), kernels::conv2d_forward);
}
void BM_DiscConvForwardRef(benchmark::State& s) {
  run_forward(s, discriminator_case(s.range(0)), reference::conv2d_forward);
}

void BM_Upsample(benchmark::State& state) {
  const Tensor x = random_tensor({state.range(0), 8, 64, 64}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::upsample_nearest2x(x));
}
void BM_UpsampleRef(benchmark::State& state) {
  const Tensor x = random_tensor({state.range(0), 8, 64, 64}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(reference::upsample_nearest2x(x));
}

}  // namespace

BENCHMARK(BM_GenConvForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenConvForwardRef)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenConvBackward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenConvBackwardRef)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DiscConvForward)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DiscConvForwardRef)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_UpsampleRef)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
