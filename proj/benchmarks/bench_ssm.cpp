// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "ssmtune/peft/adapter.hpp"
#include "ssmtune/ssm/s4.hpp"
#include "ssmtune/ssm/s6.hpp"

using namespace ssmtune;

namespace {

DiscreteChannel channel(RngStream& rng, std::size_t H) {
  DiscreteChannel ch;
  for (std::size_t h = 0; h < H; ++h) {
    ch.a_bar.push_back(rng.uniform(-0.95, 0.95));
    ch.b_bar.push_back(rng.normal(0.0, 1.0));
    ch.c.push_back(rng.normal(0.0, 1.0));
  }
  return ch;
}

std::vector<double> signal(RngStream& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal(0.0, 1.0);
  return x;
}

ModelArch arch(LayerKind kind, std::size_t L, std::size_t D, std::size_t H) {
  ModelArch a;
  a.layers = L;
  a.channels = D;
  a.states = H;
  a.dt_rank = 4;
  a.kind = kind;
  return a;
}

void BM_S4Scan(benchmark::State& state) {
  RngStream rng(1);
  const auto N = static_cast<std::size_t>(state.range(0));
  const DiscreteChannel ch = channel(rng, 16);
  const auto x = signal(rng, N);
  const std::vector<double> h0(16, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(s4_scan(ch, x, h0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_S4Scan)->RangeMultiplier(4)->Range(64, 4096);

void BM_S4Conv(benchmark::State& state) {
  RngStream rng(2);
  const auto N = static_cast<std::size_t>(state.range(0));
  const DiscreteChannel ch = channel(rng, 16);
  const auto x = signal(rng, N);
  for (auto _ : state) benchmark::DoNotOptimize(s4_conv_forward(s4_kernel(ch, N), x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_S4Conv)->RangeMultiplier(4)->Range(64, 4096);

// The synthetic-sweep frozen model: L = 4, D = 64, H = 8, N = 200.
void BM_DeepS4Forward(benchmark::State& state) {
  RngStream rng(3);
  const StackedModel m = init_model(arch(LayerKind::s4, 4, 64, 8), rng);
  const Tensor x = rng_draw(rng, IntegerRange{0, 10}, {64, 200});
  for (auto _ : state) benchmark::DoNotOptimize(model_tokens(m, x));
}
BENCHMARK(BM_DeepS4Forward)->Unit(benchmark::kMillisecond);

void BM_DeepS4ForwardBackward(benchmark::State& state) {
  RngStream rng(4);
  const StackedModel m = init_model(arch(LayerKind::s4, 4, 64, 8), rng);
  const AdaptedModel a = build_adapter(m, FullSpec{}, rng);
  const Tensor x = rng_draw(rng, IntegerRange{0, 10}, {64, 200});
  const Tensor y = rng_draw(rng, Normal{0.0, 1.0}, {64, 200});
  const auto names = a.trainable_names();
  for (auto _ : state) {
    Graph g;
    const Expr loss = mse(a.forward(g, x).tokens, g.constant(y));
    benchmark::DoNotOptimize(g.backward(loss, names));
  }
}
BENCHMARK(BM_DeepS4ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_S6Forward(benchmark::State& state) {
  RngStream rng(5);
  const StackedModel m = init_model(arch(LayerKind::s6, 1, 64, 16), rng);
  const S6Params p = m.s6_layer(0);
  const Tensor x = rng_draw(rng, Normal{0.0, 0.5}, {64, static_cast<std::size_t>(state.range(0))});
  for (auto _ : state) benchmark::DoNotOptimize(s6_forward(p, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_S6Forward)->Arg(64)->Arg(256);

void BM_LoRAMerge(benchmark::State& state) {
  RngStream rng(6);
  const Tensor W = rng_draw(rng, Normal{0.0, 1.0}, {64, 64});
  const LoRAFactors f{rng_draw(rng, Normal{0.0, 1.0}, {8, 64}), rng_draw(rng, Normal{0.0, 1.0}, {64, 8}), 8.0};
  for (auto _ : state) benchmark::DoNotOptimize(lora_merge(W, f));
}
BENCHMARK(BM_LoRAMerge);

}  // namespace

BENCHMARK_MAIN();
