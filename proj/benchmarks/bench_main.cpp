// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "modlm/attention.hpp"
#include "modlm/corpus.hpp"
#include "modlm/moe.hpp"
#include "modlm/objectives.hpp"
#include "modlm/ops.hpp"
#include "modlm/random.hpp"
#include "modlm/trainer.hpp"

namespace {

using namespace modlm;

void BM_matmul(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = static_cast<std::size_t>(state.range(1));
  const std::size_t n = static_cast<std::size_t>(state.range(2));
  Rng rng(1);
  Tensor a = randn({m, k}, rng);
  Tensor b = randn({k, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b).data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * m * k * n));
}
BENCHMARK(BM_matmul)->Args({64, 128, 256})->Args({64, 128, 514})->Args({256, 256, 256});

void BM_stick_breaking(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0));
  const std::size_t prev = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  Tensor q = randn({t, 32}, rng);
  Tensor k = randn({prev + t, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(stick_breaking_weights(q, k, prev).data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(t * (prev + t)));
}
BENCHMARK(BM_stick_breaking)->Args({64, 0})->Args({64, 64})->Args({256, 256});

void BM_smoe_forward(benchmark::State& state) {
  const std::size_t n_experts = static_cast<std::size_t>(state.range(0));
  const std::size_t top_k = static_cast<std::size_t>(state.range(1));
  Rng rng(3);
  SMoELayer layer = make_smoe_layer(n_experts, 128, 256, 64, top_k, 0.02, 1.0, rng);
  Tensor x = randn({64, 128}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(smoe_forward(layer, x).y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_smoe_forward)->Args({8, 2})->Args({8, 8})->Args({32, 2});

void BM_moa_forward(benchmark::State& state) {
  const std::size_t n_heads = static_cast<std::size_t>(state.range(0));
  const std::size_t top_k = static_cast<std::size_t>(state.range(1));
  Rng rng(4);
  MoALayer layer = make_moa_layer(n_heads, 128, 32, 64, top_k, 0.02, 1.0, rng);
  Tensor x = randn({64, 128}, rng);
  SegmentCache cache;
  for (auto _ : state) {
    benchmark::DoNotOptimize(moa_forward(layer, x, cache).y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_moa_forward)->Args({4, 2})->Args({4, 4})->Args({16, 2});

ModelConfig bench_config() {
  ModelConfig c;  // desk defaults; shrink depth so one step stays milliseconds
  c.n_layer = 2;
  return c;
}

void BM_model_forward(benchmark::State& state) {
  const Model model = build_model(bench_config());
  Rng rng(5);
  std::vector<std::uint32_t> tokens(model.config.segment_length);
  for (auto& t : tokens) t = static_cast<std::uint32_t>(rng.below(256));
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(model, tokens).logits.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(tokens.size()));
}
BENCHMARK(BM_model_forward);

void BM_train_step(benchmark::State& state) {
  Model model = build_model(bench_config());
  AdamW opt(trainable_parameters(model), OptimSettings{});
  Rng rng(6);
  const std::size_t t_len = model.config.segment_length;
  std::vector<std::uint32_t> inputs(t_len), targets(t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    inputs[i] = static_cast<std::uint32_t>(rng.below(256));
    targets[i] = static_cast<std::uint32_t>(rng.below(256));
  }
  std::uint64_t step = 0;
  for (auto _ : state) {
    TapeScope scope;
    backward(lm_cross_entropy(forward(model, inputs).logits, targets));
    opt.step(step++);
    opt.zero_grad();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(t_len));
}
BENCHMARK(BM_train_step);

} // namespace

BENCHMARK_MAIN();
