// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "modlm/corpus.hpp"
#include "modlm/lifecycle.hpp"

using namespace modlm;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_emb = 16;
  c.n_layer = 2;
  c.n_att = 2;
  c.d_att = 8;
  c.n_ffd = 4;
  c.d_ffd = 32;
  c.k_att = 1;
  c.k_ffd = 2;
  c.d_rtr = 8;
  c.vocab_size = 257;
  c.segment_length = 32;
  c.seed = 3;
  return c;
}

TrainPlan base_plan(std::vector<std::uint32_t> corpus) {
  TrainPlan p;
  p.segment_length = 32;
  p.batch_tokens = 128;
  p.budget_tokens = 128 * 20;
  p.warmup_tokens = 128 * 2;
  p.optim.lr = 2e-3;
  p.optim.lr_min = 2e-4;
  p.corpus = std::move(corpus);
  p.seed = 5;
  return p;
}

std::map<std::string, std::vector<double>> snapshot(const Model& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : m.named_parameters()) {
    out[name] = std::vector<double>(t.data(), t.data() + t.numel());
  }
  return out;
}

bool bits_equal(const std::vector<double>& a, const Tensor& t) {
  return a.size() == t.numel() &&
         std::memcmp(a.data(), t.data(), a.size() * sizeof(double)) == 0;
}

std::vector<UsageStats> stats_like(const Model& m,
                                   std::vector<std::uint64_t> counts) {
  std::uint64_t total = 0;
  for (std::uint64_t c : counts) total += c;
  std::vector<UsageStats> stats(m.blocks.size());
  for (UsageStats& s : stats) {
    s.counts = counts;
    s.token_total = total / m.config.k_ffd;
  }
  return stats;
}

} // namespace

// ---------------------------------------------------------------------------
// Concentration finetuning

TEST_CASE("a zero concentration weight reduces finetuning to plain training") {
  const std::vector<std::uint32_t> corpus = byte_tokenize(synthetic_prose(1024, 7));
  Model m1 = build_model(tiny_config());
  Model m2 = build_model(tiny_config());

  TrainPlan fine = base_plan(corpus);
  fine.mode = TrainPlan::Mode::finetune_concentrate;
  fine.loss.mi = 0.0;
  fine.loss.concentration = 0.0;
  const FinetuneResult r = finetune_concentrate(m1, fine);

  TrainPlan plain = base_plan(corpus);
  plain.mode = TrainPlan::Mode::pretrain;
  plain.loss.mi = 0.0;
  const MetricsLog log = train(m2, plain);

  REQUIRE(r.log.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(r.log[i].losses.total == log[i].losses.total);  // bitwise equal paths
  }
  const auto s1 = snapshot(m1);
  for (const auto& [name, t] : m2.named_parameters()) {
    CHECK(bits_equal(s1.at(name), t));
  }
}

TEST_CASE("concentration finetuning sharpens expert usage") {
  const std::vector<std::uint32_t> corpus = byte_tokenize(synthetic_arithmetic(2048, 13));
  Model m = build_model(tiny_config());

  // A fresh router spreads selections near-uniformly, so the entropy starts
  // near its ceiling and the concentration phase has room to pull it down.
  const std::vector<UsageStats> before = collect_usage(m, corpus, 32);
  double h_before = 0.0;
  for (const UsageStats& s : before) h_before += usage_entropy(s);
  CHECK(h_before > 0.5 * 2.0 * std::log(4.0));

  TrainPlan fine = base_plan(corpus);
  fine.mode = TrainPlan::Mode::finetune_concentrate;
  fine.budget_tokens = 128 * 60;
  fine.optim.lr = 5e-3;
  fine.loss.concentration = 0.5;
  const FinetuneResult r = finetune_concentrate(m, fine);

  double h_after = 0.0;
  for (const UsageStats& s : r.usage) h_after += usage_entropy(s);
  CHECK(h_after < h_before);

  // The measurement pass conserves selection mass.
  for (const UsageStats& s : r.usage) {
    std::uint64_t total = 0;
    for (std::uint64_t c : s.counts) total += c;
    CHECK(total == m.config.k_ffd * s.token_total);
  }
}

TEST_CASE("finetuning refuses a pretraining plan") {
  Model m = build_model(tiny_config());
  TrainPlan p = base_plan(byte_tokenize(synthetic_prose(512, 2)));
  p.mode = TrainPlan::Mode::pretrain;
  CHECK_THROWS_AS(finetune_concentrate(m, p), ConfigError);
}

// ---------------------------------------------------------------------------
// Continual insertion

TEST_CASE("extension trains only the new modules") {
  const std::vector<std::uint32_t> corpus = byte_tokenize(synthetic_arithmetic(1024, 9));
  Model m = build_model(tiny_config());
  TrainPlan warm = base_plan(byte_tokenize(synthetic_prose(1024, 3)));
  warm.budget_tokens = 128 * 10;
  train(m, warm);

  const auto before = snapshot(m);
  TrainPlan ext = base_plan(corpus);
  ext.mode = TrainPlan::Mode::continual_insert;
  ext.budget_tokens = 128 * 10;
  const MetricsLog log = extend_and_train(m, ext, 2, 0.5, /*train_embedding=*/false);
  CHECK(log.size() == 10);

  std::size_t frozen_checked = 0;
  bool new_expert_moved = false;
  bool ext_moved = false;
  for (const auto& [name, t] : m.named_parameters()) {
    const auto it = before.find(name);
    if (it != before.end()) {
      // Every pre-existing parameter is bit-identical, embedding included.
      CHECK(bits_equal(it->second, t));
      CHECK(!t.requires_grad());
      ++frozen_checked;
    } else {
      CHECK(t.requires_grad());
      if (name.find("a_ext") != std::string::npos) ext_moved = true;
      if (name.find("expert4") != std::string::npos ||
          name.find("expert5") != std::string::npos) {
        new_expert_moved = true;
      }
    }
  }
  CHECK(frozen_checked == before.size());
  CHECK(ext_moved);
  CHECK(new_expert_moved);
  for (const Block& b : m.blocks) {
    CHECK(b.smoe.experts.size() == 6);
    CHECK(b.smoe.router.a_ext.defined());
  }
  // Usage snapshots restart at the extended arity.
  for (const UsageStats& s : m.ffd_usage) {
    CHECK(s.counts.size() == 6);
  }
}

TEST_CASE("extension can keep the embedding trainable") {
  Model m = build_model(tiny_config());
  const auto before = snapshot(m);
  TrainPlan ext = base_plan(byte_tokenize(synthetic_arithmetic(1024, 9)));
  ext.mode = TrainPlan::Mode::continual_insert;
  ext.budget_tokens = 128 * 6;
  extend_and_train(m, ext, 1, 0.1, /*train_embedding=*/true);
  CHECK(!bits_equal(before.at("embedding"), m.embedding));
  CHECK(m.embedding.requires_grad());
  // The output projection stays frozen either way.
  CHECK(bits_equal(before.at("output_proj"), m.output_proj));
  CHECK(!m.output_proj.requires_grad());
}

TEST_CASE("a stronger extension penalty shrinks the extension rows") {
  const std::vector<std::uint32_t> corpus = byte_tokenize(synthetic_arithmetic(2048, 21));
  auto run = [&](double reg) {
    Model m = build_model(tiny_config());
    TrainPlan ext = base_plan(corpus);
    ext.mode = TrainPlan::Mode::continual_insert;
    ext.budget_tokens = 128 * 30;
    extend_and_train(m, ext, 2, reg, false);
    double sq = 0.0;
    for (const auto& [name, t] : m.named_parameters()) {
      if (name.find("a_ext") == std::string::npos) continue;
      for (std::size_t i = 0; i < t.numel(); ++i) sq += t.data()[i] * t.data()[i];
    }
    return sq;
  };
  const double loose = run(0.0);
  const double tight = run(5.0);
  CHECK(tight < loose);
}

TEST_CASE("extension refuses bad plans") {
  Model m = build_model(tiny_config());
  TrainPlan p = base_plan(byte_tokenize(synthetic_prose(512, 2)));
  p.mode = TrainPlan::Mode::pretrain;
  CHECK_THROWS_AS(extend_and_train(m, p, 2, 0.5), ConfigError);
  p.mode = TrainPlan::Mode::continual_insert;
  CHECK_THROWS_AS(extend_and_train(m, p, 0, 0.5), ConfigError);
  CHECK_THROWS_AS(extend_and_train(m, p, 2, -1.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Pruning

TEST_CASE("pruning is atomic across layers") {
  Model m = build_model(tiny_config());
  const auto before = snapshot(m);
  // Layer 0 keeps two experts; layer 1 would keep one, below top_k = 2.
  std::vector<UsageStats> stats = stats_like(m, {5, 5, 0, 0});
  stats[1].counts = {10, 0, 0, 0};
  CHECK_THROWS_AS(prune(m, stats, 0.4), ConfigError);
  for (const auto& [name, t] : m.named_parameters()) {
    CHECK(bits_equal(before.at(name), t));  // refused prune mutated nothing
  }
  for (const Block& b : m.blocks) CHECK(b.smoe.experts.size() == 4);
}

TEST_CASE("an all-survivors prune keeps the function bitwise intact") {
  Model m = build_model(tiny_config());
  const std::vector<std::uint32_t> probe = byte_tokenize(synthetic_prose(33, 5));
  const std::vector<std::uint32_t> inputs(probe.begin(), probe.begin() + 32);
  const Tensor logits_before = forward(m, inputs).logits;

  const PruneReport r = prune(m, stats_like(m, {4, 4, 4, 4}), 0.1);
  REQUIRE(r.survivors.size() == 2);
  for (const auto& s : r.survivors) {
    CHECK(s == std::vector<std::size_t>{0, 1, 2, 3});
  }
  CHECK(r.params_before == r.params_after);
  CHECK(r.remaining_ratio == 1.0);

  const Tensor logits_after = forward(m, inputs).logits;
  CHECK(std::memcmp(logits_before.data(), logits_after.data(),
                    logits_before.numel() * sizeof(double)) == 0);
  CHECK(r.table().find("remaining") != std::string::npos);
}

TEST_CASE("raising the threshold prunes monotonically more") {
  std::size_t last_survivors = 5;
  for (double tau : {0.2, 0.5, 0.6}) {
    Model m = build_model(tiny_config());
    const PruneReport r = prune(m, stats_like(m, {9, 6, 4, 1}), tau);
    CHECK(r.survivors[0].size() <= last_survivors);
    CHECK(r.params_after < r.params_before);
    CHECK(r.remaining_ratio < 1.0);
    last_survivors = r.survivors[0].size();
  }
  // Spot-check 0.5 against the max-relative frequencies {1, 2/3, 4/9, 1/9}.
  Model m = build_model(tiny_config());
  const PruneReport r = prune(m, stats_like(m, {9, 6, 4, 1}), 0.5);
  CHECK(r.survivors[0] == std::vector<std::size_t>{0, 1});
  CHECK(m.blocks[0].smoe.experts.size() == 2);
  CHECK(m.blocks[0].smoe.router.a.shape() == Shape{2, 8});
  // Usage restarts empty; the next accumulation sizes it to the new arity.
  for (const UsageStats& s : m.ffd_usage) {
    CHECK(s.counts.empty());
    CHECK(s.token_total == 0);
  }
}

TEST_CASE("pruning validates its inputs") {
  Model m = build_model(tiny_config());
  CHECK_THROWS_AS(prune(m, stats_like(m, {4, 4, 4, 4}), 1.0), ConfigError);
  CHECK_THROWS_AS(prune(m, stats_like(m, {4, 4, 4, 4}), -0.5), ConfigError);
  std::vector<UsageStats> short_stats = stats_like(m, {4, 4, 4, 4});
  short_stats.pop_back();
  CHECK_THROWS_AS(prune(m, short_stats, 0.1), ConfigError);
  std::vector<UsageStats> wide = stats_like(m, {4, 4, 4, 4, 4});
  CHECK_THROWS_AS(prune(m, wide, 0.1), ConfigError);
}

// ---------------------------------------------------------------------------
// The full journey: pretrain, extend, prune, still coherent

TEST_CASE("a model survives the whole lifecycle") {
  const std::vector<std::uint32_t> prose = byte_tokenize(synthetic_prose(1536, 31));
  const std::vector<std::uint32_t> math = byte_tokenize(synthetic_arithmetic(1536, 32));
  Model m = build_model(tiny_config());

  TrainPlan pre = base_plan(prose);
  pre.budget_tokens = 128 * 16;
  pre.loss.mi = 0.01;
  train(m, pre);
  CHECK(m.step == 16);

  TrainPlan ext = base_plan(math);
  ext.mode = TrainPlan::Mode::continual_insert;
  ext.budget_tokens = 128 * 8;
  extend_and_train(m, ext, 2, 0.25);
  CHECK(m.step == 24);
  CHECK(m.blocks[0].smoe.experts.size() == 6);

  const std::vector<UsageStats> usage = collect_usage(m, math, 32);
  PruneReport r = prune(m, usage, 1e-9);  // keep everything actually used
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    CHECK(m.blocks[l].smoe.experts.size() == r.survivors[l].size());
    CHECK(m.blocks[l].smoe.router.a.shape() ==
          (Shape{r.survivors[l].size(), m.config.d_rtr}));
    CHECK(!m.blocks[l].smoe.router.a_ext.defined());  // extension absorbed
  }

  // The pruned model still evaluates and generates.
  const double ppl = evaluate_perplexity(m, math, 32);
  CHECK(std::isfinite(ppl));
  const std::string text = generate(m, "(1+2)", 8, 0.0, 1);
  CHECK(text.substr(0, 5) == "(1+2)");
}
