// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/lifecycle.hpp"

#include <cmath>
#include <sstream>

#include "modlm/error.hpp"
#include "modlm/random.hpp"

namespace modlm {

namespace {

std::size_t parameter_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.named_parameters()) n += t.numel();
  return n;
}

} // namespace

FinetuneResult finetune_concentrate(Model& model, const TrainPlan& plan) {
  if (plan.mode != TrainPlan::Mode::finetune_concentrate) {
    throw ConfigError("finetune_concentrate: plan mode mismatch");
  }
  FinetuneResult result;
  result.log = train(model, plan);
  const std::vector<std::uint32_t>& eval =
      plan.eval_corpus.empty() ? plan.corpus : plan.eval_corpus;
  result.usage = collect_usage(model, eval, plan.segment_length);
  return result;
}

MetricsLog extend_and_train(Model& model, const TrainPlan& plan, std::size_t n_new,
                            double reg_weight, bool train_embedding) {
  if (plan.mode != TrainPlan::Mode::continual_insert) {
    throw ConfigError("extend_and_train: plan mode mismatch");
  }
  if (n_new == 0) throw ConfigError("extend_and_train: need at least one new expert");
  if (reg_weight < 0.0) throw ConfigError("extend_and_train: negative penalty weight");

  // Freeze the whole base model; the insertion below re-enables only the new
  // experts and the router extension rows.
  for (auto& [name, t] : model.named_parameters()) t.set_requires_grad(false);
  InsertSpec spec;
  spec.n_new = n_new;
  spec.weight_std = model.config.init_std;
  spec.out_proj_scale =
      1.0 / std::sqrt(2.0 * static_cast<double>(model.config.n_layer));
  Rng rng(plan.seed ^ 0x517cc1b727220a95ULL);
  for (Block& b : model.blocks) insert_experts(b.smoe, spec, rng);
  if (train_embedding) model.embedding.set_requires_grad(true);
  for (UsageStats& u : model.ffd_usage) u = UsageStats{};  // arity changed

  TrainPlan extended = plan;
  extended.loss.routing_reg = reg_weight;
  return train(model, extended);
}

PruneReport prune(Model& model, const std::vector<UsageStats>& stats, double tau) {
  if (stats.size() != model.blocks.size()) {
    throw ConfigError("prune: stats cover " + std::to_string(stats.size()) +
                      " layers, model has " + std::to_string(model.blocks.size()));
  }
  if (!(tau >= 0.0) || tau >= 1.0) {
    throw ConfigError("prune: threshold must lie in [0, 1)");
  }
  // Dry-run the survival rule everywhere first so a refusal in any layer
  // leaves the model untouched.
  for (std::size_t l = 0; l < stats.size(); ++l) {
    if (stats[l].counts.size() != model.blocks[l].smoe.experts.size()) {
      throw ConfigError("prune: layer " + std::to_string(l) + " stats track " +
                        std::to_string(stats[l].counts.size()) + " experts, model has " +
                        std::to_string(model.blocks[l].smoe.experts.size()));
    }
    const std::vector<double> freq = stats[l].normalized_frequency();
    std::size_t survivors = 0;
    for (std::size_t m = 0; m < freq.size(); ++m) {
      if (stats[l].counts[m] > 0 && freq[m] >= tau) ++survivors;
    }
    if (survivors < model.blocks[l].smoe.top_k) {
      throw ConfigError("prune: layer " + std::to_string(l) + " would keep " +
                        std::to_string(survivors) + " experts, fewer than top_k");
    }
  }

  PruneReport report;
  report.params_before = parameter_count(model);
  for (std::size_t l = 0; l < stats.size(); ++l) {
    report.survivors.push_back(prune_experts(model.blocks[l].smoe, stats[l], tau));
    model.ffd_usage[l] = UsageStats{};
  }
  report.params_after = parameter_count(model);
  report.remaining_ratio =
      static_cast<double>(report.params_after) / static_cast<double>(report.params_before);
  return report;
}

std::string PruneReport::table() const {
  std::ostringstream out;
  out << "layer  kept experts\n";
  for (std::size_t l = 0; l < survivors.size(); ++l) {
    out << l << "      ";
    for (std::size_t i = 0; i < survivors[l].size(); ++i) {
      if (i) out << ' ';
      out << survivors[l][i];
    }
    out << '\n';
  }
  out << "parameters " << params_after << " / " << params_before << "  ("
      << remaining_ratio << " remaining)\n";
  return out.str();
}

} // namespace modlm
