// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modlm/trainer.hpp"

namespace modlm {

struct FinetuneResult {
  MetricsLog log;
  /// Per-layer expert selection stats on the plan's eval corpus (or the
  /// training corpus when no eval split is given), ready for pruning.
  std::vector<UsageStats> usage;
};

/// Concentration finetuning: trains with the concentration weight active,
/// then measures expert usage for the pruning step. Mode must be
/// finetune_concentrate.
FinetuneResult finetune_concentrate(Model& model, const TrainPlan& plan);

/// Continual insertion: freezes every existing parameter, appends n_new
/// fresh experts and trainable router extension rows per layer, optionally
/// re-enables the embedding, then trains at a constant rate with the
/// extension penalty at reg_weight. Mode must be continual_insert and n_new
/// positive. Frozen parameters are bit-identical afterwards.
MetricsLog extend_and_train(Model& model, const TrainPlan& plan, std::size_t n_new,
                            double reg_weight, bool train_embedding = true);

struct PruneReport {
  /// Surviving expert indices per layer, in original order.
  std::vector<std::vector<std::size_t>> survivors;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  double remaining_ratio = 1.0;

  std::string table() const;
};

/// Drops low-frequency experts in every layer per the stats and threshold.
/// Validates every layer before mutating any, so a refused layer (fewer than
/// top_k survivors) leaves the model untouched. Usage snapshots restart at
/// the new arity.
PruneReport prune(Model& model, const std::vector<UsageStats>& stats, double tau);

} // namespace modlm
