// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modlm/model.hpp"

namespace modlm {

/// Scheduled rate for a 0-based step: linear warmup to lr over warmup_steps,
/// then either a cosine decay reaching lr_min at total_steps or a constant
/// hold at lr. Steps past total_steps stay at the final value.
double schedule_lr(const OptimSettings& settings, std::uint64_t step);

/// Adaptive-moment descent with decoupled weight decay and global-norm
/// gradient clipping. Parameters without an accumulated gradient contribute
/// zero. Updates mutate parameter storage in place and never touch a tape.
class AdamW {
public:
  AdamW(std::vector<Tensor> params, OptimSettings settings);

  /// One update at the given step's scheduled rate; returns the pre-clip
  /// global gradient norm. NumericError on non-finite gradients.
  double step(std::uint64_t step_index);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

private:
  std::vector<Tensor> params_;
  OptimSettings s_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;  // bias-correction counter
};

/// One training phase. The mode picks the auxiliary loss family and the
/// schedule shape: balancing during pretraining (cosine), concentration
/// during finetuning (cosine), extension penalty during continual insertion
/// (constant rate).
struct TrainPlan {
  enum class Mode { pretrain, finetune_concentrate, continual_insert };
  Mode mode = Mode::pretrain;
  std::uint64_t budget_tokens = 5'000'000;
  /// Tokens per optimizer update; segments of segment_length accumulate
  /// gradients until the batch is full.
  std::size_t batch_tokens = 16'384;
  std::size_t segment_length = 64;
  std::uint64_t warmup_tokens = 250'000;
  OptimSettings optim;  // lr is the peak; schedule/warmup/total are derived
  /// All zero until the caller enables the weight its mode uses; the model
  /// config's loss defaults describe the desk recipe, not this plan.
  LossWeights loss{0.0, 0.0, 0.0};
  std::vector<std::uint32_t> corpus;
  /// Held-out tokens for usage collection after concentration finetuning;
  /// falls back to the training corpus when empty.
  std::vector<std::uint32_t> eval_corpus;
  std::uint64_t seed = 1;

  /// ConfigError on inconsistent budgets, rates, or a loss weight that does
  /// not belong to the mode.
  void validate() const;
};

struct MetricsRecord {
  std::uint64_t step = 0;         // model step counter after the update
  std::uint64_t tokens_seen = 0;  // cumulative tokens consumed by this run
  double lr = 0.0;
  double grad_norm = 0.0;         // pre-clip global norm
  LossReport losses;              // averaged over the step's accumulation
  std::vector<double> usage_entropy;  // per layer, nats, this step's batch
};
using MetricsLog = std::vector<MetricsRecord>;

/// One JSON object per line, schema stable across phases.
std::string metrics_to_jsonl(const MetricsLog& log);

/// Shannon entropy in nats of the normalized selection counts.
double usage_entropy(const UsageStats& stats);

/// Parameters with gradients enabled, in stable name order.
std::vector<Tensor> trainable_parameters(const Model& model);

/// Runs the plan against the model in place: cyclic segments with caches
/// threaded between consecutive segments, gradient accumulation up to
/// batch_tokens, clipping, and the mode's schedule. Deterministic for a
/// fixed plan, seed, and corpus. NumericError with step context on a
/// non-finite loss. A zero-step budget returns an empty log untouched.
MetricsLog train(Model& model, const TrainPlan& plan);

/// exp(mean next-byte NLL) over floor((n-1)/T) consecutive segments with
/// caches threaded; deterministic, gradient-free.
double evaluate_perplexity(const Model& model, const std::vector<std::uint32_t>& corpus,
                           std::size_t segment_length);

/// Per-layer expert selection stats over one gradient-free pass of the
/// corpus; the model's own running counters are left untouched.
std::vector<UsageStats> collect_usage(const Model& model,
                                      const std::vector<std::uint32_t>& corpus,
                                      std::size_t segment_length);

/// Ancestral sampling, one byte per step, segment caches rolled so context
/// matches training. temperature 0 decodes greedily; negative temperature is
/// a ContractError. Deterministic per seed. n_tokens 0 returns the prompt.
std::string generate(const Model& model, const std::string& prompt, std::size_t n_tokens,
                     double temperature, std::uint64_t seed);

} // namespace modlm
