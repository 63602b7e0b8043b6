// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "modlm/tensor.hpp"

namespace modlm {

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` [T x V]. Perplexity is exp of this value.
Tensor lm_cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& targets);

/// Load-balancing objective over a batch of full routing distributions
/// pi_batch [|X| x N] (every row sums to 1): -H(m) + mean_x H(m|x), where
/// the marginal p(m) averages the rows. Minimizing spreads usage across
/// modules while sharpening each token's routing. Range [-ln N, ln N];
/// the minimum needs deterministic per-token routing with a balanced
/// marginal, and per-token uniform routing scores exactly 0.
Tensor mi_loss(const Tensor& pi_batch);

/// Load-concentration objective: marginal entropy H(m) over the same batch
/// marginal. Minimizing steers usage onto few modules so the rest can be
/// pruned. Range [0, ln N]; 0 iff the marginal is one-hot.
Tensor concentration_loss(const Tensor& pi_batch);

/// Squared Frobenius norm of the router extension block. Penalizing it keeps
/// freshly inserted modules from capturing traffic that the frozen base
/// already handles. ContractError when no extension is active (undefined
/// tensor).
Tensor routing_regularization(const Tensor& a_prime);

/// Training phase; decides which auxiliary losses may carry weight.
///   plain        no auxiliaries (evaluation, ablations)
///   pretrain     balancing loss only
///   concentrate  concentration loss only (specialization finetuning)
///   extend       routing regularization only (new modules present)
enum class Phase { plain, pretrain, concentrate, extend };

struct LossWeights {
  double mi = 0.01;
  double concentration = 0.001;
  double routing_reg = 0.0;
};

/// Extension-penalty strengths exposed as presets; 0 disables.
inline constexpr double kRoutingRegPresets[] = {0.0, 0.25, 0.5, 1.0};

/// Differentiable pieces of one training step's objective. Per-layer
/// auxiliary terms are averaged, not summed, so weights stay comparable
/// across depths.
struct LossTerms {
  Tensor lm;                          // scalar
  std::vector<Tensor> mi;             // one scalar per layer
  std::vector<Tensor> concentration;  // one scalar per layer
  Tensor routing_reg;                 // scalar; defined only in extend phase
};

/// lm + w_mi * mean(mi) + w_conc * mean(concentration) + w_reg * reg.
/// ConfigError on a negative weight or a weight the phase does not admit;
/// ContractError when a weighted term is missing.
Tensor total_loss(const LossTerms& terms, const LossWeights& weights, Phase phase);

/// Plain-number snapshot of one step's losses for the metrics log.
/// total reproduces total_loss bit for bit.
struct LossReport {
  double lm = 0.0;
  std::vector<double> mi;
  std::vector<double> concentration;
  double routing_reg = 0.0;
  double total = 0.0;
};

/// Evaluates the report without recording anything on the caller's tape.
LossReport loss_report(const LossTerms& terms, const LossWeights& weights, Phase phase);

} // namespace modlm
