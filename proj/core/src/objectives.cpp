// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/objectives.hpp"

#include <cmath>
#include <string>

#include "modlm/ops.hpp"

namespace modlm {

namespace {

// A batch of routing distributions must be the full pre-selection softmax:
// nonnegative rows summing to 1. Gate rows (top-k masked) fail this check.
void require_distribution_rows(const Tensor& pi, const char* op) {
  if (pi.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected [tokens x modules], got " +
                     shape_str(pi.shape()));
  }
  const std::size_t t_len = pi.size(0), n = pi.size(1);
  for (std::size_t t = 0; t < t_len; ++t) {
    double row = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double v = pi.at(t, m);
      if (v < -1e-9) {
        throw ContractError(std::string(op) + ": negative probability at row " +
                            std::to_string(t));
      }
      row += v;
    }
    if (std::abs(row - 1.0) > 1e-6) {
      throw ContractError(std::string(op) + ": row " + std::to_string(t) +
                          " sums to " + std::to_string(row) + ", not 1");
    }
  }
}

// Averaged per-layer term; v must be nonempty.
Tensor layer_mean(const std::vector<Tensor>& v) {
  Tensor s = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) s = add(s, v[i]);
  return mul_scalar(s, 1.0 / static_cast<double>(v.size()));
}

void validate_weights(const LossTerms& terms, const LossWeights& w, Phase phase) {
  if (w.mi < 0.0 || w.concentration < 0.0 || w.routing_reg < 0.0) {
    throw ConfigError("total_loss: loss weights must be nonnegative");
  }
  const bool want_mi = w.mi > 0.0;
  const bool want_conc = w.concentration > 0.0;
  const bool want_reg = w.routing_reg > 0.0;
  switch (phase) {
    case Phase::plain:
      if (want_mi || want_conc || want_reg) {
        throw ConfigError("total_loss: plain phase admits no auxiliary weights");
      }
      break;
    case Phase::pretrain:
      if (want_conc || want_reg) {
        throw ConfigError(
            "total_loss: pretrain phase admits only the balancing weight");
      }
      break;
    case Phase::concentrate:
      if (want_mi || want_reg) {
        throw ConfigError(
            "total_loss: concentrate phase admits only the concentration weight");
      }
      break;
    case Phase::extend:
      if (want_mi || want_conc) {
        throw ConfigError(
            "total_loss: extend phase admits only the routing-extension weight");
      }
      break;
  }
  if (!terms.lm.defined()) {
    throw ContractError("total_loss: missing language-model term");
  }
  if (want_mi && terms.mi.empty()) {
    throw ContractError("total_loss: balancing weighted but no per-layer terms");
  }
  if (want_conc && terms.concentration.empty()) {
    throw ContractError("total_loss: concentration weighted but no per-layer terms");
  }
  if (want_reg && !terms.routing_reg.defined()) {
    throw ContractError("total_loss: extension penalty weighted but not computed");
  }
}

} // namespace

Tensor lm_cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("lm_cross_entropy: expected [tokens x vocab], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t t_len = logits.size(0), vocab = logits.size(1);
  if (targets.size() != t_len) {
    throw ContractError("lm_cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(t_len) + " rows");
  }
  for (std::uint32_t t : targets) {
    if (t >= vocab) {
      throw ContractError("lm_cross_entropy: target " + std::to_string(t) +
                          " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Tensor picked = gather_cols_per_row(log_softmax(logits, 1), targets, 1);
  return neg(mean(picked));
}

Tensor mi_loss(const Tensor& pi_batch) {
  require_distribution_rows(pi_batch, "mi_loss");
  // sum_m p(m) log p(m) - mean_x sum_m pi log pi, marginal p = row average.
  Tensor neg_marginal_entropy = sum(xlogx(mean_axis(pi_batch, 0)));
  Tensor neg_conditional_entropy = mean(sum_axis(xlogx(pi_batch), 1));
  return sub(neg_marginal_entropy, neg_conditional_entropy);
}

Tensor concentration_loss(const Tensor& pi_batch) {
  require_distribution_rows(pi_batch, "concentration_loss");
  return neg(sum(xlogx(mean_axis(pi_batch, 0))));
}

Tensor routing_regularization(const Tensor& a_prime) {
  if (!a_prime.defined()) {
    throw ContractError(
        "routing_regularization: no router extension is active");
  }
  return sum(square(a_prime));
}

Tensor total_loss(const LossTerms& terms, const LossWeights& weights, Phase phase) {
  validate_weights(terms, weights, phase);
  Tensor total = terms.lm;
  if (weights.mi > 0.0) {
    total = add(total, mul_scalar(layer_mean(terms.mi), weights.mi));
  }
  if (weights.concentration > 0.0) {
    total = add(total, mul_scalar(layer_mean(terms.concentration), weights.concentration));
  }
  if (weights.routing_reg > 0.0) {
    total = add(total, mul_scalar(terms.routing_reg, weights.routing_reg));
  }
  return total;
}

LossReport loss_report(const LossTerms& terms, const LossWeights& weights, Phase phase) {
  // A private tape absorbs the recombination so the caller's tape only ever
  // sees the one total_loss the training step actually backpropagates.
  TapeScope scope;
  LossReport r;
  r.total = total_loss(terms, weights, phase).item();
  r.lm = terms.lm.item();
  for (const Tensor& t : terms.mi) r.mi.push_back(t.item());
  for (const Tensor& t : terms.concentration) r.concentration.push_back(t.item());
  r.routing_reg = terms.routing_reg.defined() ? terms.routing_reg.item() : 0.0;
  return r;
}

} // namespace modlm
