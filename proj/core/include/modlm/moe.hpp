// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modlm/ops.hpp"
#include "modlm/random.hpp"
#include "modlm/tensor.hpp"

namespace modlm {

/// Two-layer routing network h(x) = A relu(B x). A holds one embedding row
/// per module; a trained block can be extended with extra rows (a_ext) while
/// A and B stay frozen, which confines router learning to the new modules.
struct Router {
  Tensor a;      // [N_base x D_rtr]
  Tensor b;      // [D_rtr x D_emb]
  Tensor a_ext;  // [N_new x D_rtr]; undefined when no extension is active

  std::size_t base_modules() const { return a.size(0); }
  std::size_t modules() const {
    return a.size(0) + (a_ext.defined() ? a_ext.size(0) : 0);
  }
  std::size_t hidden() const { return a.size(1); }

  /// Folds the extension rows into the base block (values preserved,
  /// trainability of the base block preserved).
  void absorb_extension();
};

Router make_router(std::size_t modules, std::size_t hidden, std::size_t d_emb,
                   double init_std, Rng& rng);

/// Routing result for one [T x D_emb] input.
struct GateDecision {
  /// Full pre-selection distribution over modules, [T x N]; rows sum to 1.
  Tensor pi;
  /// Per token, the k selected module indices in rank order (T*k flat).
  std::vector<std::uint32_t> selected;
  /// Gate values at the selected indices, [T x k]. These are the raw pi
  /// entries: masking to the top k does not renormalize.
  Tensor gates;
  std::size_t k = 0;

  std::size_t tokens() const { return pi.size(0); }
  std::size_t module_count() const { return pi.size(1); }
};

GateDecision route(const Router& router, const Tensor& x, std::size_t k);

/// One feed-forward expert: expansion, gelu, projection back.
struct FFDExpert {
  Tensor w_in;   // [D_ffd x D_emb]
  Tensor w_out;  // [D_emb x D_ffd]
};

Tensor expert_forward(const FFDExpert& expert, const Tensor& x);

struct SMoELayer {
  Router router;
  std::vector<FFDExpert> experts;
  std::size_t top_k = 1;
  /// Running count of (token, expert) evaluations, for the sparsity audit:
  /// each forward adds exactly top_k per token.
  mutable std::uint64_t expert_evaluations = 0;
};

struct SMoEResult {
  Tensor y;  // [T x D_emb]
  GateDecision gate;
};

/// Sparse mixture evaluation: only the selected experts run, on gathered
/// token batches, and their outputs are gate-weighted and scattered back.
SMoEResult smoe_forward(const SMoELayer& layer, const Tensor& x);

/// Fresh trainable layer; out_proj_scale shrinks the output projections so
/// residual streams stay well conditioned at depth.
SMoELayer make_smoe_layer(std::size_t n_experts, std::size_t d_emb, std::size_t d_ffd,
                          std::size_t d_rtr, std::size_t top_k, double weight_std,
                          double out_proj_scale, Rng& rng);

// ---------------------------------------------------------------------------
// Usage statistics and module lifecycle

struct UsageStats {
  std::vector<std::uint64_t> counts;
  std::uint64_t token_total = 0;

  /// Per-module frequency normalized by the layer's maximum, the pruning
  /// criterion. All zeros when nothing was counted.
  std::vector<double> normalized_frequency() const;
};

void accumulate_usage(UsageStats& stats, const GateDecision& gate);

/// Fixed-width text table: module, count, normalized frequency.
std::string usage_table(const UsageStats& stats, const std::string& title);

struct InsertSpec {
  std::size_t n_new = 0;
  /// Std-dev for fresh expert weights; matches pretraining initialization.
  double weight_std = 0.02;
  /// Extra multiplier on the output projection (residual-depth scaling).
  double out_proj_scale = 1.0;
  /// Router extension rows start at router_scale * weight_std so new modules
  /// begin with low routing probability.
  double router_scale = 0.01;
};

/// Appends n_new fresh experts and router extension rows; freezes the base
/// router block and every pre-existing expert. n_new = 0 is a no-op that
/// freezes nothing.
void insert_experts(SMoELayer& layer, const InsertSpec& spec, Rng& rng);

/// Drops experts whose max-normalized usage frequency falls below tau (and
/// all never-used experts), deleting their router rows. Refuses to drop below
/// top_k survivors. Returns the surviving module indices in original order.
std::vector<std::size_t> prune_experts(SMoELayer& layer, const UsageStats& stats,
                                       double tau);

} // namespace modlm
