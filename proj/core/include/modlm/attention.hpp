// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "modlm/moe.hpp"
#include "modlm/tensor.hpp"

namespace modlm {

/// One attention head with stick-breaking weights. w_q and w_o are owned per
/// head; w_k and w_v alias the layer-shared projections (same storage across
/// every head of a layer).
struct StickBreakingHead {
  Tensor w_q;  // [D_emb x D_att]
  Tensor w_o;  // [D_emb x D_att]
  Tensor w_k;  // shared [D_emb x D_att]
  Tensor w_v;  // shared [D_emb x D_att]
};

/// Keys/values of the previous segment, gradient-detached. Empty before the
/// first segment.
struct SegmentCache {
  Tensor keys;    // [T_prev x D_att]
  Tensor values;  // [T_prev x D_att]

  bool empty() const { return !keys.defined(); }
  std::size_t length() const { return empty() ? 0 : keys.size(0); }
};

struct MoALayer {
  Router router;
  Tensor w_k;  // shared [D_emb x D_att]
  Tensor w_v;  // shared [D_emb x D_att]
  std::vector<StickBreakingHead> heads;
  std::size_t top_k = 1;
  /// Attention logits are clamped to [-logit_clamp, logit_clamp] before the
  /// log-sigmoid; non-positive disables the guard.
  double logit_clamp = 30.0;
  /// Running count of (token, head) evaluations, mirroring the expert
  /// evaluation audit.
  mutable std::uint64_t head_evaluations = 0;

  std::size_t d_att() const { return w_k.size(1); }
};

MoALayer make_moa_layer(std::size_t n_heads, std::size_t d_emb, std::size_t d_att,
                        std::size_t d_rtr, std::size_t top_k, double weight_std,
                        double out_proj_scale, Rng& rng);

/// Attention weights p [T x (T_prev+T)] where query row t sits at absolute
/// position causal_offset + t among the keys. Each weight is the query's
/// affinity beta at that key times the product of (1 - beta) over every later
/// key up to the query position, evaluated in log space; entries after the
/// query position are exactly zero, and each row sums to at most 1 (any
/// remaining stick mass attends to nothing).
Tensor stick_breaking_weights(const Tensor& q, const Tensor& k, std::size_t causal_offset,
                              double logit_clamp = 30.0);

/// Same computation with an explicit absolute position per query row; used
/// by the sparse per-head path where a head sees a non-contiguous token set.
Tensor stick_breaking_weights_at(const Tensor& q, const Tensor& k,
                                 const std::vector<std::size_t>& positions,
                                 double logit_clamp = 30.0);

/// Full-sequence evaluation of one head over cache + current segment.
Tensor head_forward(const StickBreakingHead& head, const Tensor& x,
                    const SegmentCache& cache, double logit_clamp = 30.0);

struct MoAResult {
  Tensor y;  // [T x D_emb]
  GateDecision gate;
  /// Current segment's shared keys/values, for the caller's cache update.
  Tensor new_keys;    // [T x D_att]
  Tensor new_values;  // [T x D_att]
};

/// Mixture-of-heads evaluation: the router picks top_k heads per token, the
/// shared keys/values are computed once, and each selected head runs only on
/// its token group.
MoAResult moa_forward(const MoALayer& layer, const Tensor& x, const SegmentCache& cache);

/// Replacement-semantics cache update: the result holds detached copies of
/// the given keys/values and nothing from the previous cache.
SegmentCache update_cache(const SegmentCache& cache, const Tensor& k_new,
                          const Tensor& v_new);

/// Head-count extension mirroring insert_experts: fresh q/o projections
/// sharing the layer's (frozen) k/v, router extension rows, base frozen.
void insert_heads(MoALayer& layer, const InsertSpec& spec, Rng& rng);

} // namespace modlm
