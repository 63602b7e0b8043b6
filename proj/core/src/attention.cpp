// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/attention.hpp"

namespace modlm {

MoALayer make_moa_layer(std::size_t n_heads, std::size_t d_emb, std::size_t d_att,
                        std::size_t d_rtr, std::size_t top_k, double weight_std,
                        double out_proj_scale, Rng& rng) {
  if (n_heads == 0) throw ConfigError("make_moa_layer: need at least one head");
  if (top_k < 1 || top_k > n_heads) {
    throw ConfigError("make_moa_layer: top-k out of range");
  }
  MoALayer layer;
  layer.router = make_router(n_heads, d_rtr, d_emb, weight_std, rng);
  layer.w_k = randn({d_emb, d_att}, rng, weight_std);
  layer.w_v = randn({d_emb, d_att}, rng, weight_std);
  layer.w_k.set_requires_grad(true);
  layer.w_v.set_requires_grad(true);
  layer.top_k = top_k;
  for (std::size_t h = 0; h < n_heads; ++h) {
    StickBreakingHead head;
    head.w_q = randn({d_emb, d_att}, rng, weight_std);
    head.w_o = randn({d_emb, d_att}, rng, weight_std * out_proj_scale);
    head.w_q.set_requires_grad(true);
    head.w_o.set_requires_grad(true);
    head.w_k = layer.w_k;
    head.w_v = layer.w_v;
    layer.heads.push_back(std::move(head));
  }
  return layer;
}

Tensor stick_breaking_weights_at(const Tensor& q, const Tensor& k,
                                 const std::vector<std::size_t>& positions,
                                 double logit_clamp) {
  if (q.rank() != 2 || k.rank() != 2 || q.size(1) != k.size(1)) {
    throw ShapeError("stick_breaking_weights: queries " + shape_str(q.shape()) +
                     " vs keys " + shape_str(k.shape()));
  }
  const std::size_t g_len = q.size(0), s_len = k.size(0);
  if (positions.size() != g_len) {
    throw ShapeError("stick_breaking_weights: one position per query required");
  }
  for (std::size_t pos : positions) {
    if (pos >= s_len) {
      throw ShapeError("stick_breaking_weights: query position " + std::to_string(pos) +
                       " beyond " + std::to_string(s_len) + " keys");
    }
  }
  Tensor z = matmul_nt(q, k);
  if (logit_clamp > 0.0) z = clamp_elem(z, -logit_clamp, logit_clamp);
  auto [log_b, log_1mb] = stable_log_sigmoid_pair(z);
  // mask admits keys up to and including the query's own position.
  Tensor mask = Tensor::zeros({g_len, s_len});
  for (std::size_t r = 0; r < g_len; ++r) {
    double* row = mask.data() + r * s_len;
    for (std::size_t i = 0; i <= positions[r]; ++i) row[i] = 1.0;
  }
  // log p(i) = log beta(i) + sum over i < j <= t of log(1 - beta(j)); the
  // masked suffix scan supplies the second term, and the final mask zeroes
  // the acausal entries that exp() would otherwise revive.
  Tensor tail = reversed_cumsum_exclusive(mul(log_1mb, mask), 1);
  return mul(exp_elem(add(log_b, tail)), mask);
}

Tensor stick_breaking_weights(const Tensor& q, const Tensor& k, std::size_t causal_offset,
                              double logit_clamp) {
  if (q.rank() != 2 || k.rank() != 2) {
    throw ShapeError("stick_breaking_weights: rank-2 queries and keys required");
  }
  if (causal_offset + q.size(0) != k.size(0)) {
    throw ShapeError("stick_breaking_weights: offset " + std::to_string(causal_offset) +
                     " plus " + std::to_string(q.size(0)) + " queries must equal " +
                     std::to_string(k.size(0)) + " keys");
  }
  std::vector<std::size_t> positions(q.size(0));
  for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = causal_offset + t;
  return stick_breaking_weights_at(q, k, positions, logit_clamp);
}

Tensor head_forward(const StickBreakingHead& head, const Tensor& x,
                    const SegmentCache& cache, double logit_clamp) {
  Tensor q = matmul(x, head.w_q);
  Tensor kc = matmul(x, head.w_k);
  Tensor vc = matmul(x, head.w_v);
  Tensor kk = cache.empty() ? kc : concat_rows(cache.keys, kc);
  Tensor vv = cache.empty() ? vc : concat_rows(cache.values, vc);
  Tensor p = stick_breaking_weights(q, kk, cache.length(), logit_clamp);
  return matmul_nt(matmul(p, vv), head.w_o);
}

MoAResult moa_forward(const MoALayer& layer, const Tensor& x, const SegmentCache& cache) {
  const std::size_t t_len = x.size(0), d_emb = x.size(1);
  GateDecision gate = route(layer.router, x, layer.top_k);
  if (gate.module_count() != layer.heads.size()) {
    throw ContractError("moa_forward: router arity " +
                        std::to_string(gate.module_count()) + " vs " +
                        std::to_string(layer.heads.size()) + " heads");
  }
  // Shared across heads, computed once whatever the routing picks.
  Tensor kc = matmul(x, layer.w_k);
  Tensor vc = matmul(x, layer.w_v);
  Tensor kk = cache.empty() ? kc : concat_rows(cache.keys, kc);
  Tensor vv = cache.empty() ? vc : concat_rows(cache.values, vc);
  const std::size_t off = cache.length();

  std::vector<std::vector<std::size_t>> rows(layer.heads.size());
  std::vector<std::vector<std::size_t>> slots(layer.heads.size());
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < gate.k; ++j) {
      const std::uint32_t m = gate.selected[t * gate.k + j];
      rows[m].push_back(t);
      slots[m].push_back(t * gate.k + j);
    }
  }
  Tensor y;
  for (std::size_t m = 0; m < layer.heads.size(); ++m) {
    if (rows[m].empty()) continue;
    Tensor xs = gather_rows(x, rows[m]);
    Tensor q = matmul(xs, layer.heads[m].w_q);
    std::vector<std::size_t> positions(rows[m].size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = off + rows[m][i];
    Tensor p = stick_breaking_weights_at(q, kk, positions, layer.logit_clamp);
    Tensor o = matmul_nt(matmul(p, vv), layer.heads[m].w_o);
    layer.head_evaluations += rows[m].size();
    Tensor w = gather_entries(gate.gates, slots[m]);
    Tensor contrib = scatter_add_rows(mul_colvec(o, w), rows[m], t_len);
    y = y.defined() ? add(y, contrib) : contrib;
  }
  if (!y.defined()) y = Tensor::zeros({t_len, d_emb});
  return {y, gate, kc, vc};
}

SegmentCache update_cache(const SegmentCache&, const Tensor& k_new, const Tensor& v_new) {
  if (k_new.rank() != 2 || k_new.shape() != v_new.shape()) {
    throw ShapeError("update_cache: keys " + shape_str(k_new.shape()) +
                     " and values " + shape_str(v_new.shape()) + " must match");
  }
  SegmentCache next;
  next.keys = k_new.detach();
  next.values = v_new.detach();
  return next;
}

void insert_heads(MoALayer& layer, const InsertSpec& spec, Rng& rng) {
  if (spec.n_new == 0) return;
  layer.router.absorb_extension();
  layer.router.a.set_requires_grad(false);
  layer.router.b.set_requires_grad(false);
  layer.w_k.set_requires_grad(false);
  layer.w_v.set_requires_grad(false);
  for (StickBreakingHead& h : layer.heads) {
    h.w_q.set_requires_grad(false);
    h.w_o.set_requires_grad(false);
  }
  const std::size_t d_emb = layer.w_k.size(0), d_att = layer.w_k.size(1);
  for (std::size_t i = 0; i < spec.n_new; ++i) {
    StickBreakingHead h;
    h.w_q = randn({d_emb, d_att}, rng, spec.weight_std);
    h.w_o = randn({d_emb, d_att}, rng, spec.weight_std * spec.out_proj_scale);
    h.w_q.set_requires_grad(true);
    h.w_o.set_requires_grad(true);
    h.w_k = layer.w_k;
    h.w_v = layer.w_v;
    layer.heads.push_back(std::move(h));
  }
  layer.router.a_ext =
      randn({spec.n_new, layer.router.hidden()}, rng, spec.router_scale * spec.weight_std);
  layer.router.a_ext.set_requires_grad(true);
}

} // namespace modlm
