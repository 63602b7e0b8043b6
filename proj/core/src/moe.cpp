// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/moe.hpp"

#include <algorithm>
#include <cstdio>

namespace modlm {

void Router::absorb_extension() {
  if (!a_ext.defined()) return;
  std::vector<double> vals = a.values();
  vals.insert(vals.end(), a_ext.values().begin(), a_ext.values().end());
  Tensor merged = Tensor::from_values({a.size(0) + a_ext.size(0), a.size(1)},
                                      std::move(vals));
  merged.set_requires_grad(a.requires_grad() || a_ext.requires_grad());
  a = merged;
  a_ext = Tensor();
}

Router make_router(std::size_t modules, std::size_t hidden, std::size_t d_emb,
                   double init_std, Rng& rng) {
  Router r;
  r.a = randn({modules, hidden}, rng, init_std);
  r.b = randn({hidden, d_emb}, rng, init_std);
  r.a.set_requires_grad(true);
  r.b.set_requires_grad(true);
  return r;
}

GateDecision route(const Router& router, const Tensor& x, std::size_t k) {
  const std::size_t n = router.modules();
  if (k < 1 || k > n) {
    throw ConfigError("route: top-k " + std::to_string(k) + " out of range for " +
                      std::to_string(n) + " modules");
  }
  if (router.a_ext.defined() && router.a_ext.size(1) != router.a.size(1)) {
    throw ShapeError("route: extension hidden width differs from base");
  }
  Tensor r = relu(matmul_nt(x, router.b));
  Tensor full_a =
      router.a_ext.defined() ? concat_rows(router.a, router.a_ext) : router.a;
  Tensor pi = softmax(matmul_nt(r, full_a), 1);
  GateDecision g;
  g.pi = pi;
  g.selected = topk_rows(pi, k);
  g.gates = gather_cols_per_row(pi, g.selected, k);
  g.k = k;
  return g;
}

Tensor expert_forward(const FFDExpert& expert, const Tensor& x) {
  return matmul_nt(gelu(matmul_nt(x, expert.w_in)), expert.w_out);
}

namespace {

// Token groups per module, from a gate decision: which rows each module
// serves and where their gate values sit in the flat [T x k] gate tensor.
struct Dispatch {
  std::vector<std::vector<std::size_t>> rows;
  std::vector<std::vector<std::size_t>> gate_slots;
};

Dispatch group_by_module(const GateDecision& gate, std::size_t n_modules) {
  Dispatch d;
  d.rows.resize(n_modules);
  d.gate_slots.resize(n_modules);
  const std::size_t t_len = gate.tokens(), k = gate.k;
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint32_t m = gate.selected[t * k + j];
      d.rows[m].push_back(t);
      d.gate_slots[m].push_back(t * k + j);
    }
  }
  return d;
}

} // namespace

SMoELayer make_smoe_layer(std::size_t n_experts, std::size_t d_emb, std::size_t d_ffd,
                          std::size_t d_rtr, std::size_t top_k, double weight_std,
                          double out_proj_scale, Rng& rng) {
  if (n_experts == 0) throw ConfigError("make_smoe_layer: need at least one expert");
  if (top_k < 1 || top_k > n_experts) {
    throw ConfigError("make_smoe_layer: top-k out of range");
  }
  SMoELayer layer;
  layer.router = make_router(n_experts, d_rtr, d_emb, weight_std, rng);
  layer.top_k = top_k;
  for (std::size_t m = 0; m < n_experts; ++m) {
    FFDExpert e;
    e.w_in = randn({d_ffd, d_emb}, rng, weight_std);
    e.w_out = randn({d_emb, d_ffd}, rng, weight_std * out_proj_scale);
    e.w_in.set_requires_grad(true);
    e.w_out.set_requires_grad(true);
    layer.experts.push_back(std::move(e));
  }
  return layer;
}

SMoEResult smoe_forward(const SMoELayer& layer, const Tensor& x) {
  const std::size_t t_len = x.size(0), d_emb = x.size(1);
  GateDecision gate = route(layer.router, x, layer.top_k);
  if (gate.module_count() != layer.experts.size()) {
    throw ContractError("smoe_forward: router arity " +
                        std::to_string(gate.module_count()) + " vs " +
                        std::to_string(layer.experts.size()) + " experts");
  }
  Dispatch d = group_by_module(gate, layer.experts.size());
  Tensor y;
  for (std::size_t m = 0; m < layer.experts.size(); ++m) {
    if (d.rows[m].empty()) continue;
    Tensor xs = gather_rows(x, d.rows[m]);
    Tensor ys = expert_forward(layer.experts[m], xs);
    layer.expert_evaluations += d.rows[m].size();
    Tensor w = gather_entries(gate.gates, d.gate_slots[m]);
    Tensor contrib = scatter_add_rows(mul_colvec(ys, w), d.rows[m], t_len);
    y = y.defined() ? add(y, contrib) : contrib;
  }
  if (!y.defined()) y = Tensor::zeros({t_len, d_emb});
  return {y, gate};
}

// ---------------------------------------------------------------------------
// Usage statistics

std::vector<double> UsageStats::normalized_frequency() const {
  std::vector<double> f(counts.size(), 0.0);
  std::uint64_t cmax = 0;
  for (std::uint64_t c : counts) cmax = std::max(cmax, c);
  if (cmax == 0) return f;
  for (std::size_t m = 0; m < counts.size(); ++m) {
    f[m] = static_cast<double>(counts[m]) / static_cast<double>(cmax);
  }
  return f;
}

void accumulate_usage(UsageStats& stats, const GateDecision& gate) {
  if (stats.counts.empty()) stats.counts.assign(gate.module_count(), 0);
  if (stats.counts.size() != gate.module_count()) {
    throw ContractError("accumulate_usage: stats track " +
                        std::to_string(stats.counts.size()) + " modules, gate has " +
                        std::to_string(gate.module_count()));
  }
  for (std::uint32_t m : gate.selected) {
    if (m >= stats.counts.size()) {
      throw ContractError("accumulate_usage: module index out of range");
    }
    ++stats.counts[m];
  }
  stats.token_total += gate.tokens();
}

std::string usage_table(const UsageStats& stats, const std::string& title) {
  std::string out = title + "\n";
  out += "module      count  frequency\n";
  out += "------  ---------  ---------\n";
  const std::vector<double> f = stats.normalized_frequency();
  char line[64];
  for (std::size_t m = 0; m < stats.counts.size(); ++m) {
    std::snprintf(line, sizeof line, "%6zu  %9llu  %9.4f\n", m,
                  static_cast<unsigned long long>(stats.counts[m]), f[m]);
    out += line;
  }
  std::snprintf(line, sizeof line, "tokens  %9llu\n",
                static_cast<unsigned long long>(stats.token_total));
  out += line;
  return out;
}

// ---------------------------------------------------------------------------
// Lifecycle

void insert_experts(SMoELayer& layer, const InsertSpec& spec, Rng& rng) {
  if (spec.n_new == 0) return;
  if (layer.experts.empty()) throw ContractError("insert_experts: layer has no experts");
  layer.router.absorb_extension();
  layer.router.a.set_requires_grad(false);
  layer.router.b.set_requires_grad(false);
  for (FFDExpert& e : layer.experts) {
    e.w_in.set_requires_grad(false);
    e.w_out.set_requires_grad(false);
  }
  const std::size_t d_ffd = layer.experts[0].w_in.size(0);
  const std::size_t d_emb = layer.experts[0].w_in.size(1);
  for (std::size_t i = 0; i < spec.n_new; ++i) {
    FFDExpert e;
    e.w_in = randn({d_ffd, d_emb}, rng, spec.weight_std);
    e.w_out = randn({d_emb, d_ffd}, rng, spec.weight_std * spec.out_proj_scale);
    e.w_in.set_requires_grad(true);
    e.w_out.set_requires_grad(true);
    layer.experts.push_back(std::move(e));
  }
  layer.router.a_ext =
      randn({spec.n_new, layer.router.hidden()}, rng, spec.router_scale * spec.weight_std);
  layer.router.a_ext.set_requires_grad(true);
}

std::vector<std::size_t> prune_experts(SMoELayer& layer, const UsageStats& stats,
                                       double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ConfigError("prune_experts: tau must lie in [0, 1)");
  }
  if (stats.token_total == 0) {
    throw ConfigError("prune_experts: usage statistics cover no tokens");
  }
  const std::size_t n = layer.experts.size();
  if (stats.counts.size() != n) {
    throw ContractError("prune_experts: stats track " +
                        std::to_string(stats.counts.size()) + " modules, layer has " +
                        std::to_string(n));
  }
  std::uint64_t cmax = 0;
  for (std::uint64_t c : stats.counts) cmax = std::max(cmax, c);
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < n; ++m) {
    const std::uint64_t c = stats.counts[m];
    if (c > 0 && static_cast<double>(c) / static_cast<double>(cmax) >= tau) {
      keep.push_back(m);
    }
  }
  if (keep.size() < layer.top_k) {
    throw ConfigError("prune_experts: refusing, only " + std::to_string(keep.size()) +
                      " experts would survive but top-k needs " +
                      std::to_string(layer.top_k));
  }
  if (keep.size() == n) return keep;
  layer.router.absorb_extension();
  std::vector<FFDExpert> kept;
  kept.reserve(keep.size());
  for (std::size_t m : keep) kept.push_back(std::move(layer.experts[m]));
  layer.experts = std::move(kept);

  const std::size_t h = layer.router.hidden();
  std::vector<double> rows;
  rows.reserve(keep.size() * h);
  const std::vector<double>& av = layer.router.a.values();
  for (std::size_t m : keep) {
    rows.insert(rows.end(), av.begin() + static_cast<std::ptrdiff_t>(m * h),
                av.begin() + static_cast<std::ptrdiff_t>((m + 1) * h));
  }
  Tensor na = Tensor::from_values({keep.size(), h}, std::move(rows));
  na.set_requires_grad(layer.router.a.requires_grad());
  layer.router.a = na;
  return keep;
}

} // namespace modlm
