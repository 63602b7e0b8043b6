// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/diagnostics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "modlm/attention.hpp"
#include "modlm/error.hpp"
#include "modlm/model.hpp"
#include "modlm/objectives.hpp"
#include "modlm/ops.hpp"
#include "modlm/random.hpp"

namespace modlm {

namespace {

constexpr double kSmoothing = 1e-6;

std::vector<double> smoothed_distribution(const UsageStats& stats) {
  std::uint64_t total = 0;
  for (std::uint64_t c : stats.counts) total += c;
  if (total == 0) throw ConfigError("divergence: domain with zero selections");
  const std::size_t n = stats.counts.size();
  std::vector<double> p(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double f = static_cast<double>(stats.counts[m]) / static_cast<double>(total);
    p[m] = (f + kSmoothing) / (1.0 + kSmoothing * static_cast<double>(n));
  }
  return p;
}

double sigmoid_clamped(double z, double clamp) {
  const double zc = std::min(clamp, std::max(-clamp, z));
  return 1.0 / (1.0 + std::exp(-zc));
}

struct Checker {
  std::ostringstream text;
  bool ok = true;

  void note(bool pass, const std::string& name, const std::string& detail = "") {
    ok = ok && pass;
    text << (pass ? "ok   " : "FAIL ") << name;
    if (!pass && !detail.empty()) text << "  (" << detail << ")";
    text << '\n';
  }
};

void check_stick_breaking(Checker& c, Rng& rng) {
  double worst_mass = 0.0, worst_direct = 0.0;
  bool causal = true;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t T = 3 + rng.below(8);
    const std::size_t D = 2 + rng.below(5);
    const std::size_t prev = rng.below(4);
    const Tensor q = randn({T, D}, rng, 1.0);
    const Tensor k = randn({prev + T, D}, rng, 1.0);
    const Tensor p = stick_breaking_weights(q, k, prev);
    for (std::size_t t = 0; t < T; ++t) {
      double mass = 0.0, tail = 1.0;
      for (std::size_t i = 0; i < prev + T; ++i) {
        if (i > prev + t && p.at(t, i) != 0.0) causal = false;
      }
      // Walk keys newest to oldest: each beta takes its share of what is left.
      std::vector<double> beta(prev + t + 1);
      for (std::size_t i = 0; i <= prev + t; ++i) {
        double z = 0.0;
        for (std::size_t d = 0; d < D; ++d) z += q.at(t, d) * k.at(i, d);
        beta[i] = sigmoid_clamped(z, 30.0);
      }
      for (std::size_t i = 0; i <= prev + t; ++i) {
        mass += p.at(t, i);
        tail *= 1.0 - beta[i];
      }
      worst_mass = std::max(worst_mass, std::abs(mass - (1.0 - tail)));
      for (std::size_t i = 0; i <= prev + t; ++i) {
        double direct = beta[i];
        for (std::size_t j = i + 1; j <= prev + t; ++j) direct *= 1.0 - beta[j];
        worst_direct = std::max(worst_direct, std::abs(direct - p.at(t, i)));
      }
    }
  }
  c.note(causal, "attention weights vanish after the query position");
  c.note(worst_mass < 1e-10, "attention mass matches the unallocated-stick identity",
         "max_err=" + std::to_string(worst_mass));
  c.note(worst_direct < 1e-10, "log-space weights match the direct product",
         "max_err=" + std::to_string(worst_direct));
}

void check_loss_extremes(Checker& c) {
  const std::size_t T = 8, N = 4;
  std::vector<double> uni(T * N, 1.0 / static_cast<double>(N));
  const Tensor uniform = Tensor::from_values({T, N}, std::move(uni));
  std::vector<double> det(T * N, 0.0);
  for (std::size_t t = 0; t < T; ++t) det[t * N + t % N] = 1.0;
  const Tensor rotating = Tensor::from_values({T, N}, std::move(det));
  std::vector<double> one(T * N, 0.0);
  for (std::size_t t = 0; t < T; ++t) one[t * N] = 1.0;
  const Tensor pinned = Tensor::from_values({T, N}, std::move(one));

  const double ln_n = std::log(static_cast<double>(N));
  c.note(std::abs(mi_loss(uniform).item()) < 1e-12, "balancing loss vanishes at uniform");
  c.note(std::abs(mi_loss(rotating).item() + ln_n) < 1e-12,
         "balancing loss bottoms out for balanced deterministic routing");
  c.note(concentration_loss(pinned).item() == 0.0,
         "concentration loss vanishes when one module takes every token");
  c.note(std::abs(concentration_loss(rotating).item() - ln_n) < 1e-12,
         "concentration loss peaks at a uniform marginal");
}

void check_sparse_accounting(Checker& c, Rng& rng) {
  SMoELayer layer = make_smoe_layer(6, 8, 16, 4, 2, 0.05, 1.0, rng);
  const Tensor x = randn({10, 8}, rng, 1.0);
  const std::uint64_t before = layer.expert_evaluations;
  const SMoEResult r = smoe_forward(layer, x);
  c.note(layer.expert_evaluations - before == 2 * 10,
         "sparse dispatch evaluates exactly top_k experts per token");
  double row_max_sum = 0.0;
  for (std::size_t t = 0; t < 10; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < 2; ++j) s += r.gate.gates.at(t, j);
    row_max_sum = std::max(row_max_sum, s);
  }
  c.note(row_max_sum <= 1.0 + 1e-12, "unrenormalized gates never exceed full mass");
}

void check_gradients(Checker& c, Rng& rng) {
  const Tensor probe = randn({6, 4}, rng, 1.0);
  const double mi_err = finite_difference_check(
      [](const Tensor& t) { return mi_loss(softmax(t, 1)); }, probe, 0x1.0p-13);
  c.note(mi_err < 1e-6, "balancing loss gradient matches finite differences",
         "err=" + std::to_string(mi_err));

  SMoELayer layer = make_smoe_layer(4, 6, 12, 4, 2, 0.3, 1.0, rng);
  const Tensor x = randn({5, 6}, rng, 0.5);
  const double moe_err = finite_difference_check(
      [&](const Tensor&) { return mean(square(smoe_forward(layer, x).y)); },
      layer.router.a, 0x1.0p-13, {0, 6, 15});
  c.note(moe_err < 1e-4, "expert-mixture gradient matches finite differences",
         "err=" + std::to_string(moe_err));
}

void check_byte_codec(Checker& c, Rng& rng) {
  std::string blob(64, '\0');
  for (char& ch : blob) ch = static_cast<char>(rng.below(256));
  const std::vector<std::uint32_t> toks = byte_tokenize(blob);
  c.note(byte_detokenize(toks) == blob && toks.size() == blob.size(),
         "byte codec round trips raw bytes");
}

} // namespace

std::vector<std::vector<double>> expert_distribution_divergence(
    const std::vector<std::vector<UsageStats>>& stats_by_domain) {
  const std::size_t domains = stats_by_domain.size();
  if (domains < 2) throw ConfigError("divergence: need at least two domains");
  const std::size_t layers = stats_by_domain[0].size();
  if (layers == 0) throw ConfigError("divergence: need at least one layer");
  for (const auto& per_layer : stats_by_domain) {
    if (per_layer.size() != layers) {
      throw ConfigError("divergence: domains disagree on layer count");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (per_layer[l].token_total == 0) {
        throw ConfigError("divergence: domain with zero tokens");
      }
      if (per_layer[l].counts.size() != stats_by_domain[0][l].counts.size()) {
        throw ConfigError("divergence: domains disagree on expert count");
      }
    }
  }

  std::vector<std::vector<double>> matrix(domains, std::vector<double>(domains, 0.0));
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<std::vector<double>> p;
    p.reserve(domains);
    for (std::size_t d = 0; d < domains; ++d) {
      p.push_back(smoothed_distribution(stats_by_domain[d][l]));
    }
    for (std::size_t i = 0; i < domains; ++i) {
      for (std::size_t j = 0; j < domains; ++j) {
        double kl = 0.0;
        for (std::size_t m = 0; m < p[i].size(); ++m) {
          kl += p[i][m] * std::log(p[i][m] / p[j][m]);
        }
        matrix[i][j] += kl / static_cast<double>(layers);
      }
    }
  }
  return matrix;
}

std::string divergence_table(const std::vector<std::vector<double>>& matrix,
                             const std::vector<std::string>& names) {
  if (names.size() != matrix.size()) {
    throw ConfigError("divergence_table: one name per domain required");
  }
  std::ostringstream out;
  out << std::setw(12) << "";
  for (const std::string& n : names) out << std::setw(12) << n;
  out << '\n';
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << std::setw(12) << names[i];
    for (double v : matrix[i]) {
      out << std::setw(12) << std::fixed << std::setprecision(6) << v;
    }
    out << '\n';
  }
  return out.str();
}

CheckReport run_self_check(std::uint64_t seed) {
  Rng rng(seed);
  Checker c;
  check_stick_breaking(c, rng);
  check_loss_extremes(c);
  check_sparse_accounting(c, rng);
  check_gradients(c, rng);
  check_byte_codec(c, rng);
  CheckReport report;
  report.ok = c.ok;
  report.text = c.text.str();
  return report;
}

} // namespace modlm
