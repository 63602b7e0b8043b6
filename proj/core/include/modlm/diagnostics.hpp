// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modlm/moe.hpp"

namespace modlm {

/// Pairwise divergence D(p_i || p_j) between per-domain expert selection
/// distributions, averaged over layers, with additive smoothing 1e-6 before
/// normalization. Needs at least two domains, matching layer/expert counts,
/// and a positive token total everywhere; ConfigError otherwise. The matrix
/// is generally asymmetric.
std::vector<std::vector<double>> expert_distribution_divergence(
    const std::vector<std::vector<UsageStats>>& stats_by_domain);

/// Fixed-width text rendering of the divergence matrix.
std::string divergence_table(const std::vector<std::vector<double>>& matrix,
                             const std::vector<std::string>& names);

/// Fast invariant and gradient smoke suite for the check subcommand: mass
/// conservation and the direct-product oracle for stick-breaking weights,
/// loss extremes, sparse-evaluation accounting, finite-difference spot
/// checks, and the byte codec. Seconds, not minutes.
struct CheckReport {
  bool ok = true;
  std::string text;
};
CheckReport run_self_check(std::uint64_t seed);

} // namespace modlm
