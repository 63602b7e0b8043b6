// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "modlm/diagnostics.hpp"

using namespace modlm;

namespace {

UsageStats make_stats(std::vector<std::uint64_t> counts, std::uint64_t k = 2) {
  UsageStats s;
  std::uint64_t total = 0;
  for (std::uint64_t c : counts) total += c;
  s.counts = std::move(counts);
  s.token_total = (total + k - 1) / k;
  return s;
}

// Independent reimplementation of the documented divergence: counts become a
// distribution, both sides get the same additive floor, and layers average.
double oracle_kl(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  const double eps = 1e-6;
  const std::size_t n = a.size();
  double ta = 0.0, tb = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    ta += static_cast<double>(a[m]);
    tb += static_cast<double>(b[m]);
  }
  double kl = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    const double pa = (a[m] / ta + eps) / (1.0 + eps * n);
    const double pb = (b[m] / tb + eps) / (1.0 + eps * n);
    kl += pa * std::log(pa / pb);
  }
  return kl;
}

} // namespace

TEST_CASE("identical domains have exactly zero divergence") {
  const std::vector<UsageStats> layers = {make_stats({10, 20, 30}),
                                          make_stats({1, 1, 98})};
  const auto d = expert_distribution_divergence({layers, layers});
  REQUIRE(d.size() == 2);
  REQUIRE(d[0].size() == 2);
  CHECK(d[0][0] == 0.0);
  CHECK(d[1][1] == 0.0);
  CHECK(d[0][1] == 0.0);  // log(p/p) is exactly zero termwise
  CHECK(d[1][0] == 0.0);
}

TEST_CASE("divergence matches a hand-rolled smoothed KL") {
  const std::vector<UsageStats> a = {make_stats({90, 10})};
  const std::vector<UsageStats> b = {make_stats({50, 50})};
  const auto d = expert_distribution_divergence({a, b});
  CHECK(d[0][1] == doctest::Approx(oracle_kl({90, 10}, {50, 50})).epsilon(1e-12));
  CHECK(d[1][0] == doctest::Approx(oracle_kl({50, 50}, {90, 10})).epsilon(1e-12));
  CHECK(d[0][1] != d[1][0]);  // KL is asymmetric
  CHECK(d[0][1] > 0.0);
}

TEST_CASE("divergence averages across layers") {
  const std::vector<UsageStats> a = {make_stats({90, 10}), make_stats({50, 50})};
  const std::vector<UsageStats> b = {make_stats({50, 50}), make_stats({90, 10})};
  const auto d = expert_distribution_divergence({a, b});
  const double expect =
      0.5 * (oracle_kl({90, 10}, {50, 50}) + oracle_kl({50, 50}, {90, 10}));
  CHECK(d[0][1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("specialized domains diverge more than resampled halves") {
  // Disjoint expert preferences vs two draws of the same preference.
  const std::vector<UsageStats> math = {make_stats({96, 2, 1, 1})};
  const std::vector<UsageStats> prose = {make_stats({1, 1, 2, 96})};
  const std::vector<UsageStats> prose2 = {make_stats({2, 1, 1, 96})};
  const auto d = expert_distribution_divergence({math, prose, prose2});
  CHECK(d[0][1] > 10.0 * d[1][2]);
  CHECK(d[1][0] > 10.0 * d[2][1]);
}

TEST_CASE("divergence refuses degenerate inputs") {
  const std::vector<UsageStats> ok = {make_stats({10, 20})};
  CHECK_THROWS_AS(expert_distribution_divergence({ok}), ConfigError);
  CHECK_THROWS_AS(expert_distribution_divergence({}), ConfigError);

  std::vector<UsageStats> empty_usage = {make_stats({0, 0})};
  empty_usage[0].token_total = 0;
  CHECK_THROWS_AS(expert_distribution_divergence({ok, empty_usage}), ConfigError);

  const std::vector<UsageStats> two_layers = {make_stats({10, 20}), make_stats({1, 2})};
  CHECK_THROWS_AS(expert_distribution_divergence({ok, two_layers}), ConfigError);

  const std::vector<UsageStats> wider = {make_stats({10, 20, 30})};
  CHECK_THROWS_AS(expert_distribution_divergence({ok, wider}), ConfigError);
}

TEST_CASE("the divergence table names its rows") {
  const std::vector<UsageStats> a = {make_stats({90, 10})};
  const std::vector<UsageStats> b = {make_stats({50, 50})};
  const auto d = expert_distribution_divergence({a, b});
  const std::string table = divergence_table(d, {"math", "prose"});
  CHECK(table.find("math") != std::string::npos);
  CHECK(table.find("prose") != std::string::npos);
  CHECK_THROWS_AS(divergence_table(d, {"math"}), ConfigError);
}

TEST_CASE("the self check passes on a fresh seed") {
  const CheckReport r = run_self_check(1);
  CHECK(r.ok);
  CHECK(r.text.find("FAIL") == std::string::npos);
  CHECK(r.text.find("ok") != std::string::npos);
}
