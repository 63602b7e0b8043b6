// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "modlm/ops.hpp"
#include "modlm/random.hpp"
#include "modlm/tensor.hpp"

using namespace modlm;

namespace {

// ---------------------------------------------------------------------------
// Reference implementations. Deliberately naive: plain loops, no shared code
// with the library, so they can arbitrate.

std::vector<double> ref_matmul(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

std::vector<double> ref_transpose(const std::vector<double>& a, std::size_t rows,
                                  std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

std::vector<double> ref_softmax_row(const std::vector<double>& row) {
  double hi = row[0];
  for (double v : row) hi = std::max(hi, v);
  std::vector<double> out(row.size());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) z += (out[i] = std::exp(row[i] - hi));
  for (double& v : out) v /= z;
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  return randn(shape, rng, scale);
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor basics

TEST_CASE("tensor shapes, scalars and element access") {
  Tensor s = Tensor::scalar(2.5);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 2.5);

  Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 2) == 6.0);
  CHECK(t.at(0, 0) == 1.0);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK_THROWS_AS(t.at(2, 0), ShapeError);
  CHECK_THROWS_AS((void)Tensor::zeros({3, 0}), ShapeError);
  CHECK_THROWS_AS((void)Tensor::from_values({2, 2}, {1, 2, 3}), ShapeError);

  Tensor u;
  CHECK(!u.defined());
  CHECK_THROWS_AS((void)u.numel(), ContractError);
}

TEST_CASE("seeded rng streams repeat exactly and differ across seeds") {
  Rng a(1234), b(1234), c(99);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    double va = a.normal(), vb = b.normal();
    all_equal = all_equal && (va == vb);
    any_diff = any_diff || (va != c.normal());
  }
  CHECK(all_equal);
  CHECK(any_diff);
  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    double v = d.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(d.below(17) < 17);
  }
}

// ---------------------------------------------------------------------------
// Matrix products against the triple-loop reference

TEST_CASE("matmul family matches the naive reference") {
  Rng rng(42);
  const std::size_t shapes[][3] = {{1, 1, 1}, {2, 3, 4}, {5, 2, 7}, {16, 33, 9}, {64, 128, 32}};
  for (auto& s : shapes) {
    const std::size_t m = s[0], k = s[1], n = s[2];
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    std::vector<double> want = ref_matmul(a.values(), b.values(), m, k, n);
    CHECK(max_abs_diff(matmul(a, b).values(), want) < 1e-11);

    Tensor bt = Tensor::from_values({n, k}, ref_transpose(b.values(), k, n));
    CHECK(max_abs_diff(matmul_nt(a, bt).values(), want) < 1e-11);

    Tensor at = Tensor::from_values({k, m}, ref_transpose(a.values(), m, k));
    CHECK(max_abs_diff(matmul_tn(at, b).values(), want) < 1e-11);
  }
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({5, 6}, rng);
  CHECK_THROWS_AS((void)matmul(a, b), ShapeError);
  CHECK_THROWS_AS((void)matmul(a, Tensor::scalar(1.0)), ShapeError);
}

TEST_CASE("matmul is bitwise repeatable") {
  Rng rng(7);
  Tensor a = random_tensor({37, 53}, rng);
  Tensor b = random_tensor({53, 29}, rng);
  Tensor c1 = matmul(a, b);
  Tensor c2 = matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.numel() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// Softmax family

TEST_CASE("softmax matches the direct reference and normalizes rows") {
  Rng rng(3);
  Tensor x = random_tensor({6, 9}, rng, 3.0);
  Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> row(9), got(9);
    for (std::size_t c = 0; c < 9; ++c) {
      row[c] = x.at(r, c);
      got[c] = s.at(r, c);
    }
    CHECK(max_abs_diff(got, ref_softmax_row(row)) < 1e-14);
    double total = 0.0;
    for (double v : got) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax is shift invariant and handles extreme inputs") {
  Tensor x = Tensor::from_values({1, 3}, {1000.0, 1000.5, 999.0});
  Tensor s = softmax(x, 1);
  Tensor y = Tensor::from_values({1, 3}, {0.0, 0.5, -1.0});
  Tensor t = softmax(y, 1);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(s.at(0, c) - t.at(0, c)) < 1e-14);

  // Column-axis softmax normalizes down each column.
  Rng rng(1);
  Tensor z = softmax(random_tensor({4, 5}, rng), 0);
  for (std::size_t c = 0; c < 5; ++c) {
    double total = 0.0;
    for (std::size_t r = 0; r < 4; ++r) total += z.at(r, c);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("log_softmax agrees with log of softmax and normalizes") {
  Rng rng(11);
  Tensor x = random_tensor({5, 8}, rng, 4.0);
  Tensor ls = log_softmax(x, 1);
  Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(std::abs(std::exp(ls.at(r, c)) - s.at(r, c)) < 1e-13);
      z += std::exp(ls.at(r, c));
    }
    CHECK(std::abs(z - 1.0) < 1e-12);
  }
}

TEST_CASE("stable log-sigmoid pair is accurate and never saturates to -inf") {
  // Moderate arguments: compare against extended-precision direct evaluation.
  // Both sides use the cancellation-free reciprocal form 1/(1+exp(-+z)).
  for (double z : {-30.0, -3.25, -0.5, 0.0, 0.75, 4.0, 30.0}) {
    auto [lb, l1mb] = stable_log_sigmoid_pair(Tensor::scalar(z));
    const long double zl = static_cast<long double>(z);
    const long double bz = 1.0L / (1.0L + std::exp(-zl));
    const long double cz = 1.0L / (1.0L + std::exp(zl));
    CHECK(std::abs(lb.item() - static_cast<double>(std::log(bz))) < 1e-14);
    CHECK(std::abs(l1mb.item() - static_cast<double>(std::log(cz))) < 1e-14);
  }
  // Extreme arguments: direct evaluation would overflow or round to log(0).
  Tensor z = Tensor::from_values({4}, {-745.0, -200.0, 200.0, 745.0});
  auto [xlb, xl1mb] = stable_log_sigmoid_pair(z);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::isfinite(xlb.at(i)));
    CHECK(std::isfinite(xl1mb.at(i)));
    CHECK(xlb.at(i) <= 0.0);
    CHECK(xl1mb.at(i) <= 0.0);
    // The two logs describe complementary probabilities.
    CHECK(std::abs(std::exp(xlb.at(i)) + std::exp(xl1mb.at(i)) - 1.0) < 1e-12);
  }
  // log b at z = 200 is about -exp(-200): tiny but not flushed to zero.
  CHECK(xlb.at(2) < 0.0);
  CHECK(xlb.at(2) > -1e-85);
}

// ---------------------------------------------------------------------------
// Scans and reductions

TEST_CASE("reversed cumulative sums match the quadratic reference") {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng);
  for (std::size_t axis : {std::size_t{0}, std::size_t{1}}) {
    Tensor inc = reversed_cumsum(x, axis);
    Tensor exc = reversed_cumsum_exclusive(x, axis);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        double want_inc = 0.0, want_exc = 0.0;
        for (std::size_t r2 = 0; r2 < 4; ++r2) {
          for (std::size_t c2 = 0; c2 < 6; ++c2) {
            const bool same_line = axis == 0 ? (c2 == c) : (r2 == r);
            if (!same_line) continue;
            const std::size_t pos = axis == 0 ? r2 : c2;
            const std::size_t here = axis == 0 ? r : c;
            if (pos >= here) want_inc += x.at(r2, c2);
            if (pos > here) want_exc += x.at(r2, c2);
          }
        }
        CHECK(std::abs(inc.at(r, c) - want_inc) < 1e-12);
        CHECK(std::abs(exc.at(r, c) - want_exc) < 1e-12);
      }
    }
  }
}

TEST_CASE("reductions produce scalars and per-axis sums") {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(x).rank() == 0);
  CHECK(sum(x).item() == 21.0);
  CHECK(mean(x).item() == 3.5);
  Tensor cols = sum_axis(x, 0);
  REQUIRE(cols.shape() == Shape{3});
  CHECK(cols.at(0) == 5.0);
  CHECK(cols.at(2) == 9.0);
  Tensor rows = mean_axis(x, 1);
  REQUIRE(rows.shape() == Shape{2});
  CHECK(rows.at(0) == 2.0);
  CHECK(rows.at(1) == 5.0);
}

// ---------------------------------------------------------------------------
// Normalization

TEST_CASE("layer_norm matches direct per-row normalization") {
  Rng rng(17);
  const std::size_t rows = 5, cols = 16;
  Tensor x = random_tensor({rows, cols}, rng, 2.0);
  Tensor gain = random_tensor({cols}, rng);
  Tensor bias = random_tensor({cols}, rng);
  const double eps = 1e-5;
  Tensor y = layer_norm(x, gain, bias, eps);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t c = 0; c < cols; ++c) m += x.at(r, c);
    m /= cols;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x.at(r, c) - m) * (x.at(r, c) - m);
    var /= cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const double want = (x.at(r, c) - m) / std::sqrt(var + eps) * gain.at(c) + bias.at(c);
      CHECK(std::abs(y.at(r, c) - want) < 1e-12);
    }
  }
  CHECK_THROWS_AS((void)layer_norm(x, random_tensor({4}, rng), bias), ShapeError);
}

// ---------------------------------------------------------------------------
// Top-k selection

TEST_CASE("topk_rows orders by value then lower index") {
  Tensor x = Tensor::from_values({3, 5}, {
      0.1, 0.9, 0.3, 0.9, 0.5,   // tie between columns 1 and 3
      5.0, 4.0, 3.0, 2.0, 1.0,   // already sorted
      2.0, 2.0, 2.0, 2.0, 2.0,   // full tie
  });
  auto top2 = topk_rows(x, 2);
  CHECK(top2[0] == 1);
  CHECK(top2[1] == 3);
  CHECK(top2[2] == 0);
  CHECK(top2[3] == 1);
  CHECK(top2[4] == 0);
  CHECK(top2[5] == 1);
  auto all = topk_rows(x, 5);
  const std::uint32_t want_row0[5] = {1, 3, 4, 2, 0};
  for (std::size_t j = 0; j < 5; ++j) CHECK(all[j] == want_row0[j]);
  CHECK_THROWS_AS((void)topk_rows(x, 6), ContractError);
  CHECK_THROWS_AS((void)topk_rows(x, 0), ContractError);
}

// ---------------------------------------------------------------------------
// Reverse-mode semantics

TEST_CASE("backward seeds 1, accumulates additively, and reaches intermediates") {
  Tensor x = Tensor::from_values({3}, {1.0, -2.0, 3.0});
  x.set_requires_grad(true);
  TapeScope scope;
  Tensor y = mul(x, x);
  Tensor loss = sum(y);
  scope.tape().backward(loss);
  REQUIRE(x.has_grad());
  CHECK(x.grad_at(0) == 2.0);
  CHECK(x.grad_at(1) == -4.0);
  CHECK(x.grad_at(2) == 6.0);
  // Intermediates are populated too.
  REQUIRE(y.has_grad());
  CHECK(y.grad_at(1) == 1.0);

  // A second replay without reset doubles every accumulator.
  scope.tape().backward(loss);
  CHECK(x.grad_at(2) == 12.0);
  x.zero_grad();
  CHECK(x.grad_at(2) == 0.0);
}

TEST_CASE("a value consumed twice receives both contributions") {
  Tensor x = Tensor::from_values({2}, {3.0, 5.0});
  x.set_requires_grad(true);
  TapeScope scope;
  Tensor loss = sum(add(mul(x, x), mul(x, x)));
  scope.tape().backward(loss);
  CHECK(x.grad_at(0) == 12.0);
  CHECK(x.grad_at(1) == 20.0);
}

TEST_CASE("backward rejects non-scalar losses and requires a tape") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  {
    TapeScope scope;
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(scope.tape().backward(y), ContractError);
  }
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("untracked inputs stay untracked and record nothing") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0});
  TapeScope scope;
  Tensor y = mul(x, x);
  CHECK(scope.tape().size() == 0);
  CHECK(!y.requires_grad());

  Tensor t = x.clone();
  t.set_requires_grad(true);
  Tensor d = t.detach();
  CHECK(!d.requires_grad());
  Tensor z = mul(d, d);
  CHECK(scope.tape().size() == 0);
}

TEST_CASE("a tensor from a finished tape acts as a leaf on the next tape") {
  Tensor x = Tensor::from_values({2}, {2.0, 4.0});
  x.set_requires_grad(true);
  Tensor y;
  {
    TapeScope scope;
    y = mul(x, x);
  }
  TapeScope scope2;
  Tensor loss = sum(y);
  scope2.tape().backward(loss);
  CHECK(!x.has_grad());
  REQUIRE(y.has_grad());
  CHECK(y.grad_at(0) == 1.0);
}

TEST_CASE("consuming one output of a multi-output operation is fine") {
  Tensor z = Tensor::from_values({3}, {-1.0, 0.5, 2.0});
  z.set_requires_grad(true);
  TapeScope scope;
  auto [lb, l1mb] = stable_log_sigmoid_pair(z);
  Tensor loss = sum(lb);
  scope.tape().backward(loss);
  REQUIRE(z.has_grad());
  for (std::size_t i = 0; i < 3; ++i) {
    const double sig_neg = 1.0 / (1.0 + std::exp(z.at(i)));
    CHECK(std::abs(z.grad_at(i) - sig_neg) < 1e-14);
  }
  CHECK(!l1mb.has_grad());
}

// ---------------------------------------------------------------------------
// Finite-difference audits

namespace {

constexpr double kDyadicEps = 0x1.0p-13;

} // namespace

TEST_CASE("central differences on an exactly representable quadratic agree exactly") {
  // Integer inputs, a dyadic step, and a polynomial of degree two keep every
  // intermediate exactly representable, so the reported error is zero, not
  // merely small.
  Tensor x = Tensor::from_values({5}, {-3.0, -1.0, 0.0, 2.0, 7.0});
  auto f = [](const Tensor& t) { return sum(square(t)); };
  CHECK(finite_difference_check(f, x, kDyadicEps) == 0.0);
}

TEST_CASE("finite differences validate every primitive's gradient") {
  Rng rng(23);
  const double gate = 2e-5;
  auto fd = [&](const std::function<Tensor(const Tensor&)>& f, Tensor x) {
    return finite_difference_check(f, std::move(x), kDyadicEps);
  };

  // Inputs kept away from relu/clamp kinks.
  Tensor x = Tensor::from_values({2, 3}, {0.8, -1.2, 0.4, 2.1, -0.6, 1.5});
  Tensor v = Tensor::from_values({2}, {0.7, -1.1});
  Tensor w = random_tensor({3, 4}, rng, 0.5);
  Tensor w2 = random_tensor({4, 3}, rng, 0.5);
  Tensor g1 = random_tensor({3}, rng, 0.3);
  Tensor b1 = random_tensor({3}, rng, 0.3);

  CHECK(fd([&](const Tensor& t) { return sum(matmul(t, w)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(matmul_nt(t, w2)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(matmul_tn(t, x.detach())); }, x.detach()) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(relu(t)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(gelu(t)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(exp_elem(t)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(log_elem(add_scalar(square(t), 0.5))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(xlogx(add_scalar(square(t), 0.1))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(clamp_elem(t, -1.0, 1.0)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(softmax(t, 1))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(log_softmax(t, 1))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(softmax(t, 0))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) {
          auto [lb, l1mb] = stable_log_sigmoid_pair(t);
          return sum(add(square(lb), square(l1mb)));
        }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(reversed_cumsum(t, 1))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(reversed_cumsum_exclusive(t, 0))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(layer_norm(t, g1, b1))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(mean_axis(t, 0))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return square(mean(t)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(mul_colvec(t, v)); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(gather_rows(t, {1, 0, 1}))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(scatter_add_rows(t, {2, 0}, 4))); }, x) < gate);
  CHECK(fd([&](const Tensor& t) {
          return sum(square(gather_cols_per_row(t, {0, 2, 2, 1}, 2)));
        }, x) < gate);
  CHECK(fd([&](const Tensor& t) { return sum(square(concat_rows(t, w2))); }, x) < gate);
  Tensor shift = random_tensor({2, 3}, rng, 0.5);
  CHECK(fd([&](const Tensor& t) { return sum(mul(sub(t, shift), neg(t))); }, x) < gate);
}

TEST_CASE("finite differences validate a deep composite") {
  Rng rng(31);
  Tensor w = random_tensor({5, 7}, rng, 0.4);
  Tensor gain = Tensor::full({7}, 1.0);
  Tensor bias = Tensor::zeros({7});
  Tensor x = random_tensor({4, 5}, rng, 0.8);
  auto f = [&](const Tensor& t) {
    Tensor h = layer_norm(matmul(t, w), gain, bias);
    auto [lb, l1mb] = stable_log_sigmoid_pair(h);
    Tensor s = softmax(h, 1);
    Tensor m = mul(s, exp_elem(mul_scalar(lb, 0.5)));
    Tensor r = reversed_cumsum_exclusive(m, 0);
    return mean(add(r, square(l1mb)));
  };
  CHECK(finite_difference_check(f, x, kDyadicEps) < 1e-4);
}

TEST_CASE("the audit restricted to chosen coordinates runs only those") {
  Tensor x = Tensor::from_values({4}, {1.0, 2.0, 3.0, 4.0});
  auto f = [](const Tensor& t) { return sum(square(t)); };
  CHECK(finite_difference_check(f, x, kDyadicEps, std::vector<std::size_t>{0, 3}) == 0.0);
  CHECK_THROWS_AS((void)finite_difference_check(f, x, kDyadicEps, std::vector<std::size_t>{9}),
                  ContractError);
}

TEST_CASE("the audit enforces its step-size range") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0});
  auto f = [](const Tensor& t) { return sum(square(t)); };
  CHECK_THROWS_AS((void)finite_difference_check(f, x, 1e-2), ConfigError);
  CHECK_THROWS_AS((void)finite_difference_check(f, x, 1e-8), ConfigError);
}

TEST_CASE("the audit leaves the probed tensor untouched") {
  Tensor x = Tensor::from_values({3}, {1.0, 2.0, 3.0});
  auto f = [](const Tensor& t) { return sum(square(t)); };
  (void)finite_difference_check(f, x, kDyadicEps);
  CHECK(!x.requires_grad());
  CHECK(!x.has_grad());
  CHECK(x.at(0) == 1.0);
  CHECK(x.at(2) == 3.0);
}

// ---------------------------------------------------------------------------
// Failure detection

TEST_CASE("non-finite results are rejected at the producing operation") {
  Tensor big = Tensor::full({4}, 1e308);
  CHECK_THROWS_AS((void)add(big, big), NumericError);
  CHECK_THROWS_AS((void)exp_elem(Tensor::full({2}, 1000.0)), NumericError);
  CHECK_THROWS_AS((void)log_elem(Tensor::zeros({2})), NumericError);
  Tensor a = Tensor::full({2, 2}, 1e200);
  CHECK_THROWS_AS((void)matmul(a, a), NumericError);
}

TEST_CASE("indexed movement validates its indices") {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS((void)gather_rows(x, {0, 2}), ContractError);
  CHECK_THROWS_AS((void)scatter_add_rows(x, {0, 5}, 4), ContractError);
  CHECK_THROWS_AS((void)scatter_add_rows(x, {0}, 4), ShapeError);
  CHECK_THROWS_AS((void)gather_cols_per_row(x, {0, 3, 1, 1}, 2), ContractError);
  CHECK_THROWS_AS((void)mul_colvec(x, Tensor::zeros({3})), ShapeError);

  Tensor g = gather_rows(x, {1, 1, 0});
  CHECK(g.at(0, 0) == 4.0);
  CHECK(g.at(2, 2) == 3.0);
  Tensor sc = scatter_add_rows(x, {1, 1}, 3);
  CHECK(sc.at(0, 0) == 0.0);
  CHECK(sc.at(1, 0) == 5.0);
  CHECK(sc.at(1, 2) == 9.0);
}
