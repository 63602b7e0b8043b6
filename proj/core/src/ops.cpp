// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#if __has_include(<cblas.h>)
#include <cblas.h>
#else
extern "C" {
typedef enum { CblasRowMajor = 101 } CBLAS_LAYOUT_decl;
typedef enum { CblasNoTrans = 111, CblasTrans = 112 } CBLAS_TRANSPOSE_decl;
void cblas_dgemm(int layout, int transa, int transb, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);
}
#endif

namespace modlm {

namespace {

using detail::NodePtr;

// ---------------------------------------------------------------------------
// Gradient plumbing shared by every backward rule.

// Upstream gradient of an output, or nullptr when nothing consumed it.
const std::vector<double>* grad_source(const NodePtr& n) {
  return n->tmp_grad.empty() ? nullptr : &n->tmp_grad;
}

// Buffer a rule accumulates into for one input: the replay scratch for
// intermediates of the tape being replayed, the persistent accumulator for
// tracked leaves, nullptr for untracked constants.
std::vector<double>* grad_sink(const NodePtr& n, const Tape* tape) {
  if (n->producer_tape == tape) {
    if (n->tmp_grad.empty()) {
      n->tmp_grad = detail::acquire_buffer(n->values.size());
      std::fill(n->tmp_grad.begin(), n->tmp_grad.end(), 0.0);
    }
    return &n->tmp_grad;
  }
  if (n->requires_grad) {
    if (n->grad.empty()) {
      n->grad = detail::acquire_buffer(n->values.size());
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    return &n->grad;
  }
  return nullptr;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->impl()->requires_grad) return true;
  }
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

// Extents around a reduction/scan axis: result[o][i][j] lives at
// (o * len + i) * inner + j.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const char* op, const Tensor& t, std::size_t axis) {
  const Shape& s = t.shape();
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

void dgemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
           const double* a, std::size_t lda, const double* b, std::size_t ldb,
           double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

// ---------------------------------------------------------------------------
// Elementwise ops share one scaffold: forward map plus a pointwise gradient
// in terms of input and output values.

template <class Fwd, class Bwd>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = detail::uninit_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  detail::check_finite(po, n, name);
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, bwd] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      const std::size_t m = xn->values.size();
      for (std::size_t i = 0; i < m; ++i) {
        (*dx)[i] += (*g)[i] * bwd(xn->values[i], on->values[i]);
      }
    });
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = detail::uninit_tensor(a.shape());
  const std::size_t n = out.numel();
  const double *pa = a.data(), *pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::check_finite(po, n, "add");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp] {
      const auto* g = grad_source(on);
      if (!g) return;
      const std::size_t m = g->size();
      if (auto* da = grad_sink(an, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*da)[i] += (*g)[i];
      }
      if (auto* db = grad_sink(bn, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*db)[i] += (*g)[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = detail::uninit_tensor(a.shape());
  const std::size_t n = out.numel();
  const double *pa = a.data(), *pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  detail::check_finite(po, n, "sub");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp] {
      const auto* g = grad_source(on);
      if (!g) return;
      const std::size_t m = g->size();
      if (auto* da = grad_sink(an, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*da)[i] += (*g)[i];
      }
      if (auto* db = grad_sink(bn, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*db)[i] -= (*g)[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = detail::uninit_tensor(a.shape());
  const std::size_t n = out.numel();
  const double *pa = a.data(), *pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::check_finite(po, n, "mul");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp] {
      const auto* g = grad_source(on);
      if (!g) return;
      const std::size_t m = g->size();
      if (auto* da = grad_sink(an, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*da)[i] += (*g)[i] * bn->values[i];
      }
      if (auto* db = grad_sink(bn, tp)) {
        for (std::size_t i = 0; i < m; ++i) (*db)[i] += (*g)[i] * an->values[i];
      }
    });
  }
  return out;
}

Tensor neg(const Tensor& a) {
  return unary_elementwise("neg", a, [](double v) { return -v; },
                           [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise("add_scalar", a, [c](double v) { return v + c; },
                           [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_elementwise("mul_scalar", a, [c](double v) { return v * c; },
                           [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// Matrix products (BLAS-backed; the test suite audits them against a direct
// triple loop)

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()));
  }
  Tensor out = detail::uninit_tensor({m, n});
  dgemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, out.data(), n);
  detail::check_finite(out.data(), out.numel(), "matmul");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp, m, n, k] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* da = grad_sink(an, tp)) {
        dgemm(false, true, m, k, n, 1.0, g->data(), n, bn->values.data(), n, 1.0,
              da->data(), k);
      }
      if (auto* db = grad_sink(bn, tp)) {
        dgemm(true, false, k, n, m, 1.0, an->values.data(), k, g->data(), n, 1.0,
              db->data(), n);
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(0);
  if (b.size(1) != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                     " . " + shape_str(b.shape()) + "^T");
  }
  Tensor out = detail::uninit_tensor({m, n});
  dgemm(false, true, m, n, k, 1.0, a.data(), k, b.data(), k, 0.0, out.data(), n);
  detail::check_finite(out.data(), out.numel(), "matmul_nt");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp, m, n, k] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* da = grad_sink(an, tp)) {
        dgemm(false, false, m, k, n, 1.0, g->data(), n, bn->values.data(), k, 1.0,
              da->data(), k);
      }
      if (auto* db = grad_sink(bn, tp)) {
        dgemm(true, false, n, k, m, 1.0, g->data(), n, an->values.data(), k, 1.0,
              db->data(), k);
      }
    });
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_tn", a);
  require_rank2("matmul_tn", b);
  const std::size_t k = a.size(0), m = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw ShapeError("matmul_tn: inner extents differ, " + shape_str(a.shape()) +
                     "^T . " + shape_str(b.shape()));
  }
  Tensor out = detail::uninit_tensor({m, n});
  dgemm(true, false, m, n, k, 1.0, a.data(), m, b.data(), n, 0.0, out.data(), n);
  detail::check_finite(out.data(), out.numel(), "matmul_tn");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp, m, n, k] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* da = grad_sink(an, tp)) {
        dgemm(false, true, k, m, n, 1.0, bn->values.data(), n, g->data(), n, 1.0,
              da->data(), m);
      }
      if (auto* db = grad_sink(bn, tp)) {
        dgemm(false, false, k, n, m, 1.0, an->values.data(), m, g->data(), n, 1.0,
              db->data(), n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor relu(const Tensor& x) {
  return unary_elementwise("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                           [](double xi, double) { return xi > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_elementwise(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double xi, double) {
        const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
        return cdf + xi * inv_sqrt2pi * std::exp(-0.5 * xi * xi);
      });
}

Tensor exp_elem(const Tensor& x) {
  return unary_elementwise("exp_elem", x, [](double v) { return std::exp(v); },
                           [](double, double yi) { return yi; });
}

Tensor log_elem(const Tensor& x) {
  return unary_elementwise("log_elem", x, [](double v) { return std::log(v); },
                           [](double xi, double) { return 1.0 / xi; });
}

Tensor square(const Tensor& x) {
  return unary_elementwise("square", x, [](double v) { return v * v; },
                           [](double xi, double) { return 2.0 * xi; });
}

Tensor xlogx(const Tensor& x) {
  return unary_elementwise(
      "xlogx", x, [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; },
      [](double xi, double) { return xi > 0.0 ? std::log(xi) + 1.0 : 0.0; });
}

Tensor clamp_elem(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clamp_elem: lo must not exceed hi");
  return unary_elementwise(
      "clamp_elem", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double xi, double) { return (xi > lo && xi < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view("softmax", x, axis);
  Tensor out = detail::uninit_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.len * v.inner + j;
      double hi = px[base];
      for (std::size_t i = 1; i < v.len; ++i) hi = std::max(hi, px[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) {
        const double e = std::exp(px[base + i * v.inner] - hi);
        po[base + i * v.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t i = 0; i < v.len; ++i) po[base + i * v.inner] *= inv;
    }
  }
  detail::check_finite(po, out.numel(), "softmax");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, v] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      const std::vector<double>& s = on->values;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
          const std::size_t base = o * v.len * v.inner + j;
          double dot = 0.0;
          for (std::size_t i = 0; i < v.len; ++i) {
            const std::size_t p = base + i * v.inner;
            dot += (*g)[p] * s[p];
          }
          for (std::size_t i = 0; i < v.len; ++i) {
            const std::size_t p = base + i * v.inner;
            (*dx)[p] += s[p] * ((*g)[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view("log_softmax", x, axis);
  Tensor out = detail::uninit_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.len * v.inner + j;
      double hi = px[base];
      for (std::size_t i = 1; i < v.len; ++i) hi = std::max(hi, px[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) z += std::exp(px[base + i * v.inner] - hi);
      const double lse = hi + std::log(z);
      for (std::size_t i = 0; i < v.len; ++i) {
        po[base + i * v.inner] = px[base + i * v.inner] - lse;
      }
    }
  }
  detail::check_finite(po, out.numel(), "log_softmax");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, v] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
          const std::size_t base = o * v.len * v.inner + j;
          double gsum = 0.0;
          for (std::size_t i = 0; i < v.len; ++i) gsum += (*g)[base + i * v.inner];
          for (std::size_t i = 0; i < v.len; ++i) {
            const std::size_t p = base + i * v.inner;
            (*dx)[p] += (*g)[p] - std::exp(on->values[p]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

std::pair<Tensor, Tensor> stable_log_sigmoid_pair(const Tensor& z) {
  const auto softplus = [](double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  };
  Tensor log_b = detail::uninit_tensor(z.shape());
  Tensor log_1mb = detail::uninit_tensor(z.shape());
  const double* pz = z.data();
  double* pb = log_b.data();
  double* pc = log_1mb.data();
  const std::size_t n = z.numel();
  for (std::size_t i = 0; i < n; ++i) {
    pb[i] = -softplus(-pz[i]);
    pc[i] = -softplus(pz[i]);
  }
  detail::check_finite(pb, n, "stable_log_sigmoid_pair");
  detail::check_finite(pc, n, "stable_log_sigmoid_pair");
  if (tracking({&z})) {
    Tape* tp = Tape::active();
    NodePtr zn = z.impl(), bn = log_b.impl(), cn = log_1mb.impl();
    tp->record({bn, cn}, [zn, bn, cn, tp] {
      const auto* gb = grad_source(bn);
      const auto* gc = grad_source(cn);
      if (!gb && !gc) return;
      auto* dz = grad_sink(zn, tp);
      if (!dz) return;
      const std::size_t m = zn->values.size();
      for (std::size_t i = 0; i < m; ++i) {
        double d = 0.0;
        // d log b / dz = sigmoid(-z) = exp(log(1-b)); symmetric for the pair.
        if (gb) d += (*gb)[i] * std::exp(cn->values[i]);
        if (gc) d -= (*gc)[i] * std::exp(bn->values[i]);
        (*dz)[i] += d;
      }
    });
  }
  return {log_b, log_1mb};
}

// ---------------------------------------------------------------------------
// Scans and reductions

namespace {

Tensor reversed_scan(const char* name, const Tensor& x, std::size_t axis, bool exclusive) {
  const AxisView v = axis_view(name, x, axis);
  Tensor out = detail::uninit_tensor(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.len * v.inner + j;
      double acc = 0.0;
      for (std::size_t ii = v.len; ii-- > 0;) {
        const std::size_t p = base + ii * v.inner;
        if (exclusive) {
          po[p] = acc;
          acc += px[p];
        } else {
          acc += px[p];
          po[p] = acc;
        }
      }
    }
  }
  detail::check_finite(po, out.numel(), name);
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, v, exclusive] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      // Transpose of a reversed suffix sum is the forward prefix sum.
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
          const std::size_t base = o * v.len * v.inner + j;
          double acc = 0.0;
          for (std::size_t i = 0; i < v.len; ++i) {
            const std::size_t p = base + i * v.inner;
            if (exclusive) {
              (*dx)[p] += acc;
              acc += (*g)[p];
            } else {
              acc += (*g)[p];
              (*dx)[p] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

} // namespace

Tensor reversed_cumsum(const Tensor& x, std::size_t axis) {
  return reversed_scan("reversed_cumsum", x, axis, false);
}

Tensor reversed_cumsum_exclusive(const Tensor& x, std::size_t axis) {
  return reversed_scan("reversed_cumsum_exclusive", x, axis, true);
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(acc);
  detail::check_finite(out.data(), 1, "sum");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* dx = grad_sink(xn, tp)) {
        const double gv = (*g)[0];
        for (double& d : *dx) d += gv;
      }
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

Tensor reduce_axis(const char* name, const Tensor& x, std::size_t axis, double scale) {
  const AxisView v = axis_view(name, x, axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = detail::uninit_tensor(out_shape);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      double acc = 0.0;
      const std::size_t base = o * v.len * v.inner + j;
      for (std::size_t i = 0; i < v.len; ++i) acc += px[base + i * v.inner];
      po[o * v.inner + j] = acc * scale;
    }
  }
  detail::check_finite(po, out.numel(), name);
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, v, scale] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < v.inner; ++j) {
          const double gv = (*g)[o * v.inner + j] * scale;
          const std::size_t base = o * v.len * v.inner + j;
          for (std::size_t i = 0; i < v.len; ++i) (*dx)[base + i * v.inner] += gv;
        }
      }
    });
  }
  return out;
}

} // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  return reduce_axis("sum_axis", x, axis, 1.0);
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view("mean_axis", x, axis);
  return reduce_axis("mean_axis", x, axis, 1.0 / static_cast<double>(v.len));
}

// ---------------------------------------------------------------------------
// Indexed movement

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require_rank2("gather_rows", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  for (std::size_t r : idx) {
    if (r >= rows) {
      throw ContractError("gather_rows: row index " + std::to_string(r) +
                          " out of range for " + shape_str(x.shape()));
    }
  }
  Tensor out = detail::uninit_tensor({idx.size(), cols});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::memcpy(po + r * cols, px + idx[r] * cols, cols * sizeof(double));
  }
  detail::check_finite(po, out.numel(), "gather_rows");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, idx, cols] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          (*dx)[idx[r] * cols + c] += (*g)[r * cols + c];
        }
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                        std::size_t out_rows) {
  require_rank2("scatter_add_rows", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (idx.size() != rows) {
    throw ShapeError("scatter_add_rows: index count " + std::to_string(idx.size()) +
                     " does not match rows of " + shape_str(x.shape()));
  }
  for (std::size_t r : idx) {
    if (r >= out_rows) {
      throw ContractError("scatter_add_rows: destination row " + std::to_string(r) +
                          " out of range");
    }
  }
  // Zero-initialized on purpose: rows that no index names stay zero and the
  // loop accumulates into the rest.
  Tensor out = raw_tensor({out_rows, cols});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) po[idx[r] * cols + c] += px[r * cols + c];
  }
  detail::check_finite(po, out.numel(), "scatter_add_rows");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, idx, cols] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          (*dx)[r * cols + c] += (*g)[idx[r] * cols + c];
        }
      }
    });
  }
  return out;
}

Tensor gather_cols_per_row(const Tensor& x, const std::vector<std::uint32_t>& idx,
                           std::size_t k) {
  require_rank2("gather_cols_per_row", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (k == 0 || idx.size() != rows * k) {
    throw ShapeError("gather_cols_per_row: need rows*k indices");
  }
  for (std::uint32_t c : idx) {
    if (c >= cols) {
      throw ContractError("gather_cols_per_row: column index " + std::to_string(c) +
                          " out of range for " + shape_str(x.shape()));
    }
  }
  Tensor out = detail::uninit_tensor({rows, k});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) po[r * k + j] = px[r * cols + idx[r * k + j]];
  }
  detail::check_finite(po, out.numel(), "gather_cols_per_row");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, idx, k, cols] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      const std::size_t rows2 = idx.size() / k;
      for (std::size_t r = 0; r < rows2; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          (*dx)[r * cols + idx[r * k + j]] += (*g)[r * k + j];
        }
      }
    });
  }
  return out;
}

Tensor gather_entries(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ShapeError("gather_entries: empty index list");
  const std::size_t n = x.numel();
  for (std::size_t i : idx) {
    if (i >= n) {
      throw ContractError("gather_entries: flat index " + std::to_string(i) +
                          " out of range for " + shape_str(x.shape()));
    }
  }
  Tensor out = detail::uninit_tensor({idx.size()});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < idx.size(); ++i) po[i] = px[idx[i]];
  detail::check_finite(po, out.numel(), "gather_entries");
  if (tracking({&x})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), on = out.impl();
    tp->record({on}, [xn, on, tp, idx] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      if (!dx) return;
      for (std::size_t i = 0; i < idx.size(); ++i) (*dx)[idx[i]] += (*g)[i];
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2("concat_rows", a);
  require_rank2("concat_rows", b);
  if (a.size(1) != b.size(1)) {
    throw ShapeError("concat_rows: column counts differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const std::size_t ra = a.size(0), rb = b.size(0), cols = a.size(1);
  Tensor out = detail::uninit_tensor({ra + rb, cols});
  std::memcpy(out.data(), a.data(), ra * cols * sizeof(double));
  std::memcpy(out.data() + ra * cols, b.data(), rb * cols * sizeof(double));
  detail::check_finite(out.data(), out.numel(), "concat_rows");
  if (tracking({&a, &b})) {
    Tape* tp = Tape::active();
    NodePtr an = a.impl(), bn = b.impl(), on = out.impl();
    tp->record({on}, [an, bn, on, tp, ra, rb, cols] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* da = grad_sink(an, tp)) {
        for (std::size_t i = 0; i < ra * cols; ++i) (*da)[i] += (*g)[i];
      }
      if (auto* db = grad_sink(bn, tp)) {
        for (std::size_t i = 0; i < rb * cols; ++i) (*db)[i] += (*g)[ra * cols + i];
      }
    });
  }
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
  require_rank2("mul_colvec", x);
  if (v.rank() != 1 || v.size(0) != x.size(0)) {
    throw ShapeError("mul_colvec: scale vector " + shape_str(v.shape()) +
                     " does not match rows of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size(0), cols = x.size(1);
  Tensor out = detail::uninit_tensor({rows, cols});
  const double *px = x.data(), *pv = v.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] * pv[r];
  }
  detail::check_finite(po, out.numel(), "mul_colvec");
  if (tracking({&x, &v})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), vn = v.impl(), on = out.impl();
    tp->record({on}, [xn, vn, on, tp, rows, cols] {
      const auto* g = grad_source(on);
      if (!g) return;
      if (auto* dx = grad_sink(xn, tp)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            (*dx)[r * cols + c] += (*g)[r * cols + c] * vn->values[r];
          }
        }
      }
      if (auto* dv = grad_sink(vn, tp)) {
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            acc += (*g)[r * cols + c] * xn->values[r * cols + c];
          }
          (*dv)[r] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization, fused so the backward can reuse the normalized
// activations instead of re-deriving them from five primitive entries.

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2("layer_norm", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (gain.rank() != 1 || gain.size(0) != cols || bias.rank() != 1 || bias.size(0) != cols) {
    throw ShapeError("layer_norm: gain/bias must be rank-1 of length " +
                     std::to_string(cols));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  Tensor out = detail::uninit_tensor({rows, cols});
  std::vector<double> normed(rows * cols);
  std::vector<double> inv_std(rows);
  const double *px = x.data(), *pg = gain.data(), *pb = bias.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * cols;
    double m = 0.0;
    for (std::size_t c = 0; c < cols; ++c) m += row[c];
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = row[c] - m;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double nh = (row[c] - m) * inv;
      normed[r * cols + c] = nh;
      po[r * cols + c] = nh * pg[c] + pb[c];
    }
  }
  detail::check_finite(po, out.numel(), "layer_norm");
  if (tracking({&x, &gain, &bias})) {
    Tape* tp = Tape::active();
    NodePtr xn = x.impl(), gn = gain.impl(), bn = bias.impl(), on = out.impl();
    tp->record({on}, [xn, gn, bn, on, tp, rows, cols, normed = std::move(normed),
                      inv_std = std::move(inv_std)] {
      const auto* g = grad_source(on);
      if (!g) return;
      auto* dx = grad_sink(xn, tp);
      auto* dgain = grad_sink(gn, tp);
      auto* dbias = grad_sink(bn, tp);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g->data() + r * cols;
        const double* nrow = normed.data() + r * cols;
        if (dgain) {
          for (std::size_t c = 0; c < cols; ++c) (*dgain)[c] += grow[c] * nrow[c];
        }
        if (dbias) {
          for (std::size_t c = 0; c < cols; ++c) (*dbias)[c] += grow[c];
        }
        if (dx) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double dh = grow[c] * gn->values[c];
            s1 += dh;
            s2 += dh * nrow[c];
          }
          s1 /= static_cast<double>(cols);
          s2 /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const double dh = grow[c] * gn->values[c];
            (*dx)[r * cols + c] += inv_std[r] * (dh - s1 - nrow[c] * s2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selection and auditing (not differentiated)

std::vector<std::uint32_t> topk_rows(const Tensor& x, std::size_t k) {
  require_rank2("topk_rows", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (k == 0 || k > cols) {
    throw ContractError("topk_rows: k = " + std::to_string(k) + " with " +
                        std::to_string(cols) + " columns");
  }
  std::vector<std::uint32_t> out(rows * k);
  std::vector<std::uint32_t> best(k);
  const double* px = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * cols;
    std::size_t count = 0;
    for (std::uint32_t c = 0; c < cols; ++c) {
      // Insertion keeps (value desc, index asc) order, so equal values
      // resolve to the lower index on every platform.
      std::size_t pos = count;
      while (pos > 0) {
        const std::uint32_t b = best[pos - 1];
        if (row[c] > row[b]) {
          --pos;
        } else {
          break;
        }
      }
      if (pos < k) {
        const std::size_t last = std::min(count, k - 1);
        for (std::size_t m = last; m > pos; --m) best[m] = best[m - 1];
        best[pos] = c;
        if (count < k) ++count;
      }
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = best[j];
  }
  return out;
}

namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor y = f(x);
  if (y.numel() != 1) {
    throw ContractError("finite_difference_check: f must return a one-element tensor");
  }
  return y.item();
}

} // namespace

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double eps, const std::vector<std::size_t>& coords,
                               double floor) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ConfigError("finite_difference_check: eps must lie in [1e-7, 1e-3]");
  }
  if (!(floor > 0.0)) throw ConfigError("finite_difference_check: floor must be positive");
  for (std::size_t c : coords) {
    if (c >= x.numel()) throw ContractError("finite_difference_check: coordinate out of range");
  }
  const bool old_rg = x.requires_grad();
  std::vector<double> old_grad = x.impl()->grad;
  x.set_requires_grad(true);
  x.impl()->grad.clear();
  std::vector<double> analytic;
  {
    TapeScope scope;
    Tensor loss = f(x);
    if (loss.numel() != 1) {
      throw ContractError("finite_difference_check: f must return a one-element tensor");
    }
    scope.tape().backward(loss);
    analytic = x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);
  }
  x.impl()->grad = std::move(old_grad);
  x.set_requires_grad(old_rg);

  double worst = 0.0;
  double* px = x.data();
  for (std::size_t c : coords) {
    const double orig = px[c];
    px[c] = orig + eps;
    const double fp = eval_scalar(f, x);
    px[c] = orig - eps;
    const double fm = eval_scalar(f, x);
    px[c] = orig;
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double g_an = analytic[c];
    const double denom = std::max({std::abs(g_fd), std::abs(g_an), floor});
    worst = std::max(worst, std::abs(g_fd - g_an) / denom);
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double eps, double floor) {
  std::vector<std::size_t> coords(x.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return finite_difference_check(f, std::move(x), eps, coords, floor);
}

} // namespace modlm
