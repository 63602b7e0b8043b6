// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "modlm/tensor.hpp"

namespace modlm {

// Differentiable primitives. Each operation validates shapes, computes its
// result in f64, verifies the result is finite, and appends a reverse-mode
// rule to the active tape when any input is tracked.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a . b^T for a [m x k], b [n x k] -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T . b for a [k x m], b [k x n] -> [m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
/// Exact Gaussian-CDF form: 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
Tensor exp_elem(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor square(const Tensor& x);
/// x log x with the continuous extension 0 at x <= 0 (gradient 0 there).
Tensor xlogx(const Tensor& x);
Tensor clamp_elem(const Tensor& x, double lo, double hi);

/// Shift-invariant softmax along `axis`; rows of the result sum to 1.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// { log sigmoid(z), log sigmoid(-z) } = { log b, log(1-b) } for b = sigmoid(z),
/// both computed as -softplus so neither underflows to -inf.
std::pair<Tensor, Tensor> stable_log_sigmoid_pair(const Tensor& z);

/// out[i] = sum_{j >= i} x[j] along `axis`.
Tensor reversed_cumsum(const Tensor& x, std::size_t axis);
/// out[i] = sum_{j > i} x[j] along `axis` (last slice 0).
Tensor reversed_cumsum_exclusive(const Tensor& x, std::size_t axis);

/// Sum of all elements, as a rank-0 scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces away `axis`; a [m x n] input becomes [n] (axis 0) or [m] (axis 1).
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

/// Rows of x [R x D] selected by index; repeated indices allowed.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
/// out[idx[r]] += x[r] over rows of x [R x D]; result [out_rows x D].
Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                        std::size_t out_rows);
/// out[t, j] = x[t, idx[t * k + j]] for x [T x N]; result [T x k].
Tensor gather_cols_per_row(const Tensor& x, const std::vector<std::uint32_t>& idx,
                           std::size_t k);
/// Flat-index gather from any tensor; result rank 1 of length |idx|.
Tensor gather_entries(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Scales row t of x [T x N] by v[t] (v rank 1, length T).
Tensor mul_colvec(const Tensor& x, const Tensor& v);

/// Per-row normalization of x [T x D] to zero mean and unit variance,
/// then elementwise gain and bias (both [D]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Row-wise top-k positions of x [T x N], each row sorted by descending value
/// with ties broken toward the lower index. Returns T*k flat entries.
std::vector<std::uint32_t> topk_rows(const Tensor& x, std::size_t k);

/// Central-difference gradient audit. Runs `f` (a scalar-valued function of
/// x) under a fresh tape, then perturbs every element of x by +/-eps and
/// compares. Returns the largest relative error, where the error for one
/// element is |g_fd - g_an| / max(|g_fd|, |g_an|, floor).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps, double floor = 1e-3);
/// Same audit restricted to the given flat coordinates of x.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps,
                               const std::vector<std::size_t>& coords,
                               double floor = 1e-3);

} // namespace modlm
