// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <unordered_map>

namespace modlm {

namespace {

thread_local Tape* g_active_tape = nullptr;

/// Recycled tensor storage, bucketed by exact length. Tape replay frees and
/// reallocates the same shapes every segment; reuse keeps the pages warm and
/// skips the allocator. Leaked deliberately so tensors with static lifetime
/// can release into it during teardown.
struct BufferPool {
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> buckets;
  std::size_t bytes = 0;
};

constexpr std::size_t kPoolBudgetBytes = std::size_t{256} << 20;

BufferPool& buffer_pool() {
  thread_local BufferPool* pool = new BufferPool;
  return *pool;
}

} // namespace

namespace detail {

TensorNode::~TensorNode() {
  release_buffer(std::move(values));
  release_buffer(std::move(grad));
  release_buffer(std::move(tmp_grad));
}

std::vector<double> acquire_buffer(std::size_t n) {
  if (n != 0) {
    BufferPool& pool = buffer_pool();
    auto it = pool.buckets.find(n);
    if (it != pool.buckets.end() && !it->second.empty()) {
      std::vector<double> buf = std::move(it->second.back());
      it->second.pop_back();
      pool.bytes -= n * sizeof(double);
      return buf;
    }
  }
  return std::vector<double>(n);
}

void release_buffer(std::vector<double>&& buf) {
  const std::size_t n = buf.size();
  if (n == 0) return;
  BufferPool& pool = buffer_pool();
  if (pool.bytes + n * sizeof(double) > kPoolBudgetBytes) return;
  pool.bytes += n * sizeof(double);
  pool.buckets[n].push_back(std::move(buf));
}

Tensor uninit_tensor(const Shape& shape) {
  auto node = std::make_shared<TensorNode>();
  node->shape = shape;
  node->values = acquire_buffer(shape_numel(shape));
  return Tensor(std::move(node));
}

} // namespace detail

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) {
      throw ShapeError("tensor extents must be positive, got shape " + shape_str(shape));
    }
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::make(const Shape& shape) {
  return full(shape, 0.0);
}

Tensor raw_tensor(const Shape& shape) { return Tensor::make(shape); }

Tensor Tensor::zeros(const Shape& shape) { return make(shape); }

Tensor Tensor::full(const Shape& shape, double value) {
  Tensor t = detail::uninit_tensor(shape);
  std::fill(t.impl()->values.begin(), t.impl()->values.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values) {
  std::size_t n = shape_numel(shape);
  if (values.size() != n) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = shape;
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor randn(const Shape& shape, Rng& rng, double stddev, double mean) {
  Tensor t = detail::uninit_tensor(shape);
  for (double& v : t.impl()->values) v = mean + stddev * rng.normal();
  return t;
}

const detail::NodePtr& Tensor::impl() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_;
}

std::size_t Tensor::size(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) {
    throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(s));
  }
  return s[i];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw ShapeError("index out of range");
  return impl()->values[i];
}

double& Tensor::at(std::size_t i) {
  if (i >= numel()) throw ShapeError("index out of range");
  return impl()->values[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= size(0) || j >= size(1)) {
    throw ShapeError("bad 2-d index into " + shape_str(shape()));
  }
  return impl()->values[i * size(1) + j];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  if (rank() != 2 || i >= size(0) || j >= size(1)) {
    throw ShapeError("bad 2-d index into " + shape_str(shape()));
  }
  return impl()->values[i * size(1) + j];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
  }
  return impl()->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("gradient has not been populated");
  return impl()->grad;
}

double Tensor::grad_at(std::size_t i) const {
  if (i >= numel()) throw ShapeError("index out of range");
  return grad()[i];
}

double Tensor::grad_at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= size(0) || j >= size(1)) {
    throw ShapeError("bad 2-d index into " + shape_str(shape()));
  }
  return grad()[i * size(1) + j];
}

void Tensor::zero_grad() { impl()->grad.assign(numel(), 0.0); }

Tensor Tensor::detach() const {
  Tensor t = detail::uninit_tensor(shape());
  std::memcpy(t.impl()->values.data(), impl()->values.data(), numel() * sizeof(double));
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

Tape* Tape::active() { return g_active_tape; }

Tape::~Tape() {
  // Nodes may outlive the tape; stale producer pointers must never alias a
  // later tape living at the same address.
  for (Entry& e : entries_) {
    for (detail::NodePtr& out : e.outputs) {
      if (out->producer_tape == this) out->producer_tape = nullptr;
    }
  }
}

void Tape::record(std::vector<detail::NodePtr> outputs, std::function<void()> fn) {
  for (detail::NodePtr& out : outputs) {
    out->requires_grad = true;
    out->producer_tape = this;
  }
  entries_.push_back(Entry{std::move(outputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a one-element loss, got " + shape_str(loss.shape()));
  }
  const detail::NodePtr& seed = loss.impl();
  if (seed->producer_tape == this) {
    if (seed->tmp_grad.empty()) seed->tmp_grad.assign(1, 0.0);
    seed->tmp_grad[0] += 1.0;
  } else if (seed->requires_grad) {
    if (seed->grad.empty()) seed->grad.assign(1, 0.0);
    seed->grad[0] += 1.0;
  }
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->fn();
    // An output's scratch gradient is complete once its entry has run: every
    // consumer sits later on the tape and has already been replayed.
    for (const detail::NodePtr& out : it->outputs) {
      if (out->tmp_grad.empty()) continue;
      if (out->grad.empty()) {
        out->grad = std::move(out->tmp_grad);
      } else {
        for (std::size_t i = 0; i < out->grad.size(); ++i) out->grad[i] += out->tmp_grad[i];
      }
      out->tmp_grad.clear();
    }
  }
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward called with no active tape");
  t->backward(loss);
}

TapeScope::TapeScope() : prev_(g_active_tape) { g_active_tape = &tape_; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

namespace detail {

void check_finite(const double* p, std::size_t n, const char* op) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &p[i], sizeof bits);
    if (((bits >> 52) & 0x7ffu) == 0x7ffu) {
      throw NumericError(std::string(op) + " produced a non-finite value at index " +
                         std::to_string(i));
    }
  }
}

} // namespace detail

} // namespace modlm
