// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "modlm/error.hpp"
#include "modlm/random.hpp"

namespace modlm {

class Tape;
class Tensor;

/// Extents of a dense tensor. Every extent is positive; the empty shape is a
/// rank-0 scalar with one element.
using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  /// Persistent gradient accumulator. Empty until the tensor participates in
  /// a backward pass; same length as values afterwards.
  std::vector<double> grad;
  /// Scratch gradient used while one tape replay is in flight.
  std::vector<double> tmp_grad;
  bool requires_grad = false;
  /// Tape that produced this node, if any. Compared by identity during
  /// replay to route gradients; reset when the tape is destroyed.
  Tape* producer_tape = nullptr;

  /// Returns the storage buffers to the thread-local recycling pool.
  ~TensorNode();
};

using NodePtr = std::shared_ptr<TensorNode>;

/// Size-n buffer with unspecified contents: recycled from the pool when one
/// of that length is available, freshly allocated otherwise. Callers must
/// write every element before it is read; stale values are the norm.
std::vector<double> acquire_buffer(std::size_t n);

/// Hands a buffer back for reuse. Empty buffers and overflow beyond the pool
/// budget are dropped.
void release_buffer(std::vector<double>&& buf);

/// Tensor whose storage is unspecified (see acquire_buffer). Strictly for
/// operation kernels that overwrite every element before the tensor escapes.
Tensor uninit_tensor(const Shape& shape);

} // namespace detail

/// Dense 64-bit float tensor in row-major order. A Tensor is a cheap handle
/// sharing its storage; copies alias the same values and gradient. Use
/// detach() for an independent, untracked copy.
class Tensor {
public:
  /// Undefined handle (no storage). Used for "no cache yet" style slots.
  Tensor() = default;

  bool defined() const { return static_cast<bool>(node_); }

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  /// Takes ownership of `values`; length must equal the shape's element count.
  static Tensor from_values(const Shape& shape, std::vector<double> values);

  const Shape& shape() const { return impl()->shape; }
  std::size_t rank() const { return impl()->shape.size(); }
  std::size_t numel() const { return impl()->values.size(); }
  /// Extent along axis `i`.
  std::size_t size(std::size_t i) const;

  double* data() { return impl()->values.data(); }
  const double* data() const { return impl()->values.data(); }
  const std::vector<double>& values() const { return impl()->values; }

  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i);
  double& at(std::size_t i, std::size_t j);
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const { return impl()->requires_grad; }
  void set_requires_grad(bool v) { impl()->requires_grad = v; }

  /// True once a backward pass has populated the gradient accumulator.
  bool has_grad() const { return !impl()->grad.empty(); }
  const std::vector<double>& grad() const;
  double grad_at(std::size_t i) const;
  double grad_at(std::size_t i, std::size_t j) const;
  /// Clears the accumulator to zeros (allocating it if the tensor is tracked).
  void zero_grad();

  /// Deep copy of the values with gradient tracking off.
  Tensor detach() const;
  /// Deep copy preserving requires_grad.
  Tensor clone() const;

  /// Storage node; identity comparisons decide "same object" questions such
  /// as shared key/value projections.
  const detail::NodePtr& impl() const;

  friend bool same_storage(const Tensor& a, const Tensor& b) {
    return a.node_ == b.node_;
  }

private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  static Tensor make(const Shape& shape);

  detail::NodePtr node_;

  friend class Tape;
  friend Tensor raw_tensor(const Shape& shape);
  friend Tensor detail::uninit_tensor(const Shape& shape);
};

/// Fresh tensor with zero-initialized storage, shape validated. Building
/// block for operation implementations.
Tensor raw_tensor(const Shape& shape);

/// Tensor with i.i.d. normal entries drawn from `rng`.
Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, double mean = 0.0);

/// Element count of a shape (1 for rank 0); throws ShapeError on a zero extent.
std::size_t shape_numel(const Shape& shape);

std::string shape_str(const Shape& shape);

/// Ordered record of executed operations. Operations append themselves while
/// a tape is active (see TapeScope); backward() replays the record once in
/// reverse, accumulating gradients additively into every tracked tensor that
/// fed the loss. Repeated backward() calls without zero_grad() accumulate.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Reverse-mode replay seeded with d(loss)/d(loss) = 1. The loss must be a
  /// one-element tensor; anything else is a ContractError.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }

  /// Currently active tape, or nullptr when recording is off.
  static Tape* active();

  /// Appends one operation. `outputs` become tracked and owned by this tape;
  /// `fn` propagates gradients from the outputs' scratch buffers to the
  /// inputs it captured. Called by operation implementations only.
  void record(std::vector<detail::NodePtr> outputs, std::function<void()> fn);

private:
  struct Entry {
    std::vector<detail::NodePtr> outputs;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;

  friend class TapeScope;
};

/// RAII activation of a fresh tape. Scopes may nest; the innermost tape
/// records.
class TapeScope {
public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape& tape() { return tape_; }

private:
  Tape tape_;
  Tape* prev_;
};

/// Replays the active tape from `loss`. ContractError when no tape is active.
void backward(const Tensor& loss);

namespace detail {

/// Verifies every element is finite; NumericError otherwise. Applied to the
/// output of every forward operation.
void check_finite(const double* p, std::size_t n, const char* op);

} // namespace detail

} // namespace modlm
