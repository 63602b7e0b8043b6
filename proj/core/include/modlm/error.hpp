// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace modlm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor extents do not line up (matmul inner dims, axis out of range, ...).
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid configuration: bad hyperparameters, conflicting mode flags,
/// a prune that would leave fewer than k modules.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// A caller broke an operation's contract (non-scalar loss, unnormalized
/// distribution rows, index out of range).
class ContractError : public Error {
public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

/// A forward operation produced NaN/Inf, or training diverged.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Checkpoint / corpus / stats file problems: version mismatch, shape
/// mismatch, truncated payload, unreadable path.
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

} // namespace modlm
