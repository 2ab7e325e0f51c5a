// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <stdexcept>
#include <string>

namespace duolab {

/// Incompatible dimensions between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cosine similarity requested for a zero-norm vector.
class UndefinedSimilarityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A loss or gradient evaluated to NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible checkpoint / map file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition of a network transformation does not hold.
class TransformError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace duolab
