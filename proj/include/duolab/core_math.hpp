// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "duolab/errors.hpp"

namespace duolab {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
///
/// Batches follow the column-per-sample convention: a batch of n inputs of
/// dimension m is an m x n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  Matrix transposed() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Seeded generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Uniform and normal variates are produced here rather than through
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Marsaglia polar method).
  double normal();

  /// Independent stream for a named purpose; see derive_seed.
  Rng child(std::string_view label) const { return Rng(derive_seed(seed_, label)); }

  /// splitmix64(root ^ fnv1a64(label)). Used for every sub-seed in the project.
  static std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Matrix product, rows of the result distributed over OpenMP threads.
/// Every output entry accumulates over k in ascending order, so the result is
/// identical to reference::matmul for any thread count.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols);

double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> u);

/// u.v / (|u||v|), clamped to [-1, 1]. Throws UndefinedSimilarityError if
/// either vector has zero norm.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

namespace reference {

/// Textbook i-j-k triple loop, single threaded.
Matrix matmul(const Matrix& a, const Matrix& b);

}  // namespace reference

}  // namespace duolab
