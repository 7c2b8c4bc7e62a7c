// Copyright 2026 The tgrow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tgrow/prng.hpp"

namespace tgrow {

/// Dense row-major matrix of 64-bit reals. The only numeric container in the
/// library; all model parameters and activations are instances of it.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double x : row) m(i, j++) = x;
      ++i;
    }
    return m;
  }

  static Matrix filled(std::size_t rows, std::size_t cols, double value) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
  }

  static Matrix ones(std::size_t rows, std::size_t cols) { return filled(rows, cols, 1.0); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}
inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}
}  // namespace detail

/// c[i][j] = sum_g a[i][g] * b[g][j], accumulated in ascending g. The fixed
/// accumulation order is part of the contract: appending zero rows/columns to
/// an operand cannot perturb the original partial sums.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions disagree, " +
                                            detail::shape_str(a) + " x " + detail::shape_str(b));
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t g = 0; g < a.cols(); ++g) {
      const double aig = a(i, g);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        c(i, j) += aig * b(g, j);
      }
    }
  }
  return c;
}

/// Row-wise softmax with the max subtracted before exponentiation.
inline Matrix row_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

/// out[i][j] = x[i][j] * g[j] / sqrt(mean of squares of row i). No epsilon is
/// added; a row whose mean square is exactly zero maps to the zero row.
inline Matrix rmsnorm_rows(const Matrix& x, const Matrix& g) {
  detail::require(g.rows() == 1 && g.cols() == x.cols(),
                  "rmsnorm_rows: gains must be 1x" + std::to_string(x.cols()) + ", got " +
                      detail::shape_str(g));
  Matrix out(x.rows(), x.cols());
  const double inv_cols = 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) ms += x(i, j) * x(i, j);
    ms *= inv_cols;
    if (ms == 0.0) continue;  // zero row stays zero
    const double inv_rms = 1.0 / std::sqrt(ms);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * g(0, j) * inv_rms;
  }
  return out;
}

inline Matrix relu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(0.0, x.data()[i]);
  return out;
}

/// Exact Gaussian-CDF form: x * Phi(x) with Phi computed through erf.
inline double gelu_scalar(double x) {
  return x * 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline Matrix gelu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = gelu_scalar(x.data()[i]);
  return out;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row counts disagree, " +
                                            detail::shape_str(a) + " | " + detail::shape_str(b));
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

inline Matrix concat_rows(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.cols(), "concat_rows: column counts disagree, " +
                                            detail::shape_str(a) + " | " + detail::shape_str(b));
  Matrix out(a.rows() + b.rows(), a.cols());
  std::memcpy(out.data(), a.data(), a.size() * sizeof(double));
  std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(double));
  return out;
}

/// Rows [begin, end) of a.
inline Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t end) {
  detail::require(begin <= end && end <= a.rows(),
                  "slice_rows: invalid range [" + std::to_string(begin) + "," +
                      std::to_string(end) + ") for " + detail::shape_str(a));
  Matrix out(end - begin, a.cols());
  std::memcpy(out.data(), a.data() + begin * a.cols(), out.size() * sizeof(double));
  return out;
}

/// Columns [begin, end) of a.
inline Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t end) {
  detail::require(begin <= end && end <= a.cols(),
                  "slice_cols: invalid range [" + std::to_string(begin) + "," +
                      std::to_string(end) + ") for " + detail::shape_str(a));
  Matrix out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = a(i, j);
  return out;
}

inline Matrix scale(const Matrix& a, double c) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::require(a.same_shape(b), "add: shapes disagree, " + detail::shape_str(a) + " + " +
                                       detail::shape_str(b));
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  detail::require(a.same_shape(b), "sub: shapes disagree, " + detail::shape_str(a) + " - " +
                                       detail::shape_str(b));
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::require(a.same_shape(b), "hadamard: shapes disagree, " + detail::shape_str(a) +
                                       " * " + detail::shape_str(b));
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// x + row broadcast along the sequence dimension (b is 1 x cols).
inline Matrix add_row_broadcast(const Matrix& x, const Matrix& b) {
  detail::require(b.rows() == 1 && b.cols() == x.cols(),
                  "add_row_broadcast: bias must be 1x" + std::to_string(x.cols()) + ", got " +
                      detail::shape_str(b));
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) + b(0, j);
  return out;
}

/// 1 x cols vector of column sums (the adjoint of a row broadcast).
inline Matrix col_sums(const Matrix& x) {
  Matrix out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  return out;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require(a.same_shape(b), "max_abs_diff: shapes disagree, " + detail::shape_str(a) +
                                       " vs " + detail::shape_str(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Byte-level equality (distinguishes -0.0 from +0.0 unlike operator==).
inline bool bits_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, Prng& rng, double stddev) {
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = rng.next_normal() * stddev;
  return out;
}

}  // namespace tgrow
