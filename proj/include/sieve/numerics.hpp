// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace sieve {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* ptr(std::size_t r, std::size_t c) { return data_.data() + r * cols_ + c; }
  const double* ptr(std::size_t r, std::size_t c) const { return data_.data() + r * cols_ + c; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  // Appends one row; the width must match unless the matrix is still empty.
  void append_row(std::span<const double> values);
  void resize_rows(std::size_t rows) {
    rows_ = rows;
    data_.resize(rows * cols_, 0.0);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace numerics {

// Row-parallel OpenMP kernels. Each output element is reduced in a fixed
// order, so results are bitwise identical to the serial versions below for
// any thread count.

/// c (n x m) (+)= a (n x k) * b (k x m).
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
          std::size_t k, std::size_t m, bool accumulate);
/// c (n x m) (+)= a (n x k) * b^T where b is (m x k).
void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate);
/// c (k x m) += a^T * b where a is (n x k) and b is (n x m).
void gemm_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
                 std::size_t k, std::size_t m);

Matrix matmul(const Matrix& a, const Matrix& b);

namespace serial {
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
          std::size_t k, std::size_t m, bool accumulate);
void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate);
void gemm_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
                 std::size_t k, std::size_t m);
}  // namespace serial

/// Softmax of v / tau with the maximum subtracted before exponentiation.
/// Throws NumericError on non-finite input and ConfigError on tau <= 0.
std::vector<double> stable_softmax(std::span<const double> v, double tau = 1.0);
/// In-place variant without validation, used on hot paths.
void softmax_inplace(std::span<double> v);
/// log(sum(exp(v))) with max subtraction.
double log_sum_exp(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

inline constexpr double kLayerNormEps = 1e-5;

/// y = gamma * (x - mean) * rstd + beta. Returns (mean, rstd).
std::pair<double, double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                                     std::span<const double> beta, std::span<double> y);
/// Backward of layer_norm for one row. Accumulates into dgamma/dbeta, writes dx.
void layer_norm_backward(std::span<const double> x, double mean, double rstd, std::span<const double> gamma,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta);

double gelu(double x);
double gelu_grad(double x);

bool all_finite(std::span<const double> v);

}  // namespace numerics
}  // namespace sieve
