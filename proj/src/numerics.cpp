// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sieve/errors.hpp"

namespace sieve {

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw ShapeError("append_row: width " + std::to_string(values.size()) + " != " + std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

namespace numerics {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

void check_sizes(std::size_t a, std::size_t b, std::size_t c, std::size_t na, std::size_t nb, std::size_t nc) {
  if (a < na || b < nb || c < nc) throw ShapeError("gemm: operand spans smaller than the stated shape");
}
}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n, std::size_t k,
          std::size_t m, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), n * k, k * m, n * m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m >= kParallelWork && n > 1)
  for (long i = 0; i < rows; ++i) {
    double* ci = pc + i * m;
    if (!accumulate) std::fill(ci, ci + m, 0.0);
    const double* ai = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* bp = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += s * bp[j];
    }
  }
}

void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), n * k, m * k, n * m);
  // Transposing b turns the per-element dot products into contiguous axpys.
  // The summation order over k is unchanged.
  std::vector<double> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b[j * k + p];
  gemm(a, bt, c, n, k, m, accumulate);
}

void gemm_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
                 std::size_t k, std::size_t m) {
  check_sizes(a.size(), b.size(), c.size(), n * k, n * m, k * m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long krows = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (n * k * m >= kParallelWork && k > 1)
  for (long p = 0; p < krows; ++p) {
    double* cp = pc + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* bi = pb + i * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += s * bi[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  gemm(a.values(), b.values(), c.values(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n, std::size_t k,
          std::size_t m, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), n * k, k * m, n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  }
}

void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), n * k, m * k, n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] = s;
    }
  }
}

void gemm_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
                 std::size_t k, std::size_t m) {
  check_sizes(a.size(), b.size(), c.size(), n * k, n * m, k * m);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = c[p * m + j];
      for (std::size_t i = 0; i < n; ++i) {
        if (a[i * k + p] == 0.0) continue;
        s += a[i * k + p] * b[i * m + j];
      }
      c[p * m + j] = s;
    }
  }
}

}  // namespace serial

std::vector<double> stable_softmax(std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw ConfigError("stable_softmax: temperature must be positive");
  if (v.empty()) return {};
  if (!all_finite(v)) throw NumericError("stable_softmax: non-finite input");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / tau;
  softmax_inplace(out);
  return out;
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (double& x : v) x *= inv;
}

double log_sum_exp(std::span<const double> v) {
  double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

std::pair<double, double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                                     std::span<const double> beta, std::span<double> y) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gamma[i] * ((x[i] - mean) * rstd) + beta[i];
  return {mean, rstd};
}

void layer_norm_backward(std::span<const double> x, double mean, double rstd, std::span<const double> gamma,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta) {
  const std::size_t d = x.size();
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    const double dxhat = dy[i] * gamma[i];
    dgamma[i] += dy[i] * xhat;
    dbeta[i] += dy[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    const double dxhat = dy[i] * gamma[i];
    dx[i] = rstd * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
  }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
}

// tanh approximation; smooth everywhere, which the finite-difference checks rely on.
double gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace numerics
}  // namespace sieve
