#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rnntd/errors.hpp"
#include "rnntd/rng.hpp"

namespace rnntd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("dot: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// out += m * x
inline void gemv_add(const Matrix& m, std::span<const double> x, std::span<double> out) {
  if (m.cols() != x.size() || m.rows() != out.size())
    throw DimensionError("gemv: matrix " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", x " + std::to_string(x.size()) +
                         ", out " + std::to_string(out.size()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    out[r] += s;
  }
}

inline Vector gemv(const Matrix& m, std::span<const double> x) {
  Vector out(m.rows(), 0.0);
  gemv_add(m, x, out);
  return out;
}

/// out += m^T * y
inline void gemv_t_add(const Matrix& m, std::span<const double> y, std::span<double> out) {
  if (m.rows() != y.size() || m.cols() != out.size())
    throw DimensionError("gemv_t: matrix " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", y " + std::to_string(y.size()) +
                         ", out " + std::to_string(out.size()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * yr;
  }
}

/// m += y * x^T
inline void outer_add(Matrix& m, std::span<const double> y, std::span<const double> x) {
  if (m.rows() != y.size() || m.cols() != x.size())
    throw DimensionError("outer: matrix " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", y " + std::to_string(y.size()) +
                         ", x " + std::to_string(x.size()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += yr * x[c];
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline bool all_finite(std::span<const double> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("log_sum_exp of empty vector");
  const double top = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - top);
  return top + std::log(s);
}

/// Numerically stable log-softmax. Throws NumericalError on non-finite logits.
inline Vector log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("log_softmax of empty vector");
  if (!all_finite(logits)) throw NumericalError("log_softmax: non-finite logit");
  const double lse = log_sum_exp(logits);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline Vector softmax(std::span<const double> logits) {
  Vector out = log_softmax(logits);
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v);
    total += v;
  }
  // One renormalization pass pulls the sum to within an ulp or two of 1.
  for (double& v : out) v /= total;
  return out;
}

/// Haar-distributed random orthogonal n x n matrix: the Q factor of a
/// Gaussian matrix, taking R with a positive diagonal.
inline Matrix orthogonal_init(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DimensionError("orthogonal_init: n must be >= 1");
  Philox rng(seed, 0x6f7274686fULL);
  // Columns of q are orthonormalized in place (modified Gram-Schmidt, two passes).
  std::vector<Vector> cols(n, Vector(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) cols[c][r] = rng.normal();

  for (std::size_t c = 0; c < n; ++c) {
    Vector& v = cols[c];
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < c; ++p) {
        const double proj = dot(cols[p], v);
        for (std::size_t i = 0; i < n; ++i) v[i] -= proj * cols[p][i];
      }
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm == 0.0) throw NumericalError("orthogonal_init: degenerate draw");
    // Gram-Schmidt yields R with a positive diagonal, which is the sign
    // convention that makes Q Haar-distributed.
    for (double& x : v) x /= norm;
  }
  Matrix q(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) q(r, c) = cols[c][r];
  return q;
}

}  // namespace rnntd
