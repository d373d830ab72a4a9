#ifndef PEER_MATRIX_HPP
#define PEER_MATRIX_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "peer/errors.hpp"

namespace peer {

using complexd = std::complex<double>;

namespace detail {
inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const complexd& x) {
  return std::isfinite(x.real()) && std::isfinite(x.imag());
}
inline double abs2(double x) { return x * x; }
inline double abs2(const complexd& x) { return std::norm(x); }
}  // namespace detail

// Small dense matrix, row-major storage.
template <class T>
class MatrixT {
 public:
  MatrixT() : rows_(0), cols_(0) {}

  MatrixT(std::size_t rows, std::size_t cols, T init = T{})
      : rows_(rows), cols_(cols), a_(rows * cols, init) {
    if (rows < 1 || cols < 1)
      throw DimensionMismatch("matrix dimensions must be >= 1");
  }

  MatrixT(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ < 1 || cols_ < 1)
      throw DimensionMismatch("matrix dimensions must be >= 1");
    a_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionMismatch("ragged initializer");
      for (const auto& x : r) a_.push_back(x);
    }
    check_finite();
  }

  static MatrixT identity(std::size_t n) {
    MatrixT m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  T& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return a_[i * cols_ + j];
  }

  const std::vector<T>& data() const { return a_; }

  MatrixT transpose() const {
    MatrixT r(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
    return r;
  }

  MatrixT operator+(const MatrixT& o) const {
    require_same_shape(o);
    MatrixT r = *this;
    for (std::size_t k = 0; k < a_.size(); ++k) r.a_[k] += o.a_[k];
    return r;
  }

  MatrixT operator-(const MatrixT& o) const {
    require_same_shape(o);
    MatrixT r = *this;
    for (std::size_t k = 0; k < a_.size(); ++k) r.a_[k] -= o.a_[k];
    return r;
  }

  MatrixT operator*(const MatrixT& o) const {
    if (cols_ != o.rows_) throw DimensionMismatch("matrix product shapes");
    MatrixT r(rows_, o.cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t k = 0; k < cols_; ++k) {
        const T aik = (*this)(i, k);
        for (std::size_t j = 0; j < o.cols_; ++j) r(i, j) += aik * o(k, j);
      }
    return r;
  }

  MatrixT operator*(T s) const {
    MatrixT r = *this;
    for (auto& x : r.a_) x *= s;
    return r;
  }

  std::vector<T> apply(const std::vector<T>& x) const {
    if (x.size() != cols_) throw DimensionMismatch("matrix-vector shapes");
    std::vector<T> r(rows_, T{});
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) r[i] += (*this)(i, j) * x[j];
    return r;
  }

  double inf_norm() const {
    double best = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) s += std::abs((*this)(i, j));
      best = std::max(best, s);
    }
    return best;
  }

  double max_abs() const {
    double best = 0.0;
    for (const auto& x : a_) best = std::max(best, std::abs(x));
    return best;
  }

  void check_finite() const {
    for (const auto& x : a_)
      if (!detail::is_finite(x))
        throw InvariantViolation("matrix entry not finite");
  }

 private:
  void require_same_shape(const MatrixT& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw DimensionMismatch("matrix shapes differ");
  }

  std::size_t rows_, cols_;
  std::vector<T> a_;
};

using Mat = MatrixT<double>;
using CMat = MatrixT<complexd>;

inline CMat to_complex(const Mat& m) {
  CMat r(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r(i, j) = m(i, j);
  return r;
}

template <class T>
double matrix_inf_norm(const MatrixT<T>& m) {
  return m.inf_norm();
}

// LU with partial pivoting.  Throws SingularMatrix when a pivot falls
// below 1e-14 * ||A||_inf.
template <class T>
MatrixT<T> solve_dense(MatrixT<T> a, MatrixT<T> rhs) {
  if (a.rows() != a.cols()) throw DimensionMismatch("solve needs square A");
  if (rhs.rows() != a.rows()) throw DimensionMismatch("RHS row count");
  const std::size_t n = a.rows();
  const double floor = 1e-14 * std::max(a.inf_norm(), 1e-300);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > best) { best = std::abs(a(i, k)); piv = i; }
    if (best < floor) throw SingularMatrix("pivot below threshold");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      for (std::size_t j = 0; j < rhs.cols(); ++j)
        std::swap(rhs(k, j), rhs(piv, j));
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const T f = a(i, k) / a(k, k);
      a(i, k) = T{};
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
      for (std::size_t j = 0; j < rhs.cols(); ++j) rhs(i, j) -= f * rhs(k, j);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
      T s = rhs(k, j);
      for (std::size_t i = k + 1; i < n; ++i) s -= a(k, i) * rhs(i, j);
      rhs(k, j) = s / a(k, k);
    }
  }
  return rhs;
}

template <class T>
T determinant(MatrixT<T> a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("det needs square M");
  const std::size_t n = a.rows();
  T det = T(1);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > best) { best = std::abs(a(i, k)); piv = i; }
    if (best == 0.0) return T{};
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const T f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

// Rank via Gaussian elimination with full pivoting; pivots are compared
// against tol * ||M||_inf.
template <class T>
std::size_t numeric_rank(MatrixT<T> a, double tol) {
  if (tol <= 0.0) throw InvariantViolation("rank tolerance must be > 0");
  const double floor = tol * a.inf_norm();
  const std::size_t n = a.rows(), m = a.cols();
  std::size_t rank = 0;
  for (std::size_t k = 0; k < std::min(n, m); ++k) {
    std::size_t pi = k, pj = k;
    double best = 0.0;
    for (std::size_t i = k; i < n; ++i)
      for (std::size_t j = k; j < m; ++j)
        if (std::abs(a(i, j)) > best) { best = std::abs(a(i, j)); pi = i; pj = j; }
    if (best <= floor) break;
    if (pi != k)
      for (std::size_t j = 0; j < m; ++j) std::swap(a(k, j), a(pi, j));
    if (pj != k)
      for (std::size_t i = 0; i < n; ++i) std::swap(a(i, k), a(i, pj));
    ++rank;
    for (std::size_t i = k + 1; i < n; ++i) {
      const T f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < m; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return rank;
}

}  // namespace peer

#endif
