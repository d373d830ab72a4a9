#ifndef PEER_EIG_HPP
#define PEER_EIG_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "peer/errors.hpp"
#include "peer/matrix.hpp"
#include "peer/poly.hpp"

namespace peer {

// Coefficients of det(zI - M) = z^n + c[0] z^{n-1} + ... + c[n-1]
// (Faddeev-LeVerrier).
inline std::vector<complexd> characteristic_polynomial(const CMat& m) {
  if (m.rows() != m.cols())
    throw DimensionMismatch("characteristic polynomial needs square M");
  const std::size_t n = m.rows();
  std::vector<complexd> coeff(n);
  CMat mk = m;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k > 1) {
      CMat shifted = mk;
      for (std::size_t i = 0; i < n; ++i) shifted(i, i) += coeff[k - 2];
      mk = m * shifted;
    }
    complexd tr{};
    for (std::size_t i = 0; i < n; ++i) tr += mk(i, i);
    coeff[k - 1] = -tr / static_cast<double>(k);
  }
  return coeff;
}

// Eigenvalues of a matrix with n <= 4: closed-form roots of the
// characteristic polynomial, ordered by descending modulus, ties broken by
// ascending argument.
inline std::vector<complexd> eig_small(const CMat& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("eig needs square M");
  if (m.rows() > 4) throw DimensionMismatch("eig_small supports n <= 4");
  auto roots = poly_roots(characteristic_polynomial(m));
  std::sort(roots.begin(), roots.end(),
            [](const complexd& a, const complexd& b) {
              const double ma = std::abs(a), mb = std::abs(b);
              if (ma != mb) return ma > mb;
              return std::arg(a) < std::arg(b);
            });
  return roots;
}

inline std::vector<complexd> eig_small(const Mat& m) {
  return eig_small(to_complex(m));
}

template <class T>
double spectral_radius(const MatrixT<T>& m) {
  double best = 0.0;
  CMat cm(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) cm(i, j) = m(i, j);
  for (const auto& lam : eig_small(cm)) best = std::max(best, std::abs(lam));
  return best;
}

}  // namespace peer

#endif
