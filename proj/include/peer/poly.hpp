#ifndef PEER_POLY_HPP
#define PEER_POLY_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "peer/errors.hpp"
#include "peer/matrix.hpp"

namespace peer {

// Horner evaluation of a monic polynomial z^n + coeff[0] z^{n-1} + ... +
// coeff[n-1].
inline complexd poly_eval_monic(const std::vector<complexd>& coeff,
                                complexd z) {
  complexd v(1.0, 0.0);
  for (const auto& c : coeff) v = v * z + c;
  return v;
}

inline complexd poly_deriv_monic(const std::vector<complexd>& coeff,
                                 complexd z) {
  const std::size_t n = coeff.size();
  complexd v(static_cast<double>(n), 0.0);
  for (std::size_t k = 0; k < n - 1 && n >= 1; ++k)
    v = v * z + static_cast<double>(n - 1 - k) * coeff[k];
  return n == 0 ? complexd{} : v;
}

namespace detail {

inline void polish_roots(const std::vector<complexd>& coeff,
                         std::vector<complexd>& roots) {
  for (auto& r : roots) {
    for (int it = 0; it < 8; ++it) {
      const complexd f = poly_eval_monic(coeff, r);
      const complexd df = poly_deriv_monic(coeff, r);
      if (std::abs(df) == 0.0) break;
      const complexd step = f / df;
      if (!is_finite(step)) break;
      r -= step;
      if (std::abs(step) < 1e-16 * (1.0 + std::abs(r))) break;
    }
  }
}

inline std::vector<complexd> quadratic_roots(complexd b, complexd c) {
  // z^2 + b z + c: pick the sqrt branch that avoids cancellation.
  const complexd disc = std::sqrt(b * b - 4.0 * c);
  const complexd q =
      (std::abs(b + disc) >= std::abs(b - disc)) ? -0.5 * (b + disc)
                                                 : -0.5 * (b - disc);
  if (std::abs(q) == 0.0) return {complexd{}, complexd{}};
  return {q, c / q};
}

// Cardano for z^3 + a z^2 + b z + c with branch-stable cube root choice.
inline std::vector<complexd> cubic_roots(complexd a, complexd b, complexd c) {
  const complexd s = a / 3.0;
  const complexd p = b - a * a / 3.0;
  const complexd q = c + a * (2.0 * a * a - 9.0 * b) / 27.0;
  const double scale = std::max({std::abs(p), std::abs(q), 1e-300});
  if (std::abs(p) < 1e-16 * scale && std::abs(q) < 1e-16 * scale) {
    // near triple root
    return {-s, -s, -s};
  }
  const complexd disc = std::sqrt(q * q / 4.0 + p * p * p / 27.0);
  complexd u3 = -q / 2.0 + disc;
  if (std::abs(u3) < std::abs(-q / 2.0 - disc)) u3 = -q / 2.0 - disc;
  const complexd u = std::pow(u3, 1.0 / 3.0);
  const complexd omega(-0.5, std::sqrt(3.0) / 2.0);
  std::vector<complexd> roots;
  complexd uk = u;
  for (int k = 0; k < 3; ++k) {
    const complexd t =
        (std::abs(uk) > 0.0) ? uk - p / (3.0 * uk) : std::pow(-q, 1.0 / 3.0);
    roots.push_back(t - s);
    uk *= omega;
  }
  return roots;
}

// Ferrari reduction for z^4 + a z^3 + b z^2 + c z + d.
inline std::vector<complexd> quartic_roots(complexd a, complexd b, complexd c,
                                           complexd d) {
  const complexd s = a / 4.0;
  // depressed: y^4 + p y^2 + q y + r
  const complexd p = b - 3.0 * a * a / 8.0;
  const complexd q = c - a * b / 2.0 + a * a * a / 8.0;
  const complexd r =
      d - a * c / 4.0 + a * a * b / 16.0 - 3.0 * a * a * a * a / 256.0;
  const double scale = std::max({std::abs(p), std::abs(q), std::abs(r), 1.0});
  std::vector<complexd> ys;
  if (std::abs(q) < 1e-15 * scale) {
    // biquadratic
    for (const complexd z : quadratic_roots(p, r)) {
      const complexd w = std::sqrt(z);
      ys.push_back(w);
      ys.push_back(-w);
    }
  } else {
    // resolvent m^3 + p m^2 + (p^2/4 - r) m - q^2/8 = 0, take the root of
    // largest modulus so 1/(4m) stays benign
    auto ms = cubic_roots(p, p * p / 4.0 - r, -q * q / 8.0);
    complexd m = ms[0];
    for (const auto& cand : ms)
      if (std::abs(cand) > std::abs(m)) m = cand;
    const complexd t = std::sqrt(2.0 * m);
    const complexd u = q / (4.0 * m);
    // (y^2 + p/2 + m)^2 = 2m (y - q/(4m))^2
    for (const complexd sign : {complexd(1.0, 0.0), complexd(-1.0, 0.0)}) {
      // y^2 - sign*t*y + (p/2 + m + sign*t*u) = 0
      for (const complexd y :
           quadratic_roots(-sign * t, p / 2.0 + m + sign * t * u))
        ys.push_back(y);
    }
  }
  std::vector<complexd> roots;
  roots.reserve(4);
  for (const auto& y : ys) roots.push_back(y - s);
  return roots;
}

}  // namespace detail

// Roots of the monic polynomial z^n + coeff[0] z^{n-1} + ... + coeff[n-1],
// n <= 4, Newton-polished.
inline std::vector<complexd> poly_roots(const std::vector<complexd>& coeff) {
  std::vector<complexd> roots;
  switch (coeff.size()) {
    case 0:
      return {};
    case 1:
      roots = {-coeff[0]};
      break;
    case 2:
      roots = detail::quadratic_roots(coeff[0], coeff[1]);
      break;
    case 3:
      roots = detail::cubic_roots(coeff[0], coeff[1], coeff[2]);
      break;
    case 4:
      roots = detail::quartic_roots(coeff[0], coeff[1], coeff[2], coeff[3]);
      break;
    default:
      throw UnsupportedQ("poly_roots supports degree <= 4");
  }
  detail::polish_roots(coeff, roots);
  return roots;
}

// Real roots of a real cubic a3 x^3 + a2 x^2 + a1 x + a0, sorted ascending.
inline std::vector<double> real_cubic_roots(double a3, double a2, double a1,
                                            double a0) {
  if (a3 == 0.0) throw InvariantViolation("leading coefficient zero");
  const auto rs = poly_roots({complexd(a2 / a3), complexd(a1 / a3),
                              complexd(a0 / a3)});
  std::vector<double> out;
  for (const auto& r : rs)
    if (std::abs(r.imag()) < 1e-8 * (1.0 + std::abs(r))) out.push_back(r.real());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace peer

#endif
