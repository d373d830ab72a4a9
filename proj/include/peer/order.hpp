#ifndef PEER_ORDER_HPP
#define PEER_ORDER_HPP

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "peer/errors.hpp"
#include "peer/matrix.hpp"
#include "peer/method.hpp"

namespace peer {

// --- Vandermonde / Pascal / shift operator bundle --------------------------

inline Mat vandermonde(const std::vector<double>& c, std::size_t q) {
  Mat v(c.size(), q);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double p = 1.0;
    for (std::size_t j = 0; j < q; ++j) {
      v(i, j) = p;
      p *= c[i];
    }
  }
  return v;
}

// nilpotent E~_q with (E~)_{i,i+1} = i (1-based)
inline Mat nilpotent_shift(std::size_t q) {
  Mat e(q, q);
  for (std::size_t i = 0; i + 1 < q; ++i) e(i, i + 1) = static_cast<double>(i + 1);
  return e;
}

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  double r = 1.0;
  for (std::size_t i = 0; i < k; ++i)
    r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return r;
}

inline Mat pascal(std::size_t q) {
  Mat p(q, q);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = i; j < q; ++j) p(i, j) = binomial(j, i);
  return p;
}

// P^zeta = exp(zeta * E~), entrywise binom(j-1,i-1) * zeta^{j-i}
inline Mat pascal_shift(std::size_t q, double zeta) {
  Mat p(q, q);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = i; j < q; ++j)
      p(i, j) = binomial(j, i) * std::pow(zeta, static_cast<double>(j - i));
  return p;
}

inline Mat alternating_sign(std::size_t q) {
  Mat d(q, q);
  for (std::size_t i = 0; i < q; ++i) d(i, i) = (i % 2 == 0) ? 1.0 : -1.0;
  return d;
}

inline Mat flip_permutation(std::size_t s) {
  Mat p(s, s);
  for (std::size_t i = 0; i < s; ++i) p(i, s - 1 - i) = 1.0;
  return p;
}

inline Mat pascal_inverse(std::size_t q) {
  // checkerboard sign change inverts the Pascal matrix
  return alternating_sign(q) * pascal(q) * alternating_sign(q);
}

struct OrderOperators {
  Mat V;        // s x q Vandermonde
  Mat Vprime;   // columnwise derivative, equals V * E
  Mat P;        // Pascal
  Mat Pzeta;    // shifted Pascal exp(zeta E)
  Mat E;        // nilpotent shift
  Mat Delta;    // alternating sign diagonal
  Mat Pi;       // flip permutation
};

inline OrderOperators make_order_operators(const std::vector<double>& c,
                                           std::size_t q, double zeta = 1.0) {
  OrderOperators ops{vandermonde(c, q), Mat(c.size(), q), pascal(q),
                     pascal_shift(q, zeta), nilpotent_shift(q),
                     alternating_sign(q), flip_permutation(c.size())};
  ops.Vprime = ops.V * ops.E;
  return ops;
}

// --- Order conditions -------------------------------------------------------

enum class ConditionKind {
  standard_forward,
  standard_adjoint,
  start_forward,
  start_adjoint,
  last_forward,
  last_adjoint,
  endpoint_adjoint,
  endpoint_w,
  interpolant_v,
};

inline const char* condition_name(ConditionKind k) {
  switch (k) {
    case ConditionKind::standard_forward: return "standard-forward";
    case ConditionKind::standard_adjoint: return "standard-adjoint";
    case ConditionKind::start_forward: return "start-forward";
    case ConditionKind::start_adjoint: return "start-adjoint";
    case ConditionKind::last_forward: return "last-forward";
    case ConditionKind::last_adjoint: return "last-adjoint";
    case ConditionKind::endpoint_adjoint: return "endpoint-adjoint";
    case ConditionKind::endpoint_w: return "endpoint-w";
    case ConditionKind::interpolant_v: return "interpolant-v";
  }
  return "?";
}

constexpr std::array<ConditionKind, 9> all_condition_kinds{
    ConditionKind::standard_forward, ConditionKind::standard_adjoint,
    ConditionKind::start_forward,    ConditionKind::start_adjoint,
    ConditionKind::last_forward,     ConditionKind::last_adjoint,
    ConditionKind::endpoint_adjoint, ConditionKind::endpoint_w,
    ConditionKind::interpolant_v};

inline bool is_forward_kind(ConditionKind k) {
  return k == ConditionKind::standard_forward ||
         k == ConditionKind::start_forward ||
         k == ConditionKind::last_forward;
}

namespace detail {

// residual of A V - B V P^{-1} - K V E
inline Mat forward_residual(const Mat& a, const Mat& b,
                            const std::vector<double>& k, const Mat& v,
                            std::size_t q) {
  Mat r = a * v - b * v * pascal_inverse(q);
  const Mat ve = v * nilpotent_shift(q);
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < q; ++j) r(i, j) -= k[i] * ve(i, j);
  return r;
}

// residual of A' V - Bnext' V P + K V E
inline Mat adjoint_residual(const Mat& a, const Mat& b_next,
                            const std::vector<double>& k, const Mat& v,
                            std::size_t q) {
  Mat r = a.transpose() * v - b_next.transpose() * v * pascal(q);
  const Mat ve = v * nilpotent_shift(q);
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < q; ++j) r(i, j) += k[i] * ve(i, j);
  return r;
}

inline Mat row_from(const std::vector<double>& x) {
  Mat r(1, x.size());
  for (std::size_t j = 0; j < x.size(); ++j) r(0, j) = x[j];
  return r;
}

}  // namespace detail

// Maximum q at which a condition may be evaluated for an s-stage method.
// The standard pair may be probed one past s (BDF3 satisfies the adjoint
// condition at q = s+1 as well); boundary conditions stop at s.
inline std::size_t condition_q_limit(ConditionKind kind, std::size_t s) {
  if (is_forward_kind(kind) || kind == ConditionKind::standard_adjoint)
    return s + 1;
  return s;
}

// Required local order per step kind (the combined-order table).
inline std::size_t condition_required_order(ConditionKind kind,
                                            std::size_t s) {
  switch (kind) {
    case ConditionKind::standard_forward: return s + 1;
    case ConditionKind::standard_adjoint: return s;
    case ConditionKind::start_forward: return s;
    case ConditionKind::start_adjoint: return s - 1;
    case ConditionKind::last_forward: return s;
    case ConditionKind::last_adjoint: return s - 1;
    case ConditionKind::endpoint_adjoint: return s - 1;
    case ConditionKind::endpoint_w: return s;
    case ConditionKind::interpolant_v: return s;
  }
  return 0;
}

inline Mat condition_residual(ConditionKind kind, const PeerMethodSuite& suite,
                              std::size_t q) {
  const std::size_t s = suite.nodes.s();
  if (q < 1 || q > condition_q_limit(kind, s))
    throw UnsupportedQ("q out of range for condition kind");
  const Mat v = vandermonde(suite.nodes.c, q);
  switch (kind) {
    case ConditionKind::standard_forward:
      return detail::forward_residual(suite.standard.A, *suite.standard.B,
                                      suite.standard.K, v, q);
    case ConditionKind::standard_adjoint:
      return detail::adjoint_residual(suite.standard.A, *suite.standard.B,
                                      suite.standard.K, v, q);
    case ConditionKind::start_forward: {
      // A0 V = a e1' + b e2' + K0 V E
      Mat r = suite.start.A * v;
      const Mat ve = v * nilpotent_shift(q);
      for (std::size_t i = 0; i < s; ++i) {
        r(i, 0) -= suite.a[i];
        if (q >= 2) r(i, 1) -= suite.b[i];
        for (std::size_t j = 0; j < q; ++j) r(i, j) -= suite.start.K[i] * ve(i, j);
      }
      return r;
    }
    case ConditionKind::start_adjoint:
      // pairing: A0, K0 with the standard B
      return detail::adjoint_residual(suite.start.A, *suite.standard.B,
                                      suite.start.K, v, q);
    case ConditionKind::last_forward:
      return detail::forward_residual(suite.end.A, *suite.end.B, suite.end.K,
                                      v, q);
    case ConditionKind::last_adjoint:
      // pairing: standard A, K with the end B_N
      return detail::adjoint_residual(suite.standard.A, *suite.end.B,
                                      suite.standard.K, v, q);
    case ConditionKind::endpoint_adjoint: {
      // AN' V = w 1' - KN V E
      Mat r = suite.end.A.transpose() * v;
      const Mat ve = v * nilpotent_shift(q);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < q; ++j)
          r(i, j) += suite.end.K[i] * ve(i, j) - suite.w[i];
      return r;
    }
    case ConditionKind::endpoint_w: {
      std::vector<double> res(q);
      for (std::size_t j = 0; j < q; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < s; ++i) dot += suite.w[i] * v(i, j);
        res[j] = dot - 1.0;
      }
      return detail::row_from(res);
    }
    case ConditionKind::interpolant_v: {
      std::vector<double> res(q);
      for (std::size_t j = 0; j < q; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < s; ++i) dot += suite.v[i] * v(i, j);
        res[j] = dot - (j == 0 ? 1.0 : 0.0);
      }
      return detail::row_from(res);
    }
  }
  throw MissingMatrix("unreachable");
}

inline double condition_residual_norm(ConditionKind kind,
                                      const PeerMethodSuite& suite,
                                      std::size_t q) {
  return condition_residual(kind, suite, q).max_abs();
}

struct ConditionReport {
  ConditionKind kind;
  std::vector<double> residuals;  // residuals[q-1] for q = 1..q_limit
  std::size_t achieved = 0;
  std::size_t required = 0;
  bool meets = false;
};

struct OrderReport {
  std::string method;
  std::vector<ConditionReport> conditions;
  bool all_met = true;
};

inline OrderReport achieved_orders(const PeerMethodSuite& suite,
                                   double tol = 1e-8) {
  const std::size_t s = suite.nodes.s();
  OrderReport report;
  report.method = suite.name;
  for (const ConditionKind kind : all_condition_kinds) {
    ConditionReport cr;
    cr.kind = kind;
    cr.required = condition_required_order(kind, s);
    const std::size_t qmax = condition_q_limit(kind, s);
    bool chain = true;
    for (std::size_t q = 1; q <= qmax; ++q) {
      const double res = condition_residual_norm(kind, suite, q);
      cr.residuals.push_back(res);
      if (chain && res <= tol) cr.achieved = q;
      else chain = false;
    }
    cr.meets = cr.achieved >= cr.required;
    report.all_met = report.all_met && cr.meets;
    report.conditions.push_back(std::move(cr));
  }
  return report;
}

// Leading error vector eta_{q+1} = A c^{q+1} - B (c-1)^{q+1} - (q+1) K c^q
// of a standard set.
inline std::vector<double> leading_error(const StageMatrixSet& mats,
                                         const std::vector<double>& c,
                                         std::size_t q) {
  if (mats.role != StageRole::standard)
    throw InvariantViolation("leading_error expects the standard set");
  const std::size_t s = c.size();
  std::vector<double> cq(s), cq1(s), cm1q1(s);
  for (std::size_t i = 0; i < s; ++i) {
    cq[i] = std::pow(c[i], static_cast<double>(q));
    cq1[i] = cq[i] * c[i];
    cm1q1[i] = std::pow(c[i] - 1.0, static_cast<double>(q + 1));
  }
  std::vector<double> eta = mats.A.apply(cq1);
  const std::vector<double> bterm = mats.B->apply(cm1q1);
  for (std::size_t i = 0; i < s; ++i)
    eta[i] -= bterm[i] + static_cast<double>(q + 1) * mats.K[i] * cq[i];
  return eta;
}

// --- Sylvester identities ----------------------------------------------------

// residual of
// (Vq2 Pq2)' A (Vq1 Pq1) - Vq2' A Vq1
//   = (Vq2 Pq2)' K Vq1 Pq1 Eq1 + (Vq2 Eq2)' K Vq1
inline double sylvester_residual(const Mat& a, const std::vector<double>& k,
                                 const std::vector<double>& c, std::size_t q1,
                                 std::size_t q2) {
  const std::size_t s = c.size();
  if (q1 > s + 1 || q2 > s + 1) throw UnsupportedQ("q1,q2 <= s+1");
  Mat km(s, s);
  for (std::size_t i = 0; i < s; ++i) km(i, i) = k[i];
  const Mat v1 = vandermonde(c, q1), v2 = vandermonde(c, q2);
  const Mat v1p = v1 * pascal(q1), v2p = v2 * pascal(q2);
  const Mat lhs = v2p.transpose() * a * v1p - v2.transpose() * a * v1;
  const Mat rhs = v2p.transpose() * km * v1p * nilpotent_shift(q1) +
                  (v2 * nilpotent_shift(q2)).transpose() * km * v1;
  return (lhs - rhs).max_abs();
}

// Least-squares solution W of the singular Pascal congruence equation
//   P' W P - W = P' M P E~ + E~' M
// (regularized normal equations plus iterative refinement); the equation is
// always consistent, so the returned residual is at rounding level.
inline std::pair<Mat, double> plgs_solve(const Mat& m, std::size_t q) {
  if (m.rows() != q || m.cols() != q) throw DimensionMismatch("plgs M shape");
  const Mat p = pascal(q), e = nilpotent_shift(q);
  auto op = [&](const Mat& x) { return p.transpose() * x * p - x; };
  const Mat rhs_mat = p.transpose() * m * p * e + e.transpose() * m;

  const std::size_t n = q * q;
  Mat g(n, n);
  for (std::size_t k = 0; k < q; ++k)
    for (std::size_t l = 0; l < q; ++l) {
      Mat unit(q, q);
      unit(k, l) = 1.0;
      const Mat col = op(unit);
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j)
          g(i * q + j, k * q + l) = col(i, j);
    }
  Mat gtg = g.transpose() * g;
  const double lambda = 1e-12 * (1.0 + gtg.inf_norm());
  for (std::size_t i = 0; i < n; ++i) gtg(i, i) += lambda;

  Mat r(n, 1), w(n, 1);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) r(i * q + j, 0) = rhs_mat(i, j);
  Mat rho = r;
  for (int pass = 0; pass < 20; ++pass) {
    const Mat dw = solve_dense(gtg, g.transpose() * rho);
    w = w + dw;
    rho = r - g * w;
    if (rho.max_abs() <= 1e-13 * (1.0 + r.max_abs())) break;
  }
  Mat wm(q, q);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) wm(i, j) = w(i * q + j, 0);
  return {wm, rho.max_abs()};
}

// Extrapolation matrix Theta = V P V^{-1} and differentiation matrix
// E = V E~ V^{-1}; the pair commutes.
inline std::pair<Mat, Mat> theta_e_operators(const std::vector<double>& c) {
  const std::size_t s = c.size();
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = i + 1; j < s; ++j)
      if (std::abs(c[i] - c[j]) <= 1e-12)
        throw SingularMatrix("confluent nodes");
  const Mat v = vandermonde(c, s);
  const Mat vt = v.transpose();
  auto right_divide = [&](const Mat& num) {
    // num * V^{-1} = (V^{-T} num^T)^T
    return solve_dense(vt, num.transpose()).transpose();
  };
  const Mat theta = right_divide(v * pascal(s));
  const Mat e = right_divide(v * nilpotent_shift(s));
  const double comm = (theta * e - e * theta).max_abs();
  if (comm > 1e-8 * (1.0 + theta.max_abs() * e.max_abs()))
    throw Error("Theta and E fail to commute");
  return {theta, e};
}

// Lower-triangular kernel of X -> P3(V3' X V3): nontrivial iff d1 = d3.
inline std::optional<Mat> triangular_kernel(double d1, double d3) {
  if (d1 == 0.0 || d3 == 0.0)
    throw DegenerateNodes("d1, d3 must be nonzero");
  if (std::abs(d1 - d3) > 1e-12) return std::nullopt;
  const Mat x{{1, 0, 0}, {-3, 1, 0}, {3, -3, 1}};
  const Mat v = vandermonde({0.0, d1, d1 + d3}, 3);
  const Mat w = v.transpose() * x * v;
  const Mat image = pascal(3).transpose() * w * pascal(3) - w;
  if (image.max_abs() > 1e-10 * (1.0 + w.max_abs()))
    throw Error("kernel verification failed");
  return x;
}

// --- Synthesis on the Q = 0 curve -------------------------------------------

struct SynthesisResult {
  StageMatrixSet set;
  Nodes nodes;
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

// residual of the combined forward (q=4) / adjoint (q=3) conditions for a
// 3-stage standard method with nodes c = (0, d1, d1+d3); x packs the free
// coefficients (lower-triangular A, full B, K diagonal with k2 = 1/3 gauge)
inline std::vector<double> synthesis_residual(const std::vector<double>& x,
                                              const std::vector<double>& c) {
  Mat a(3, 3), b(3, 3);
  a(0, 0) = x[0];
  a(1, 0) = x[1]; a(1, 1) = x[2];
  a(2, 0) = x[3]; a(2, 1) = x[4]; a(2, 2) = x[5];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) b(i, j) = x[6 + 3 * i + j];
  const std::vector<double> k{x[15], 1.0 / 3.0, x[16]};
  const Mat rf = forward_residual(a, b, k, vandermonde(c, 4), 4);
  const Mat ra = adjoint_residual(a, b, k, vandermonde(c, 3), 3);
  std::vector<double> r;
  r.reserve(21);
  for (const double e : rf.data()) r.push_back(e);
  for (const double e : ra.data()) r.push_back(e);
  return r;
}

inline double norm_inf(const std::vector<double>& v) {
  double m = 0.0;
  for (const double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

// Solves the order-(4,3) conditions for the standard method at nodes
// c = (0, d1, d1+d3) by damped Gauss-Newton least squares from a BDF3-like
// initial guess.  Succeeds only on the Q(d1,d3) = 0 curve.
inline SynthesisResult synthesize_standard(double d1, double d3) {
  if (d1 == 0.0 || d3 == 0.0 || std::abs(d1 + d3) <= 1e-12 ||
      std::abs(d1) <= 1e-12 || std::abs(d3) <= 1e-12)
    throw DegenerateNodes("nodes must be distinct and d1,d3 nonzero");
  const std::vector<double> c{0.0, d1, d1 + d3};

  // BDF3-like initial guess
  std::vector<double> x{11.0 / 6, -3.0, 11.0 / 6, 1.5, -3.0, 11.0 / 6,
                        1.0 / 3, -1.5, 3.0, 0.0, 1.0 / 3, -1.5,
                        0.0, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<double> r = detail::synthesis_residual(x, c);
  const std::size_t m = r.size(), n = x.size();

  // conditions are linear in the coefficients, so the Jacobian is constant
  Mat jac(m, n);
  {
    const std::vector<double> r0 =
        detail::synthesis_residual(std::vector<double>(n, 0.0), c);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> e(n, 0.0);
      e[j] = 1.0;
      const std::vector<double> rj = detail::synthesis_residual(e, c);
      for (std::size_t i = 0; i < m; ++i) jac(i, j) = rj[i] - r0[i];
    }
  }

  double res_norm = detail::norm_inf(r);
  int it = 0;
  double plateau_ref = res_norm;
  int plateau_age = 0;
  for (; it < 200; ++it) {
    if (res_norm <= 1e-12) break;
    // normal equations with a whisper of Levenberg damping
    Mat jtj(n, n), jtr(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += jac(k, i) * jac(k, j);
        jtj(i, j) = s;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += jac(k, i) * r[k];
      jtr(i, 0) = -s;
      jtj(i, i) += 1e-12 * (1.0 + jtj(i, i));
    }
    const Mat dx = solve_dense(jtj, jtr);
    double t = 1.0;
    bool improved = false;
    while (t > 1e-12) {
      std::vector<double> xt = x;
      for (std::size_t i = 0; i < n; ++i) xt[i] += t * dx(i, 0);
      const std::vector<double> rt = detail::synthesis_residual(xt, c);
      const double nt = detail::norm_inf(rt);
      if (nt < res_norm) {
        x = std::move(xt);
        r = rt;
        res_norm = nt;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
    if (++plateau_age >= 10) {
      if (res_norm > (1.0 - 1e-3) * plateau_ref) break;
      plateau_ref = res_norm;
      plateau_age = 0;
    }
  }

  if (res_norm > 1e-10)
    throw NotOnCurve("order conditions unsolvable at (d1,d3)=(" +
                     std::to_string(d1) + "," + std::to_string(d3) +
                     "), residual " + std::to_string(res_norm));

  Mat a(3, 3), b(3, 3);
  a(0, 0) = x[0];
  a(1, 0) = x[1]; a(1, 1) = x[2];
  a(2, 0) = x[3]; a(2, 1) = x[4]; a(2, 2) = x[5];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) b(i, j) = x[6 + 3 * i + j];
  StageMatrixSet set{StageRole::standard, a, b,
                     {x[15], 1.0 / 3.0, x[16]}, std::nullopt};
  set.validate();
  return SynthesisResult{std::move(set), Nodes(c), res_norm, it};
}

}  // namespace peer

#endif
