#ifndef PEER_STABILITY_HPP
#define PEER_STABILITY_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "peer/eig.hpp"
#include "peer/errors.hpp"
#include "peer/matrix.hpp"
#include "peer/method.hpp"
#include "peer/order.hpp"

namespace peer {

// M(z) = (A - zK)^{-1} B
inline CMat stability_matrix(const StageMatrixSet& mats, complexd z) {
  const std::size_t s = mats.s();
  if (!mats.B) throw MissingMatrix("stability matrix needs B");
  CMat lhs = to_complex(mats.A);
  for (std::size_t i = 0; i < s; ++i) lhs(i, i) -= z * mats.K[i];
  return solve_dense(lhs, to_complex(*mats.B));
}

struct ZeroStabilityReport {
  bool stable = false;
  bool unit_eigen_semisimple = true;
  std::vector<complexd> eigenvalues;
};

// Eigenvalues of M(0) inside the closed unit disc; any on the unit circle
// must be semi-simple.
inline ZeroStabilityReport zero_stability(const StageMatrixSet& mats) {
  ZeroStabilityReport rep;
  const CMat m0 = stability_matrix(mats, complexd{});
  rep.eigenvalues = eig_small(m0);
  const std::size_t n = m0.rows();
  rep.stable = true;
  for (const auto& lam : rep.eigenvalues) {
    const double mod = std::abs(lam);
    if (mod > 1.0 + 1e-9) {
      rep.stable = false;
      continue;
    }
    if (mod >= 1.0 - 1e-8) {
      // algebraic multiplicity from the eigenvalue cluster, geometric from
      // the rank of M(0) - lambda I
      std::size_t alg = 0;
      for (const auto& mu : rep.eigenvalues)
        if (std::abs(mu - lam) < 1e-6) ++alg;
      CMat shifted = m0;
      for (std::size_t i = 0; i < n; ++i) shifted(i, i) -= lam;
      const std::size_t geo = n - numeric_rank(shifted, 1e-8);
      if (geo < alg) {
        rep.unit_eigen_semisimple = false;
        rep.stable = false;
      }
    }
  }
  return rep;
}

// A(alpha) angle by root locus: eigenvalues z of K^{-1}(A - e^{-i theta} B)
// for theta on a uniform grid; alpha = min over locus points z != 0 of
// 180 - |arg z| degrees, clamped to [0, 90].
inline double alpha_angle(const StageMatrixSet& mats, int n_theta = 2000) {
  if (!mats.B) throw MissingMatrix("alpha_angle needs B");
  const std::size_t s = mats.s();
  for (const double k : mats.K)
    if (std::abs(k) < 1e-14) throw SingularK("K must be nonsingular");
  if (!zero_stability(mats).stable)
    throw NotZeroStable("method is not zero-stable");

  const double scale = mats.A.inf_norm() + mats.B->inf_norm();
  double alpha = 90.0;
  for (int k = 0; k < n_theta; ++k) {
    const double theta =
        2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / n_theta;
    const complexd lam_inv = std::exp(complexd(0.0, -theta));
    CMat m(s, s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        m(i, j) = (mats.A(i, j) - lam_inv * (*mats.B)(i, j)) / mats.K[i];
    for (const complexd z : eig_small(m)) {
      if (std::abs(z) <= 1e-12 * scale) continue;
      const double deg = 180.0 - std::abs(std::arg(z)) * 180.0 / std::numbers::pi;
      alpha = std::min(alpha, deg);
    }
  }
  return std::clamp(alpha, 0.0, 90.0);
}

struct StabilityReport {
  bool zero_stable = false;
  bool unit_eigen_semisimple = false;
  std::optional<double> alpha_degrees;
  std::vector<complexd> m0_eigenvalues;
  // (theta, locus eigenvalues) samples backing the alpha computation
  std::vector<std::pair<double, std::vector<complexd>>> locus_samples;
  std::optional<double> norm_bound_X1;
};

inline std::vector<complexd> root_locus_eigenvalues(const StageMatrixSet& mats,
                                                    double theta) {
  const std::size_t s = mats.s();
  const complexd lam_inv = std::exp(complexd(0.0, -theta));
  CMat m(s, s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      m(i, j) = (mats.A(i, j) - lam_inv * (*mats.B)(i, j)) / mats.K[i];
  return eig_small(m);
}

// Newton projection of (d1,d3) along grad Q onto the curve Q = 0.
// Returns false when the iteration fails to reach |Q| <= 1e-10.
inline bool project_to_curve(double& d1, double& d3) {
  for (int it = 0; it < 50; ++it) {
    const double q = q_polynomial(d1, d3);
    if (std::abs(q) <= 1e-10) return true;
    const double eps = 1e-7;
    const double gx = (q_polynomial(d1 + eps, d3) - q_polynomial(d1 - eps, d3)) /
                      (2.0 * eps);
    const double gy = (q_polynomial(d1, d3 + eps) - q_polynomial(d1, d3 - eps)) /
                      (2.0 * eps);
    const double g2 = gx * gx + gy * gy;
    if (g2 < 1e-20) return false;
    double sx = -q * gx / g2, sy = -q * gy / g2;
    // cubic growth makes long steps jump between branches
    const double len = std::hypot(sx, sy);
    if (len > 0.2) { sx *= 0.2 / len; sy *= 0.2 / len; }
    d1 += sx;
    d3 += sy;
  }
  return std::abs(q_polynomial(d1, d3)) <= 1e-10;
}

struct ScanRecord {
  double d1 = 0.0, d3 = 0.0;
  double q_residual = 0.0;
  bool zero_stable = false;
  std::optional<double> alpha_degrees;
};

struct ScanBox {
  double d1_min, d1_max, d3_min, d3_max;
  bool contains(double d1, double d3) const {
    return d1 >= d1_min && d1 <= d1_max && d3 >= d3_min && d3 <= d3_max;
  }
};

struct ScanResult {
  ScanBox box{};
  int n_seeds = 0;
  std::uint64_t rng_seed = 0;
  std::vector<ScanRecord> records;
};

// Random multistart over the box, projected onto Q = 0; each surviving
// point is synthesized and classified.  Deterministic for a fixed seed.
inline ScanResult scan_q_curve(const ScanBox& box, int n_seeds,
                               std::uint64_t rng_seed, int n_theta = 2000) {
  ScanResult result{box, n_seeds, rng_seed, {}};
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> u1(box.d1_min, box.d1_max);
  std::uniform_real_distribution<double> u3(box.d3_min, box.d3_max);
  for (int k = 0; k < n_seeds; ++k) {
    double d1 = u1(rng), d3 = u3(rng);
    if (!project_to_curve(d1, d3)) continue;
    if (!box.contains(d1, d3)) continue;
    bool dup = false;
    for (const auto& rec : result.records)
      if (std::hypot(rec.d1 - d1, rec.d3 - d3) < 1e-6) { dup = true; break; }
    if (dup) continue;
    ScanRecord rec;
    rec.d1 = d1;
    rec.d3 = d3;
    rec.q_residual = q_polynomial(d1, d3);
    try {
      const SynthesisResult syn = synthesize_standard(d1, d3);
      rec.zero_stable = zero_stability(syn.set).stable;
      if (rec.zero_stable)
        rec.alpha_degrees = alpha_angle(syn.set, n_theta);
    } catch (const Error&) {
      continue;  // degenerate or unsolvable point
    }
    result.records.push_back(rec);
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const ScanRecord& a, const ScanRecord& b) {
              if (a.d1 != b.d1) return a.d1 < b.d1;
              return a.d3 < b.d3;
            });
  return result;
}

// Spectral radius of the simplified-Newton iteration matrix
// S(z) = (Atilde - zK)^{-1}(Atilde - A).
inline double contraction_radius(const StageMatrixSet& end_set, complexd z) {
  if (!end_set.Atilde) throw MissingAtilde("end set has no Atilde");
  const std::size_t s = end_set.s();
  CMat lhs = to_complex(*end_set.Atilde);
  for (std::size_t i = 0; i < s; ++i) lhs(i, i) -= z * end_set.K[i];
  const CMat rhs = to_complex(*end_set.Atilde - end_set.A);
  return spectral_radius(solve_dense(lhs, rhs));
}

// Eigenvalues of the adjoint end iteration matrix
// (Atilde' + zeta K)^{-1} (Atilde - A)'.
inline std::vector<complexd> adjoint_iteration_eigenvalues(
    const StageMatrixSet& end_set, double zeta) {
  if (!end_set.Atilde) throw MissingAtilde("end set has no Atilde");
  const std::size_t s = end_set.s();
  Mat lhs = end_set.Atilde->transpose();
  for (std::size_t i = 0; i < s; ++i) lhs(i, i) += zeta * end_set.K[i];
  const Mat rhs = (*end_set.Atilde - end_set.A).transpose();
  return eig_small(solve_dense(lhs, rhs));
}

enum class NormKind { forward, adjoint };

// ||X^{-1} A^{-1} B X||_inf (forward) or ||X^{-1} (B A^{-1})' X||_inf
// (adjoint).
inline double transformed_norm(const StageMatrixSet& mats, const Mat& x,
                               NormKind which) {
  if (!mats.B) throw MissingMatrix("transformed_norm needs B");
  Mat inner = (which == NormKind::forward)
                  ? solve_dense(mats.A, *mats.B)
                  : solve_dense(mats.A.transpose(), mats.B->transpose());
  return solve_dense(x, inner * x).inf_norm();
}

// The similarity transform that takes the BDF3 companion matrix A^{-1}B to
// real Jordan form.
inline Mat x1_transform() {
  return Mat{{1.0 / 3, 41.0 / 42, -1.0 / 12},
             {1.0 / 3, 1.0 / 3, 11.0 / 42},
             {1.0 / 3, 8.0 / 231, 2.0 / 11}};
}

inline StabilityReport stability_report(const StageMatrixSet& mats,
                                        int n_theta = 2000) {
  StabilityReport rep;
  const auto zs = zero_stability(mats);
  rep.zero_stable = zs.stable;
  rep.unit_eigen_semisimple = zs.unit_eigen_semisimple;
  rep.m0_eigenvalues = zs.eigenvalues;
  if (rep.zero_stable) {
    rep.alpha_degrees = alpha_angle(mats, n_theta);
    const int stride = std::max(1, n_theta / 64);
    for (int k = 0; k < n_theta; k += stride) {
      const double theta =
          2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / n_theta;
      rep.locus_samples.emplace_back(theta,
                                     root_locus_eigenvalues(mats, theta));
    }
  }
  if (mats.s() == 3)
    rep.norm_bound_X1 =
        transformed_norm(mats, x1_transform(), NormKind::forward);
  return rep;
}

}  // namespace peer

#endif
