#ifndef PEER_KKT_HPP
#define PEER_KKT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "peer/errors.hpp"
#include "peer/matrix.hpp"
#include "peer/method.hpp"

namespace peer {

using Vec = std::vector<double>;

// Two-point boundary value problem in eliminated form:
//   y' = g(y, p),   y(0) = y0
//   p' = phi(y, p), p(T) = terminal_p(y(T))
// Analytic Jacobians are optional; finite differences fill the gaps.
struct BVProblem {
  std::size_t m = 0;
  double T = 0.0;
  Vec y0;
  std::function<Vec(const Vec&, const Vec&)> g;
  std::function<Vec(const Vec&, const Vec&)> phi;
  std::function<Vec(const Vec&)> terminal_p;
  std::function<Mat(const Vec&, const Vec&)> dg_dy;
  std::function<Mat(const Vec&, const Vec&)> dg_dp;
  std::function<Mat(const Vec&, const Vec&)> dphi_dy;
  std::function<Mat(const Vec&, const Vec&)> dphi_dp;
};

struct Grid {
  std::size_t N = 2;
  double T = 1.0;
  double h = 1.0 / 3.0;
  // stage time of node ci within step n
  double stage_time(std::size_t n, double ci) const {
    return (static_cast<double>(n) + ci) * h;
  }
};

// Steps n = 0..N with the end point y_h(T) one step beyond t_N.
inline Grid make_grid(std::size_t n_steps, double t_final) {
  if (n_steps < 2) throw InvariantViolation("grid needs N >= 2");
  Grid grid;
  grid.N = n_steps;
  grid.T = t_final;
  grid.h = t_final / static_cast<double>(n_steps + 1);
  if (!(grid.h > 0.0)) throw InvariantViolation("grid needs h > 0");
  return grid;
}

struct IterationStats {
  std::size_t sweeps = 0;
  std::size_t newton_iterations = 0;
  bool used_global_newton = false;
  std::vector<double> sweep_updates;
};

struct DiscreteSolution {
  Grid grid;
  std::vector<Vec> Y;  // (N+1) blocks of s*m stage states
  std::vector<Vec> P;  // (N+1) blocks of s*m stage adjoints
  Vec yh_T;
  Vec ph_0;
  double residual_norm = 0.0;
  IterationStats stats;
};

struct SolveOptions {
  std::size_t max_sweeps = 60;
  double update_tol = 1e-12;
  double residual_tol = 1e-11;
  std::size_t stall_window = 5;
  double stall_ratio = 0.9;
  bool allow_global_newton = true;
  std::size_t max_newton = 80;
};

namespace detail {

inline double vec_inf_norm(const Vec& v) {
  double r = 0.0;
  for (const double x : v) r = std::max(r, std::abs(x));
  return r;
}

inline bool vec_finite(const Vec& v) {
  for (const double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check_finite(const Vec& v, const char* where) {
  if (!vec_finite(v))
    throw InvariantViolation(std::string("nonfinite value in ") + where);
}

// central finite differences, step 1e-7 * (1 + |x_k|)
inline Mat jac_fd(const std::function<Vec(const Vec&)>& f, const Vec& x,
                  std::size_t m_out) {
  Mat j(m_out, x.size());
  Vec xp = x, xm = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double eps = 1e-7 * (1.0 + std::abs(x[k]));
    xp[k] = x[k] + eps;
    xm[k] = x[k] - eps;
    const Vec fp = f(xp), fm = f(xm);
    for (std::size_t r = 0; r < m_out; ++r)
      j(r, k) = (fp[r] - fm[r]) / (2.0 * eps);
    xp[k] = x[k];
    xm[k] = x[k];
  }
  return j;
}

inline bool lower_triangular(const Mat& a) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (a(i, j) != 0.0) return false;
  return true;
}

}  // namespace detail

inline Mat jac_g_y(const BVProblem& pr, const Vec& y, const Vec& p) {
  if (pr.dg_dy) return pr.dg_dy(y, p);
  return detail::jac_fd([&](const Vec& yy) { return pr.g(yy, p); }, y, pr.m);
}

inline Mat jac_g_p(const BVProblem& pr, const Vec& y, const Vec& p) {
  if (pr.dg_dp) return pr.dg_dp(y, p);
  return detail::jac_fd([&](const Vec& pp) { return pr.g(y, pp); }, p, pr.m);
}

inline Mat jac_phi_y(const BVProblem& pr, const Vec& y, const Vec& p) {
  if (pr.dphi_dy) return pr.dphi_dy(y, p);
  return detail::jac_fd([&](const Vec& yy) { return pr.phi(yy, p); }, y, pr.m);
}

inline Mat jac_phi_p(const BVProblem& pr, const Vec& y, const Vec& p) {
  if (pr.dphi_dp) return pr.dphi_dp(y, p);
  return detail::jac_fd([&](const Vec& pp) { return pr.phi(y, pp); }, p, pr.m);
}

inline Mat jac_terminal(const BVProblem& pr, const Vec& y) {
  return detail::jac_fd([&](const Vec& yy) { return pr.terminal_p(yy); }, y,
                        pr.m);
}

// (M tensor I_m) applied to a block of stage vectors
inline Vec apply_block(const Mat& mat, const Vec& x, std::size_t m) {
  const std::size_t s = mat.rows();
  if (x.size() != mat.cols() * m) throw DimensionMismatch("apply_block");
  Vec r(s * m, 0.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < mat.cols(); ++j) {
      const double a = mat(i, j);
      if (a == 0.0) continue;
      for (std::size_t k = 0; k < m; ++k) r[i * m + k] += a * x[j * m + k];
    }
  return r;
}

namespace detail {

// Solves the stage-coupled system
//   sum_j M(i,j) X_j = rhs_i + c_i * f(i, X_i),   X_i in R^m,
// by Newton iteration with the triangular matrix Mt in the Jacobian:
//   (Mt(i,i) I - c_i Jf(i, X_i)) dX_i = -F_i - sum_{j before i} Mt(i,j) dX_j.
// `lower` selects the substitution order (ascending for lower triangular Mt,
// descending for upper triangular).
template <class F, class JF>
Vec solve_stage_system(const Mat& M, const Mat& Mt, const Vec& coef,
                       const Vec& rhs, std::size_t m, F&& f, JF&& jf, Vec x,
                       bool lower) {
  const std::size_t s = M.rows();

  auto residual = [&](const Vec& xv, Vec& out) -> double {
    out.assign(s * m, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
      const Vec xi(xv.begin() + i * m, xv.begin() + (i + 1) * m);
      const Vec fi = f(i, xi);
      for (std::size_t k = 0; k < m; ++k) {
        double acc = -rhs[i * m + k] - coef[i] * fi[k];
        for (std::size_t j = 0; j < s; ++j)
          if (M(i, j) != 0.0) acc += M(i, j) * xv[j * m + k];
        out[i * m + k] = acc;
      }
    }
    if (!vec_finite(out)) return std::numeric_limits<double>::infinity();
    return vec_inf_norm(out);
  };

  Vec fres, trial_res;
  double norm = residual(x, fres);
  if (!std::isfinite(norm))
    throw InvariantViolation("nonfinite residual at stage solve entry");

  for (std::size_t it = 0; it < 50; ++it) {
    if (norm <= 1e-13 * (1.0 + vec_inf_norm(x))) return x;
    Vec dx(s * m, 0.0);
    for (std::size_t step = 0; step < s; ++step) {
      const std::size_t i = lower ? step : s - 1 - step;
      const Vec xi(x.begin() + i * m, x.begin() + (i + 1) * m);
      Mat block = jf(i, xi) * (-coef[i]);
      for (std::size_t k = 0; k < m; ++k) block(k, k) += Mt(i, i);
      Mat r(m, 1);
      for (std::size_t k = 0; k < m; ++k) {
        double acc = -fres[i * m + k];
        for (std::size_t j = 0; j < s; ++j) {
          if (j == i || Mt(i, j) == 0.0) continue;
          acc -= Mt(i, j) * dx[j * m + k];
        }
        r(k, 0) = acc;
      }
      Mat sol(m, 1);
      try {
        sol = solve_dense(block, r);
      } catch (const SingularMatrix&) {
        throw SingularStageJacobian("singular stage Jacobian");
      }
      for (std::size_t k = 0; k < m; ++k) dx[i * m + k] = sol(k, 0);
    }

    double lambda = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 30; ++halvings) {
      Vec trial = x;
      for (std::size_t k = 0; k < trial.size(); ++k)
        trial[k] += lambda * dx[k];
      const double trial_norm = residual(trial, trial_res);
      if (trial_norm < norm ||
          trial_norm <= 1e-13 * (1.0 + vec_inf_norm(trial))) {
        x = std::move(trial);
        fres = trial_res;
        norm = trial_norm;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) throw NewtonDivergence("stage Newton damping exhausted");
  }
  if (norm <= 1e-13 * (1.0 + vec_inf_norm(x))) return x;
  throw NewtonDivergence("stage Newton iteration cap reached");
}

}  // namespace detail

// One forward step: A Y = rhs + h K G(Y, P) with the stage adjoints frozen.
// Full A needs Atilde for the simplified-Newton Jacobian.
inline Vec forward_step(const StageMatrixSet& mats, const Vec& rhs,
                        const Vec& p_stages, double h, const BVProblem& prob,
                        Vec guess) {
  const std::size_t s = mats.s();
  const std::size_t m = prob.m;
  const Mat* mt = &mats.A;
  if (!detail::lower_triangular(mats.A)) {
    if (!mats.Atilde) throw MissingAtilde("full A needs Atilde");
    mt = &*mats.Atilde;
  } else if (mats.Atilde) {
    mt = &*mats.Atilde;
  }
  Vec coef(s);
  for (std::size_t i = 0; i < s; ++i) coef[i] = h * mats.K[i];
  auto f = [&](std::size_t i, const Vec& yi) {
    const Vec pi(p_stages.begin() + i * m, p_stages.begin() + (i + 1) * m);
    return prob.g(yi, pi);
  };
  auto jf = [&](std::size_t i, const Vec& yi) {
    const Vec pi(p_stages.begin() + i * m, p_stages.begin() + (i + 1) * m);
    return jac_g_y(prob, yi, pi);
  };
  return detail::solve_stage_system(mats.A, *mt, coef, rhs, m, f, jf,
                                    std::move(guess), true);
}

// One adjoint step: A' P = rhs - h K Phi(Y, P) with the stage states frozen.
inline Vec adjoint_step(const StageMatrixSet& mats, const Vec& rhs,
                        const Vec& y_stages, double h, const BVProblem& prob,
                        Vec guess) {
  const std::size_t s = mats.s();
  const std::size_t m = prob.m;
  const Mat at = mats.A.transpose();
  const Mat att = mats.Atilde ? mats.Atilde->transpose() : at;
  if (!detail::lower_triangular(mats.A) && !mats.Atilde)
    throw MissingAtilde("full A needs Atilde");
  Vec coef(s);
  for (std::size_t i = 0; i < s; ++i) coef[i] = -h * mats.K[i];
  auto f = [&](std::size_t i, const Vec& pi) {
    const Vec yi(y_stages.begin() + i * m, y_stages.begin() + (i + 1) * m);
    return prob.phi(yi, pi);
  };
  auto jf = [&](std::size_t i, const Vec& pi) {
    const Vec yi(y_stages.begin() + i * m, y_stages.begin() + (i + 1) * m);
    return jac_phi_p(prob, yi, pi);
  };
  return detail::solve_stage_system(at, att, coef, rhs, m, f, jf,
                                    std::move(guess), false);
}

// a tensor y0 + h b tensor g(y0, ph0)
inline Vec start_rhs(const PeerMethodSuite& suite, const BVProblem& prob,
                     const Vec& ph0, double h) {
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  const Vec g0 = prob.g(prob.y0, ph0);
  detail::check_finite(g0, "g(y0, p_h(0))");
  Vec rhs(s * m);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < m; ++k)
      rhs[i * m + k] = suite.a[i] * prob.y0[k] + h * suite.b[i] * g0[k];
  return rhs;
}

inline Vec combine_stages(const std::vector<double>& weights, const Vec& block,
                          std::size_t m) {
  Vec r(m, 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i)
    for (std::size_t k = 0; k < m; ++k)
      r[k] += weights[i] * block[i * m + k];
  return r;
}

struct KKTResidual {
  double start_forward = 0.0;
  double interior_forward = 0.0;
  double end_forward = 0.0;
  double interior_adjoint = 0.0;
  double end_adjoint = 0.0;
  double boundary = 0.0;
  double max() const {
    return std::max({start_forward, interior_forward, end_forward,
                     interior_adjoint, end_adjoint, boundary});
  }
};

namespace detail {

inline const StageMatrixSet& step_set(const PeerMethodSuite& suite,
                                      std::size_t n, std::size_t n_last) {
  if (n == 0) return suite.start;
  if (n == n_last) return suite.end;
  return suite.standard;
}

// Residual blocks of the full coupled system, one (2sm)-vector per step:
// forward equations first, adjoint equations second.  Also fills the
// per-group norms.
inline std::vector<Vec> kkt_residual_blocks(const PeerMethodSuite& suite,
                                            const BVProblem& prob,
                                            const Grid& grid,
                                            const std::vector<Vec>& Y,
                                            const std::vector<Vec>& P,
                                            KKTResidual& groups) {
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  const std::size_t N = grid.N;
  const double h = grid.h;
  groups = KKTResidual{};

  const Vec ph0 = combine_stages(suite.v, P[0], m);
  const Vec yht = combine_stages(suite.w, Y[N], m);
  const Vec pht = prob.terminal_p(yht);

  std::vector<Vec> blocks(N + 1, Vec(2 * s * m, 0.0));
  for (std::size_t n = 0; n <= N; ++n) {
    const StageMatrixSet& fwd = step_set(suite, n, N);
    Vec rf = apply_block(fwd.A, Y[n], m);
    Vec rhs;
    if (n == 0)
      rhs = start_rhs(suite, prob, ph0, h);
    else
      rhs = apply_block(*fwd.B, Y[n - 1], m);
    for (std::size_t i = 0; i < s; ++i) {
      const Vec yi(Y[n].begin() + i * m, Y[n].begin() + (i + 1) * m);
      const Vec pi(P[n].begin() + i * m, P[n].begin() + (i + 1) * m);
      const Vec gi = prob.g(yi, pi);
      for (std::size_t k = 0; k < m; ++k)
        rf[i * m + k] -= rhs[i * m + k] + h * fwd.K[i] * gi[k];
    }

    const StageMatrixSet& adj = step_set(suite, n, N);
    Vec ra = apply_block(adj.A.transpose(), P[n], m);
    Vec rhs_a(s * m);
    if (n == N) {
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t k = 0; k < m; ++k)
          rhs_a[i * m + k] = suite.w[i] * pht[k];
    } else {
      const StageMatrixSet& next = step_set(suite, n + 1, N);
      rhs_a = apply_block(next.B->transpose(), P[n + 1], m);
    }
    for (std::size_t i = 0; i < s; ++i) {
      const Vec yi(Y[n].begin() + i * m, Y[n].begin() + (i + 1) * m);
      const Vec pi(P[n].begin() + i * m, P[n].begin() + (i + 1) * m);
      const Vec fi = prob.phi(yi, pi);
      for (std::size_t k = 0; k < m; ++k)
        ra[i * m + k] -= rhs_a[i * m + k] - h * adj.K[i] * fi[k];
    }

    std::copy(rf.begin(), rf.end(), blocks[n].begin());
    std::copy(ra.begin(), ra.end(), blocks[n].begin() + s * m);

    const double nf = vec_inf_norm(rf);
    const double na = vec_inf_norm(ra);
    if (n == 0)
      groups.start_forward = std::max(groups.start_forward, nf);
    else if (n == N)
      groups.end_forward = std::max(groups.end_forward, nf);
    else
      groups.interior_forward = std::max(groups.interior_forward, nf);
    if (n == N)
      groups.end_adjoint = std::max(groups.end_adjoint, na);
    else
      groups.interior_adjoint = std::max(groups.interior_adjoint, na);
  }
  return blocks;
}

inline double z_inf_norm(const std::vector<Vec>& Y, const std::vector<Vec>& P) {
  double r = 0.0;
  for (const auto& b : Y) r = std::max(r, vec_inf_norm(b));
  for (const auto& b : P) r = std::max(r, vec_inf_norm(b));
  return r;
}

inline double blocks_norm(const std::vector<Vec>& blocks) {
  double r = 0.0;
  for (const auto& b : blocks) {
    if (!vec_finite(b)) return std::numeric_limits<double>::infinity();
    r = std::max(r, vec_inf_norm(b));
  }
  return r;
}

// Global Newton on the interleaved (Y_n, P_n) system.  The Jacobian is block
// tridiagonal with 2sm blocks; solved by block Thomas elimination.
inline bool global_newton(const PeerMethodSuite& suite, const BVProblem& prob,
                          const Grid& grid, std::vector<Vec>& Y,
                          std::vector<Vec>& P, const SolveOptions& opt,
                          IterationStats& stats) {
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  const std::size_t N = grid.N;
  const double h = grid.h;
  const std::size_t bs = 2 * s * m;

  KKTResidual groups;
  auto blocks = kkt_residual_blocks(suite, prob, grid, Y, P, groups);
  double norm = blocks_norm(blocks);

  for (std::size_t it = 0; it < opt.max_newton; ++it) {
    if (norm <= opt.residual_tol * (1.0 + z_inf_norm(Y, P))) return true;
    if (!std::isfinite(norm)) return false;

    const Vec ph0 = combine_stages(suite.v, P[0], m);
    const Vec yht = combine_stages(suite.w, Y[N], m);
    const Mat jgp0 = jac_g_p(prob, prob.y0, ph0);
    const Mat jterm = jac_terminal(prob, yht);

    std::vector<Mat> diag(N + 1, Mat(bs, bs));
    std::vector<Mat> sub(N + 1, Mat(bs, bs));    // coupling to block n-1
    std::vector<Mat> super(N + 1, Mat(bs, bs));  // coupling to block n+1

    for (std::size_t n = 0; n <= N; ++n) {
      const StageMatrixSet& set = step_set(suite, n, N);
      Mat& d = diag[n];
      for (std::size_t i = 0; i < s; ++i) {
        const Vec yi(Y[n].begin() + i * m, Y[n].begin() + (i + 1) * m);
        const Vec pi(P[n].begin() + i * m, P[n].begin() + (i + 1) * m);
        const Mat jgy = jac_g_y(prob, yi, pi);
        const Mat jgp = jac_g_p(prob, yi, pi);
        const Mat jpy = jac_phi_y(prob, yi, pi);
        const Mat jpp = jac_phi_p(prob, yi, pi);
        for (std::size_t j = 0; j < s; ++j) {
          for (std::size_t k = 0; k < m; ++k)
            for (std::size_t l = 0; l < m; ++l) {
              const double id = (k == l) ? 1.0 : 0.0;
              // forward rows, Y columns
              double val = set.A(i, j) * id;
              if (i == j) val -= h * set.K[i] * jgy(k, l);
              d(i * m + k, j * m + l) = val;
              // forward rows, P columns
              double vfp = (i == j) ? -h * set.K[i] * jgp(k, l) : 0.0;
              if (n == 0) vfp -= h * suite.b[i] * suite.v[j] * jgp0(k, l);
              d(i * m + k, s * m + j * m + l) = vfp;
              // adjoint rows, P columns
              double vap = set.A(j, i) * id;
              if (i == j) vap += h * set.K[i] * jpp(k, l);
              d(s * m + i * m + k, s * m + j * m + l) = vap;
              // adjoint rows, Y columns
              double vay = (i == j) ? h * set.K[i] * jpy(k, l) : 0.0;
              if (n == N)
                vay -= suite.w[i] * suite.w[j] * jterm(k, l);
              d(s * m + i * m + k, j * m + l) = vay;
            }
        }
      }
      if (n > 0) {
        const Mat& b = *set.B;
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j)
            for (std::size_t k = 0; k < m; ++k)
              sub[n](i * m + k, j * m + k) = -b(i, j);
      }
      if (n < N) {
        const Mat& bn = *step_set(suite, n + 1, N).B;
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j)
            for (std::size_t k = 0; k < m; ++k)
              super[n](s * m + i * m + k, s * m + j * m + k) = -bn(j, i);
      }
    }

    // block Thomas: forward elimination then back substitution
    std::vector<Mat> dmod(N + 1, Mat(bs, bs));
    std::vector<Mat> rmod(N + 1, Mat(bs, 1));
    for (std::size_t n = 0; n <= N; ++n) {
      Mat r(bs, 1);
      for (std::size_t k = 0; k < bs; ++k) r(k, 0) = -blocks[n][k];
      if (n == 0) {
        dmod[0] = diag[0];
        rmod[0] = r;
      } else {
        Mat ug = solve_dense(dmod[n - 1], super[n - 1]);
        Mat rg = solve_dense(dmod[n - 1], rmod[n - 1]);
        dmod[n] = diag[n] - sub[n] * ug;
        rmod[n] = r - sub[n] * rg;
      }
    }
    std::vector<Vec> dz(N + 1, Vec(bs, 0.0));
    {
      Mat x = solve_dense(dmod[N], rmod[N]);
      for (std::size_t k = 0; k < bs; ++k) dz[N][k] = x(k, 0);
    }
    for (std::size_t n = N; n-- > 0;) {
      Mat r = rmod[n];
      for (std::size_t k = 0; k < bs; ++k)
        for (std::size_t l = 0; l < bs; ++l)
          r(k, 0) -= super[n](k, l) * dz[n + 1][l];
      Mat x = solve_dense(dmod[n], r);
      for (std::size_t k = 0; k < bs; ++k) dz[n][k] = x(k, 0);
    }

    double lambda = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 30; ++halvings) {
      std::vector<Vec> ty = Y, tp = P;
      for (std::size_t n = 0; n <= N; ++n)
        for (std::size_t i = 0; i < s * m; ++i) {
          ty[n][i] += lambda * dz[n][i];
          tp[n][i] += lambda * dz[n][s * m + i];
        }
      KKTResidual tg;
      auto tblocks = kkt_residual_blocks(suite, prob, grid, ty, tp, tg);
      const double tnorm = blocks_norm(tblocks);
      if (tnorm < norm ||
          tnorm <= opt.residual_tol * (1.0 + z_inf_norm(ty, tp))) {
        Y = std::move(ty);
        P = std::move(tp);
        blocks = std::move(tblocks);
        norm = tnorm;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    ++stats.newton_iterations;
    if (!accepted) return false;
  }
  return norm <= opt.residual_tol * (1.0 + z_inf_norm(Y, P));
}

}  // namespace detail

inline KKTResidual kkt_residual(const PeerMethodSuite& suite,
                                const BVProblem& prob,
                                const DiscreteSolution& sol) {
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  if (sol.Y.size() != sol.grid.N + 1 || sol.P.size() != sol.Y.size())
    throw DimensionMismatch("solution step count");
  for (const auto& b : sol.Y)
    if (b.size() != s * m) throw DimensionMismatch("stage block size");
  for (const auto& b : sol.P)
    if (b.size() != s * m) throw DimensionMismatch("stage block size");
  KKTResidual groups;
  detail::kkt_residual_blocks(suite, prob, sol.grid, sol.Y, sol.P, groups);
  // boundary couplings: stored end point and interpolant vs their formulas
  const Vec yht = combine_stages(suite.w, sol.Y[sol.grid.N], m);
  const Vec ph0 = combine_stages(suite.v, sol.P[0], m);
  for (std::size_t k = 0; k < m; ++k) {
    if (!sol.yh_T.empty())
      groups.boundary =
          std::max(groups.boundary, std::abs(sol.yh_T[k] - yht[k]));
    if (!sol.ph_0.empty())
      groups.boundary =
          std::max(groups.boundary, std::abs(sol.ph_0[k] - ph0[k]));
  }
  return groups;
}

namespace detail {

inline DiscreteSolution solve_kkt_impl(const PeerMethodSuite& suite,
                                       const BVProblem& prob, std::size_t N,
                                       const SolveOptions& opt,
                                       const std::vector<Vec>* y_guess,
                                       const std::vector<Vec>* p_guess,
                                       int depth);

// interpolated prolongation of a coarse solve used as a Newton starting point
inline void coarse_continuation_guess(const PeerMethodSuite& suite,
                                      const BVProblem& prob, std::size_t N,
                                      const SolveOptions& opt, int depth,
                                      std::vector<Vec>& Y, std::vector<Vec>& P);

// starting point from a converged solve with an auxiliary discretization
inline void auxiliary_suite_guess(const PeerMethodSuite& suite,
                                  const BVProblem& prob, std::size_t N,
                                  const SolveOptions& opt, std::vector<Vec>& Y,
                                  std::vector<Vec>& P);

inline DiscreteSolution solve_kkt_impl(const PeerMethodSuite& suite,
                                       const BVProblem& prob, std::size_t N,
                                       const SolveOptions& opt,
                                       const std::vector<Vec>* y_guess,
                                       const std::vector<Vec>* p_guess,
                                       int depth) {
  if (N < 2) throw InvariantViolation("solve_kkt needs N >= 2");
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  if (prob.y0.size() != m) throw DimensionMismatch("y0 size");
  const Grid grid = make_grid(N, prob.T);
  const double h = grid.h;

  DiscreteSolution sol;
  sol.grid = grid;
  sol.Y.assign(N + 1, Vec(s * m));
  sol.P.assign(N + 1, Vec(s * m, 0.0));
  for (std::size_t n = 0; n <= N; ++n)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k = 0; k < m; ++k)
        sol.Y[n][i * m + k] = prob.y0[k];
  if (y_guess) sol.Y = *y_guess;
  if (p_guess) sol.P = *p_guess;

  std::vector<Vec> best_y = sol.Y, best_p = sol.P;
  double best_norm = std::numeric_limits<double>::infinity();
  bool sweeps_converged = false;
  bool sweeps_failed = false;

  for (std::size_t sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    const std::vector<Vec> prev_y = sol.Y, prev_p = sol.P;
    try {
      // forward sweep with the current adjoints frozen
      const Vec ph0 = combine_stages(suite.v, sol.P[0], m);
      sol.Y[0] = forward_step(suite.start, start_rhs(suite, prob, ph0, h),
                              sol.P[0], h, prob, sol.Y[0]);
      for (std::size_t n = 1; n <= N; ++n) {
        const StageMatrixSet& set = step_set(suite, n, N);
        sol.Y[n] = forward_step(set, apply_block(*set.B, sol.Y[n - 1], m),
                                sol.P[n], h, prob, sol.Y[n]);
      }
      // backward adjoint sweep
      const Vec yht = combine_stages(suite.w, sol.Y[N], m);
      const Vec pht = prob.terminal_p(yht);
      check_finite(pht, "terminal_p");
      Vec rhs(s * m);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t k = 0; k < m; ++k)
          rhs[i * m + k] = suite.w[i] * pht[k];
      sol.P[N] = adjoint_step(suite.end, rhs, sol.Y[N], h, prob, sol.P[N]);
      for (std::size_t n = N; n-- > 0;) {
        const StageMatrixSet& set = step_set(suite, n, N);
        const StageMatrixSet& next = step_set(suite, n + 1, N);
        sol.P[n] = adjoint_step(
            set, apply_block(next.B->transpose(), sol.P[n + 1], m), sol.Y[n],
            h, prob, sol.P[n]);
      }
    } catch (const Error&) {
      sweeps_failed = true;
      break;
    }

    double update = 0.0;
    for (std::size_t n = 0; n <= N; ++n)
      for (std::size_t i = 0; i < s * m; ++i)
        update = std::max({update, std::abs(sol.Y[n][i] - prev_y[n][i]),
                           std::abs(sol.P[n][i] - prev_p[n][i])});
    sol.stats.sweep_updates.push_back(update);
    ++sol.stats.sweeps;

    const double scale = 1.0 + z_inf_norm(sol.Y, sol.P);
    if (!std::isfinite(update) || update > 1e6 * scale) {
      sweeps_failed = true;
      break;
    }
    if (update < best_norm) {
      best_norm = update;
      best_y = sol.Y;
      best_p = sol.P;
    }
    if (update <= opt.update_tol * scale) {
      sweeps_converged = true;
      break;
    }
    // stall: updates not contracting over the last window
    const auto& hist = sol.stats.sweep_updates;
    if (hist.size() > opt.stall_window) {
      const double then = hist[hist.size() - 1 - opt.stall_window];
      const double ratio =
          std::pow(update / then, 1.0 / static_cast<double>(opt.stall_window));
      if (!(ratio < opt.stall_ratio)) break;
    }
  }

  if (sweeps_failed || !detail::vec_finite(sol.Y[0]) ||
      best_norm == std::numeric_limits<double>::infinity()) {
    sol.Y = best_y;
    sol.P = best_p;
  }

  KKTResidual groups;
  auto blocks = kkt_residual_blocks(suite, prob, grid, sol.Y, sol.P, groups);
  double norm = blocks_norm(blocks);
  const double scale = 1.0 + z_inf_norm(sol.Y, sol.P);

  if (norm > opt.residual_tol * scale) {
    if (!opt.allow_global_newton)
      throw NoConvergence("sweeps stalled at update " +
                          std::to_string(best_norm) + " after " +
                          std::to_string(sol.stats.sweeps) + " sweeps");
    sol.stats.used_global_newton = true;
    bool ok = global_newton(suite, prob, grid, sol.Y, sol.P, opt, sol.stats);
    // the halving chain terminates via the N >= 8 guard; the depth cap is a
    // pure recursion safeguard
    if (!ok && depth < 40 && N >= 8) {
      // continuation: prolong a coarse solve and retry Newton from there
      try {
        std::vector<Vec> gy = sol.Y, gp = sol.P;
        coarse_continuation_guess(suite, prob, N, opt, depth, gy, gp);
        if (global_newton(suite, prob, grid, gy, gp, opt, sol.stats)) {
          sol.Y = std::move(gy);
          sol.P = std::move(gp);
          ok = true;
        }
      } catch (const Error&) {
      }
    }
    if (!ok && depth == 0) {
      // last resort: seed Newton from a converged solve of the same problem
      // with a robust auxiliary discretization on the same grid
      try {
        std::vector<Vec> gy = sol.Y, gp = sol.P;
        auxiliary_suite_guess(suite, prob, N, opt, gy, gp);
        if (global_newton(suite, prob, grid, gy, gp, opt, sol.stats)) {
          sol.Y = std::move(gy);
          sol.P = std::move(gp);
          ok = true;
        }
      } catch (const Error&) {
      }
    }
    if (!ok)
      throw NoConvergence(
          "global Newton failed after " + std::to_string(sol.stats.sweeps) +
          " sweeps (last update " + std::to_string(best_norm) + ")");
    blocks = kkt_residual_blocks(suite, prob, grid, sol.Y, sol.P, groups);
    norm = blocks_norm(blocks);
  } else if (sweeps_converged) {
    // converged by updates; nothing further to do
  }

  if (norm > opt.residual_tol * (1.0 + z_inf_norm(sol.Y, sol.P)))
    throw NoConvergence("final residual " + std::to_string(norm));

  sol.residual_norm = norm;
  sol.yh_T = combine_stages(suite.w, sol.Y[N], m);
  sol.ph_0 = combine_stages(suite.v, sol.P[0], m);
  return sol;
}

}  // namespace detail

inline DiscreteSolution solve_kkt(const PeerMethodSuite& suite,
                                  const BVProblem& prob, std::size_t N,
                                  SolveOptions opt = {}) {
  return detail::solve_kkt_impl(suite, prob, N, opt, nullptr, nullptr, 0);
}

// Dense evaluator built from the stage values of a converged solve; values
// in between come from local degree-5 interpolation through the nearest six
// stage points.
class DenseReference {
 public:
  DenseReference(const PeerMethodSuite& suite, const BVProblem& prob,
                 const DiscreteSolution& sol)
      : m_(prob.m) {
    const std::size_t s = suite.nodes.s();
    const std::size_t N = sol.grid.N;
    times_.reserve((N + 1) * s);
    yv_.reserve((N + 1) * s);
    pv_.reserve((N + 1) * s);
    for (std::size_t n = 0; n <= N; ++n)
      for (std::size_t i = 0; i < s; ++i) {
        times_.push_back(sol.grid.stage_time(n, suite.nodes.c[i]));
        yv_.emplace_back(sol.Y[n].begin() + i * m_,
                         sol.Y[n].begin() + (i + 1) * m_);
        pv_.emplace_back(sol.P[n].begin() + i * m_,
                         sol.P[n].begin() + (i + 1) * m_);
      }
    // the end point values y_h(T), p_h(T) are part of the discrete solution;
    // keeping them as interpolation nodes pins the boundary condition exactly
    const Vec yht = combine_stages(suite.w, sol.Y[N], m_);
    const Vec pht = prob.terminal_p(yht);
    if (std::abs(times_.back() - sol.grid.T) <= 1e-12 * sol.grid.T) {
      yv_.back() = yht;
      pv_.back() = pht;
    } else {
      times_.push_back(sol.grid.T);
      yv_.push_back(yht);
      pv_.push_back(pht);
    }
    for (std::size_t k = 1; k < times_.size(); ++k)
      if (!(times_[k] > times_[k - 1]))
        throw InvariantViolation("stage times must increase");
    if (times_.size() < 6)
      throw InvariantViolation("too few stage points for interpolation");
  }

  std::size_t m() const { return m_; }
  double t_min() const { return times_.front(); }
  double t_max() const { return times_.back(); }

  Vec y(double t) const { return interp(yv_, t); }
  Vec p(double t) const { return interp(pv_, t); }

 private:
  Vec interp(const std::vector<Vec>& vals, double t) const {
    const std::size_t n = times_.size();
    std::size_t idx =
        std::lower_bound(times_.begin(), times_.end(), t) - times_.begin();
    std::size_t lo = (idx > 3) ? idx - 3 : 0;
    lo = std::min(lo, n - 6);
    Vec out(m_);
    for (std::size_t k = 0; k < m_; ++k) {
      // Newton divided differences over six points
      double coef[6];
      double x[6];
      for (int j = 0; j < 6; ++j) {
        x[j] = times_[lo + j];
        coef[j] = vals[lo + j][k];
      }
      for (int lev = 1; lev < 6; ++lev)
        for (int j = 5; j >= lev; --j)
          coef[j] = (coef[j] - coef[j - 1]) / (x[j] - x[j - lev]);
      double acc = coef[5];
      for (int j = 4; j >= 0; --j) acc = acc * (t - x[j]) + coef[j];
      out[k] = acc;
    }
    return out;
  }

  std::size_t m_;
  std::vector<double> times_;
  std::vector<Vec> yv_, pv_;
};

inline DenseReference reference_solution(const PeerMethodSuite& suite,
                                         const BVProblem& prob,
                                         std::size_t n_ref,
                                         SolveOptions opt = {}) {
  const DiscreteSolution sol =
      detail::solve_kkt_impl(suite, prob, n_ref, opt, nullptr, nullptr, 0);
  return DenseReference(suite, prob, sol);
}

namespace detail {

inline void prolong_guess(const DenseReference& ref,
                          const PeerMethodSuite& suite, std::size_t N,
                          double t_final, std::vector<Vec>& Y,
                          std::vector<Vec>& P) {
  const Grid grid = make_grid(N, t_final);
  const std::size_t s = suite.nodes.s();
  const std::size_t m = ref.m();
  for (std::size_t n = 0; n <= N; ++n)
    for (std::size_t i = 0; i < s; ++i) {
      const double t = std::clamp(grid.stage_time(n, suite.nodes.c[i]),
                                  ref.t_min(), ref.t_max());
      const Vec yv = ref.y(t), pv = ref.p(t);
      for (std::size_t k = 0; k < m; ++k) {
        Y[n][i * m + k] = yv[k];
        P[n][i * m + k] = pv[k];
      }
    }
}

inline void coarse_continuation_guess(const PeerMethodSuite& suite,
                                      const BVProblem& prob, std::size_t N,
                                      const SolveOptions& opt, int depth,
                                      std::vector<Vec>& Y,
                                      std::vector<Vec>& P) {
  const std::size_t coarse_n = std::max<std::size_t>(N / 2, 4);
  const DiscreteSolution coarse =
      solve_kkt_impl(suite, prob, coarse_n, opt, nullptr, nullptr, depth + 1);
  const DenseReference ref(suite, prob, coarse);
  prolong_guess(ref, suite, N, prob.T, Y, P);
}

inline void auxiliary_suite_guess(const PeerMethodSuite& suite,
                                  const BVProblem& prob, std::size_t N,
                                  const SolveOptions& opt, std::vector<Vec>& Y,
                                  std::vector<Vec>& P) {
  const PeerMethodSuite aux = builtin_suite("BDF3o32");
  if (suite.name == aux.name)
    throw NoConvergence("auxiliary seed unavailable for " + suite.name);
  // depth 1 keeps the auxiliary solve off this same fallback
  const DiscreteSolution aux_sol =
      solve_kkt_impl(aux, prob, N, opt, nullptr, nullptr, 1);
  const DenseReference ref(aux, prob, aux_sol);
  prolong_guess(ref, suite, N, prob.T, Y, P);
}

}  // namespace detail

}  // namespace peer

#endif
