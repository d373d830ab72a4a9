#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "peer/kkt.hpp"
#include "peer/method.hpp"
#include "peer/problems.hpp"
#include "peer/stability.hpp"

using namespace peer;

namespace {

BVProblem trivial_problem(std::size_t m = 1) {
  BVProblem pr;
  pr.m = m;
  pr.T = 1.0;
  pr.y0.assign(m, 1.0);
  pr.g = [m](const Vec&, const Vec&) { return Vec(m, 0.0); };
  pr.phi = [m](const Vec&, const Vec&) { return Vec(m, 0.0); };
  pr.terminal_p = [m](const Vec&) { return Vec(m, 0.0); };
  return pr;
}

// y' = lambda y, adjoint frozen and irrelevant
BVProblem dahlquist(double lambda) {
  BVProblem pr = trivial_problem(1);
  pr.g = [lambda](const Vec& y, const Vec&) { return Vec{lambda * y[0]}; };
  return pr;
}

Vec block_of(const Mat& m, const Vec& x) {
  return m.apply(x);
}

}  // namespace

TEST_CASE("grid construction") {
  const Grid g = make_grid(4, 2.5);
  REQUIRE(g.h == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(g.stage_time(4, 1.0) == Catch::Approx(2.5).margin(1e-14));
  REQUIRE_THROWS_AS(make_grid(1, 1.0), InvariantViolation);
  REQUIRE_THROWS_AS(make_grid(4, 0.0), InvariantViolation);
}

TEST_CASE("forward step with no source is the linear recursion") {
  const auto suite = builtin_suite("BDF3o32");
  const BVProblem pr = trivial_problem(1);
  const Vec y_prev{1.0, 2.0, 3.0};
  const Vec rhs = block_of(*suite.standard.B, y_prev);
  const Vec y = forward_step(suite.standard, rhs, Vec(3, 0.0), 0.1, pr,
                             Vec(3, 0.0));
  Mat rhs_m(3, 1);
  for (int i = 0; i < 3; ++i) rhs_m(i, 0) = rhs[i];
  const Mat expect = solve_dense(suite.standard.A, rhs_m);
  for (int i = 0; i < 3; ++i)
    REQUIRE(y[i] == Catch::Approx(expect(i, 0)).margin(1e-13));
}

TEST_CASE("forward step matches the stability matrix on Dahlquist") {
  const auto suite = builtin_suite("BDF3o32");
  const double lambda = -1.0, h = 0.1;
  const BVProblem pr = dahlquist(lambda);
  const Vec y_prev{1.0, 0.5, 0.25};
  const Vec rhs = block_of(*suite.standard.B, y_prev);
  const Vec y = forward_step(suite.standard, rhs, Vec(3, 0.0), h, pr,
                             Vec(3, 0.0));
  const CMat mz = stability_matrix(suite.standard, complexd(h * lambda, 0.0));
  for (int i = 0; i < 3; ++i) {
    complexd expect{};
    for (int j = 0; j < 3; ++j) expect += mz(i, j) * y_prev[j];
    REQUIRE(y[i] == Catch::Approx(expect.real()).margin(1e-12));
    REQUIRE(std::abs(expect.imag()) < 1e-14);
  }
}

TEST_CASE("full end matrix is solved via the simplified Newton iteration") {
  const auto suite = builtin_suite("BDF3o32");
  const double lambda = -40.0, h = 0.05;  // z = -2, stiff direction
  const BVProblem pr = dahlquist(lambda);
  const Vec y_prev{0.3, -0.2, 0.9};
  const Vec rhs = block_of(*suite.end.B, y_prev);
  const Vec y =
      forward_step(suite.end, rhs, Vec(3, 0.0), h, pr, Vec(3, 0.0));
  // oracle: (A - h lambda K) Y = B Y_prev solved directly
  Mat lhs = suite.end.A;
  for (int i = 0; i < 3; ++i) lhs(i, i) -= h * lambda * suite.end.K[i];
  Mat rhs_m(3, 1);
  for (int i = 0; i < 3; ++i) rhs_m(i, 0) = rhs[i];
  const Mat expect = solve_dense(lhs, rhs_m);
  for (int i = 0; i < 3; ++i)
    REQUIRE(y[i] == Catch::Approx(expect(i, 0)).margin(1e-12));
}

TEST_CASE("adjoint step basics") {
  const auto suite = builtin_suite("BDF3o32");
  const BVProblem pr = trivial_problem(1);
  // homogeneous recursion with zero terminal data stays zero
  const Vec p = adjoint_step(suite.standard, Vec(3, 0.0), Vec(3, 1.0), 0.1,
                             pr, Vec(3, 0.5));
  for (int i = 0; i < 3; ++i) REQUIRE(std::abs(p[i]) <= 1e-14);

  // phi = -lambda p: (A' - h lambda K) P = B' P_next
  const double lambda = 0.7, h = 0.1;
  BVProblem adj = trivial_problem(1);
  adj.phi = [lambda](const Vec&, const Vec& pp) {
    return Vec{-lambda * pp[0]};
  };
  const Vec p_next{1.0, -2.0, 0.5};
  const Vec rhs = block_of(suite.standard.B->transpose(), p_next);
  const Vec got = adjoint_step(suite.standard, rhs, Vec(3, 0.0), h, adj,
                               Vec(3, 0.0));
  Mat lhs = suite.standard.A.transpose();
  for (int i = 0; i < 3; ++i) lhs(i, i) -= h * lambda * suite.standard.K[i];
  Mat rhs_m(3, 1);
  for (int i = 0; i < 3; ++i) rhs_m(i, 0) = rhs[i];
  const Mat expect = solve_dense(lhs, rhs_m);
  for (int i = 0; i < 3; ++i)
    REQUIRE(got[i] == Catch::Approx(expect(i, 0)).margin(1e-12));
}

TEST_CASE("linear-quadratic toy is solved exactly") {
  BVProblem pr = trivial_problem(1);
  pr.g = [](const Vec&, const Vec& p) { return Vec{p[0]}; };
  const auto suite = builtin_suite("BDF3o32");
  const DiscreteSolution sol = solve_kkt(suite, pr, 8);
  for (const auto& block : sol.P)
    for (const double x : block) REQUIRE(std::abs(x) <= 1e-12);
  for (const auto& block : sol.Y)
    for (const double x : block) REQUIRE(x == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(sol.yh_T[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(std::abs(sol.ph_0[0]) <= 1e-12);
}

TEST_CASE("kkt_residual re-asserts the solve and detects perturbations") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  DiscreteSolution sol = solve_kkt(suite, spec.bvp, 24);
  double scale = 0.0;
  for (const auto& b : sol.Y)
    for (const double x : b) scale = std::max(scale, std::abs(x));
  for (const auto& b : sol.P)
    for (const double x : b) scale = std::max(scale, std::abs(x));
  const KKTResidual groups = kkt_residual(suite, spec.bvp, sol);
  REQUIRE(groups.max() <= 1e-11 * (1.0 + scale));

  sol.Y[10][2] += 1e-6;
  const KKTResidual bumped = kkt_residual(suite, spec.bvp, sol);
  REQUIRE(bumped.max() >= 1e-7);
}

TEST_CASE("kkt_residual of the exact toy solution is at rounding level") {
  BVProblem pr = trivial_problem(1);
  pr.g = [](const Vec&, const Vec& p) { return Vec{p[0]}; };
  const auto suite = builtin_suite("BDF3o32");
  DiscreteSolution sol;
  sol.grid = make_grid(8, pr.T);
  sol.Y.assign(9, Vec(3, 1.0));
  sol.P.assign(9, Vec(3, 0.0));
  sol.yh_T = {1.0};
  sol.ph_0 = {0.0};
  REQUIRE(kkt_residual(suite, pr, sol).max() <= 1e-14);

  sol.Y.pop_back();
  REQUIRE_THROWS_AS(kkt_residual(suite, pr, sol), DimensionMismatch);
}

TEST_CASE("adjoint matrix pairing at the end transition") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const std::size_t N = 16;
  const DiscreteSolution sol = solve_kkt(suite, spec.bvp, N);
  const double h = sol.grid.h;
  const std::size_t m = 2, s = 3;

  auto pairing_residual = [&](const Mat& b_next) {
    Vec r = apply_block(suite.standard.A.transpose(), sol.P[N - 1], m);
    const Vec rhs = apply_block(b_next.transpose(), sol.P[N], m);
    for (std::size_t i = 0; i < s; ++i) {
      const Vec yi(sol.Y[N - 1].begin() + i * m,
                   sol.Y[N - 1].begin() + (i + 1) * m);
      const Vec pi(sol.P[N - 1].begin() + i * m,
                   sol.P[N - 1].begin() + (i + 1) * m);
      const Vec f = spec.bvp.phi(yi, pi);
      for (std::size_t k = 0; k < m; ++k)
        r[i * m + k] -= rhs[i * m + k] - h * suite.standard.K[i] * f[k];
    }
    double norm = 0.0;
    for (const double x : r) norm = std::max(norm, std::abs(x));
    return norm;
  };

  REQUIRE(pairing_residual(*suite.end.B) <= 1e-11 * 10.0);
  REQUIRE(pairing_residual(*suite.standard.B) > 1e-6);
}

TEST_CASE("sweep and global Newton solutions agree") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const DiscreteSolution by_sweeps = solve_kkt(suite, spec.bvp, 20);
  SolveOptions newton_only;
  newton_only.max_sweeps = 0;
  const DiscreteSolution by_newton =
      solve_kkt(suite, spec.bvp, 20, newton_only);
  REQUIRE(by_newton.stats.used_global_newton);
  for (std::size_t n = 0; n <= 20; ++n)
    for (std::size_t i = 0; i < 6; ++i) {
      REQUIRE(by_sweeps.Y[n][i] ==
              Catch::Approx(by_newton.Y[n][i]).margin(1e-9));
      REQUIRE(by_sweeps.P[n][i] ==
              Catch::Approx(by_newton.P[n][i]).margin(1e-9));
    }
}

TEST_CASE("forward-only problems reduce to plain forward integration") {
  const auto suite = builtin_suite("BDF3o32");
  BVProblem pr;
  pr.m = 2;
  pr.T = 2.5;
  pr.y0 = {-5.0, -5.0};
  pr.g = [](const Vec& y, const Vec&) -> Vec {
    return {y[1], -y[0] + y[1] * (1.4 - 0.14 * y[1] * y[1])};
  };
  pr.phi = [](const Vec&, const Vec&) { return Vec{0.0, 0.0}; };
  pr.terminal_p = [](const Vec&) { return Vec{0.0, 0.0}; };

  const std::size_t N = 24;
  const DiscreteSolution sol = solve_kkt(suite, pr, N);
  const double h = sol.grid.h;

  // standalone forward integration with zero adjoints
  std::vector<Vec> y(N + 1);
  const Vec ph0{0.0, 0.0};
  y[0] = forward_step(suite.start, start_rhs(suite, pr, ph0, h),
                      Vec(6, 0.0), h, pr, Vec(6, -5.0));
  for (std::size_t n = 1; n <= N; ++n) {
    const StageMatrixSet& set =
        (n == N) ? suite.end : suite.standard;
    y[n] = forward_step(set, apply_block(*set.B, y[n - 1], 2), Vec(6, 0.0),
                        h, pr, y[n - 1]);
  }
  for (std::size_t n = 0; n <= N; ++n)
    for (std::size_t i = 0; i < 6; ++i)
      REQUIRE(sol.Y[n][i] == Catch::Approx(y[n][i]).margin(1e-12 * 10));
}

TEST_CASE("dense reference interpolates stage points and the boundary") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const DiscreteSolution sol = solve_kkt(suite, spec.bvp, 64);
  const DenseReference ref(suite, spec.bvp, sol);
  // interior stage point reproduced exactly
  const double t = sol.grid.stage_time(30, suite.nodes.c[1]);
  const Vec y = ref.y(t);
  REQUIRE(y[0] == Catch::Approx(sol.Y[30][2]).margin(1e-12));
  REQUIRE(y[1] == Catch::Approx(sol.Y[30][3]).margin(1e-12));
  // terminal adjoint boundary condition pinned
  const Vec pt = ref.p(2.5);
  REQUIRE(std::abs(pt[0]) <= 1e-11);
  REQUIRE(std::abs(pt[1]) <= 1e-11);
}

TEST_CASE("reference self-agreement under grid halving") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const DenseReference fine = reference_solution(suite, spec.bvp, 2560);
  const DenseReference half = reference_solution(suite, spec.bvp, 1280);
  // y converges at order 3, the adjoint at order 2; the halving disagreement
  // must sit far below the coarsest study errors (4.2e-4 / 1.7e-3)
  double worst_y = 0.0, worst_p = 0.0;
  for (int k = 0; k <= 200; ++k) {
    const double t = 2.5 * k / 200.0;
    const Vec yf = fine.y(t), yh = half.y(t);
    const Vec pf = fine.p(t), ph = half.p(t);
    for (int j = 0; j < 2; ++j) {
      worst_y = std::max(worst_y, std::abs(yf[j] - yh[j]));
      worst_p = std::max(worst_p, std::abs(pf[j] - ph[j]));
    }
  }
  REQUIRE(worst_y <= 1e-6);
  REQUIRE(worst_p <= 1e-4);
}

TEST_CASE("van der Pol terminal condition in the reference") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = van_der_pol(0.1);
  const DenseReference ref = reference_solution(suite, spec.bvp, 1024);
  const Vec pt = ref.p(2.0);
  REQUIRE(std::abs(pt[0]) <= 1e-11);
  REQUIRE(std::abs(pt[1]) <= 1e-11);
}

TEST_CASE("degenerate N is rejected") {
  const auto suite = builtin_suite("BDF3o32");
  REQUIRE_THROWS_AS(solve_kkt(suite, trivial_problem(), 1),
                    InvariantViolation);
}

TEST_CASE("van der Pol solves for methods without an easy coarse base") {
  // these suites have no small grid where plain sweeps or Newton from the
  // constant guess converge; the solver must fall back to continuation and
  // the auxiliary-discretization seed
  const auto spec = van_der_pol(0.1);
  for (const char* name : {"BDF3o22", "PEER3o32w"}) {
    const auto suite = builtin_suite(name);
    const DiscreteSolution sol = solve_kkt(suite, spec.bvp, 160);
    const KKTResidual res = kkt_residual(suite, spec.bvp, sol);
    REQUIRE(res.max() <= 1e-9);
    // terminal adjoint condition transfers to the solution
    const Vec yht = sol.yh_T;
    REQUIRE(yht.size() == 2);
    REQUIRE(std::isfinite(sol.ph_0[0]));
  }
}
