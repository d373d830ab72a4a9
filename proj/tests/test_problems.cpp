#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "peer/kkt.hpp"
#include "peer/problems.hpp"

using namespace peer;

namespace {

// central-difference gradient check of all four Jacobians at (y, p)
void check_jacobians(const BVProblem& pr, const Vec& y, const Vec& p) {
  const Mat fd_gy =
      detail::jac_fd([&](const Vec& yy) { return pr.g(yy, p); }, y, pr.m);
  const Mat fd_gp =
      detail::jac_fd([&](const Vec& pp) { return pr.g(y, pp); }, p, pr.m);
  const Mat fd_py =
      detail::jac_fd([&](const Vec& yy) { return pr.phi(yy, p); }, y, pr.m);
  const Mat fd_pp =
      detail::jac_fd([&](const Vec& pp) { return pr.phi(y, pp); }, p, pr.m);
  const double tol_gy = 1e-6 * (1.0 + fd_gy.max_abs());
  const double tol_gp = 1e-6 * (1.0 + fd_gp.max_abs());
  const double tol_py = 1e-6 * (1.0 + fd_py.max_abs());
  const double tol_pp = 1e-6 * (1.0 + fd_pp.max_abs());
  REQUIRE((pr.dg_dy(y, p) - fd_gy).max_abs() <= tol_gy);
  REQUIRE((pr.dg_dp(y, p) - fd_gp).max_abs() <= tol_gp);
  REQUIRE((pr.dphi_dy(y, p) - fd_py).max_abs() <= tol_py);
  REQUIRE((pr.dphi_dp(y, p) - fd_pp).max_abs() <= tol_pp);
}

}  // namespace

TEST_CASE("rayleigh problem values") {
  const auto spec = rayleigh();
  const BVProblem& pr = spec.bvp;
  REQUIRE(pr.m == 2);
  REQUIRE(pr.T == 2.5);
  REQUIRE(pr.y0 == Vec{-5.0, -5.0});

  const Vec g0 = pr.g({-5.0, -5.0}, {0.0, 0.0});
  REQUIRE(g0[0] == Catch::Approx(-5.0).margin(1e-14));
  REQUIRE(g0[1] == Catch::Approx(15.5).margin(1e-13));

  // phi at p = 0 keeps only the state-tracking term
  const Vec phi0 = pr.phi({1.7, -0.4}, {0.0, 0.0});
  REQUIRE(phi0[0] == Catch::Approx(-2.0 * 1.7).margin(1e-14));
  REQUIRE(phi0[1] == 0.0);

  const Mat gp = pr.dg_dp({3.0, -2.0}, {1.0, 1.0});
  REQUIRE(gp(0, 0) == 0.0);
  REQUIRE(gp(1, 1) == -8.0);

  const Vec t = pr.terminal_p({2.0, 3.0});
  REQUIRE(t == Vec{0.0, 0.0});
}

TEST_CASE("van der Pol problem values") {
  const auto spec = van_der_pol(0.1);
  const BVProblem& pr = spec.bvp;
  REQUIRE(pr.m == 2);
  REQUIRE(pr.T == 2.0);
  REQUIRE(pr.y0[0] == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(pr.y0[1] == 0.0);

  const Vec g0 = pr.g({0.2, 0.0}, {0.0, 0.0});
  REQUIRE(g0[0] == 0.0);
  REQUIRE(g0[1] == Catch::Approx(2.0).margin(1e-14));

  // phi at p = 0: -(2/eps^2) s (1, 1-y2^2) - (0, 2 y2)
  const double y1 = 0.7, y2 = -0.3;
  const double s = y1 + y2 - y2 * y2 * y2 / 3.0;
  const Vec phi0 = pr.phi({y1, y2}, {0.0, 0.0});
  REQUIRE(phi0[0] == Catch::Approx(-200.0 * s).margin(1e-10));
  REQUIRE(phi0[1] ==
          Catch::Approx(-200.0 * s * (1.0 - y2 * y2) - 2.0 * y2).margin(1e-10));

  REQUIRE(pr.dphi_dp({0.4, 1.3}, {2.0, -1.0})(0, 1) ==
          Catch::Approx(-10.0).margin(1e-14));

  REQUIRE_THROWS_AS(van_der_pol(0.0), NonpositiveEpsilon);
  REQUIRE_THROWS_AS(van_der_pol(-0.1), NonpositiveEpsilon);
}

TEST_CASE("analytic Jacobians match finite differences at random points") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  const auto ray = rayleigh();
  const auto vdp = van_der_pol();
  for (int rep = 0; rep < 100; ++rep) {
    const Vec y{u(rng), u(rng)};
    const Vec p{u(rng), u(rng)};
    check_jacobians(ray.bvp, y, p);
    check_jacobians(vdp.bvp, y, p);
  }
}

TEST_CASE("problem registry") {
  REQUIRE(problem_by_name("rayleigh").name == "rayleigh");
  REQUIRE(problem_by_name("vdpol").name == "van_der_pol");
  REQUIRE_THROWS_AS(problem_by_name("lorenz"), UnknownMethod);
}
