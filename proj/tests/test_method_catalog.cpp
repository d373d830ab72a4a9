#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "peer/method.hpp"
#include "peer/order.hpp"

using namespace peer;

namespace {

double dot_power(const std::vector<double>& x, const std::vector<double>& c,
                 unsigned j) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += x[i] * std::pow(c[i], static_cast<double>(j));
  return s;
}

}  // namespace

TEST_CASE("builtin BDF3o22 coefficients") {
  const auto suite = builtin_suite("BDF3o22");
  REQUIRE(suite.nodes.c[0] == Catch::Approx(1.0 / 3).margin(1e-15));
  REQUIRE(suite.nodes.c[1] == Catch::Approx(2.0 / 3).margin(1e-15));
  REQUIRE(suite.nodes.c[2] == 1.0);
  for (int i = 0; i < 3; ++i)
    REQUIRE(suite.standard.K[i] == Catch::Approx(1.0 / 3).margin(1e-15));
  // a = A0*1 row sums
  REQUIRE(suite.a[0] == Catch::Approx(2.0).margin(1e-14));
  REQUIRE(suite.a[1] == Catch::Approx(-35.0 / 24).margin(1e-14));
  REQUIRE(suite.a[2] == Catch::Approx(11.0 / 24).margin(1e-14));
  // w = e3 since c3 = 1
  REQUIRE(std::abs(suite.w[0]) < 1e-13);
  REQUIRE(std::abs(suite.w[1]) < 1e-13);
  REQUIRE(suite.w[2] == Catch::Approx(1.0).margin(1e-13));
}

TEST_CASE("builtin PEER3o32w nodes") {
  const auto suite = builtin_suite("PEER3o32w");
  const double c2 = 0.48059993107999468110;
  REQUIRE(suite.nodes.c[1] == c2);
  REQUIRE(suite.nodes.c[0] == Catch::Approx(c2 - 1.0 / 3).margin(1e-15));
  REQUIRE(suite.nodes.c[2] == Catch::Approx(c2 + 1.0 / 3).margin(1e-15));
}

TEST_CASE("unknown builtin is rejected") {
  REQUIRE_THROWS_AS(builtin_suite("BDF4"), UnknownMethod);
}

TEST_CASE("derived vectors satisfy their defining identities") {
  for (const char* name : {"BDF3o22", "BDF3o32", "PEER3o32w"}) {
    const auto suite = builtin_suite(name);
    const double tol = std::string(name) == "PEER3o32w" ? 1e-9 : 1e-13;
    // a = A0*1, b = A0*c - K0*1, w = AN'*1 re-derived by hand
    const std::size_t s = suite.nodes.s();
    for (std::size_t i = 0; i < s; ++i) {
      double ra = 0.0, rb = 0.0, rw = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        ra += suite.start.A(i, j);
        rb += suite.start.A(i, j) * suite.nodes.c[j];
        rw += suite.end.A(j, i);
      }
      REQUIRE(suite.a[i] == Catch::Approx(ra).margin(1e-13));
      REQUIRE(suite.b[i] ==
              Catch::Approx(rb - suite.start.K[i]).margin(1e-13));
      REQUIRE(suite.w[i] == Catch::Approx(rw).margin(1e-13));
    }
    // w'c^j = 1 for j = 0..s-1
    for (unsigned j = 0; j < s; ++j)
      REQUIRE(dot_power(suite.w, suite.nodes.c, j) ==
              Catch::Approx(1.0).margin(tol));
    // v'1 = 1, v'c^j = 0
    REQUIRE(dot_power(suite.v, suite.nodes.c, 0) ==
            Catch::Approx(1.0).margin(1e-13));
    for (unsigned j = 1; j < s; ++j)
      REQUIRE(std::abs(dot_power(suite.v, suite.nodes.c, j)) < 1e-12);
  }
}

TEST_CASE("derive_v examples") {
  const auto v = derive_v(Nodes({1.0 / 3, 2.0 / 3, 1.0}));
  REQUIRE(v[0] == Catch::Approx(3.0).margin(1e-12));
  REQUIRE(v[1] == Catch::Approx(-3.0).margin(1e-12));
  REQUIRE(v[2] == Catch::Approx(1.0).margin(1e-12));

  const auto v0 = derive_v(Nodes({0.0, 0.4, 0.9}));
  REQUIRE(v0[0] == Catch::Approx(1.0).margin(1e-13));
  REQUIRE(std::abs(v0[1]) < 1e-13);
  REQUIRE(std::abs(v0[2]) < 1e-13);
}

TEST_CASE("Q polynomial values") {
  REQUIRE(std::abs(q_polynomial(1.0 / 3, 1.0 / 3)) < 1e-14);
  REQUIRE(std::abs(q_polynomial(0.5, 0.5)) < 1e-14);
  REQUIRE(q_polynomial(0.0, 0.0) == -3.0);
  const double root = 0.25 + std::sqrt(33.0) / 12.0;
  REQUIRE(std::abs(q_polynomial(root, root)) < 1e-13);
}

TEST_CASE("Q on the diagonal matches its factored form") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double d = u(rng);
    // the full polynomial carries a constant factor 3 over the factored form
    const double factored =
        3.0 * (3.0 * d - 1.0) * (2.0 * d - 1.0) * (6.0 * d * d - 3.0 * d - 1.0);
    const double direct = q_polynomial(d, d);
    REQUIRE(direct == Catch::Approx(factored).margin(
                          1e-12 * (1.0 + std::abs(factored))));
  }
}

TEST_CASE("BDF3 end-node cubic and its roots") {
  REQUIRE(qn_bdf3_cubic(0.0) == Catch::Approx(-43.0 / 6).margin(1e-14));
  const auto roots = qn_bdf3_roots();
  REQUIRE(roots.size() == 3);
  REQUIRE(roots[0] == Catch::Approx(0.48059993107999468110).margin(1e-12));
  REQUIRE(roots[1] == Catch::Approx(0.92).margin(5e-3));
  REQUIRE(roots[2] == Catch::Approx(1.3).margin(5e-2));
  for (const double r : roots) REQUIRE(std::abs(qn_bdf3_cubic(r)) <= 1e-10);
}

TEST_CASE("cubic has exactly three real roots (bisection oracle)") {
  // sample sign changes of the cubic on a bracket
  auto f = [](double x) { return qn_bdf3_cubic(x); };
  int sign_changes = 0;
  double prev = f(-1.0);
  for (double x = -1.0 + 1e-3; x <= 3.0; x += 1e-3) {
    const double cur = f(x);
    if (prev * cur < 0.0) ++sign_changes;
    prev = cur;
  }
  REQUIRE(sign_changes == 3);
}

TEST_CASE("method file round-trips BDF3o22") {
  const std::string text = R"(# rescaled BDF3 with semi-explicit end step
name = BDF3o22-file
c = 1/3 2/3 1
[start]
A = 2 0 0; -10/3 15/8 0; 5/3 -73/24 11/6
K = 1/3 25/72 1/3
[standard]
A = 11/6 0 0; -3 11/6 0; 3/2 -3 11/6
B = 1/3 -3/2 3; 0 1/3 -3/2; 0 0 1/3
K = 1/3 1/3 1/3
[end]
A = 21/8 0 0; -14/3 23/12 0; 49/24 -23/12 1
B = 1/2 -73/24 31/6; -1/3 41/12 -35/6; 1/6 -37/24 5/2
K = 7/36 23/36 0
)";
  std::istringstream in(text);
  const auto loaded = load_suite(in);
  const auto builtin = builtin_suite("BDF3o22");
  REQUIRE((loaded.standard.A - builtin.standard.A).max_abs() <= 1e-15);
  REQUIRE((*loaded.standard.B - *builtin.standard.B).max_abs() <= 1e-15);
  REQUIRE((loaded.end.A - builtin.end.A).max_abs() <= 1e-15);
  REQUIRE((loaded.start.A - builtin.start.A).max_abs() <= 1e-15);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(loaded.end.K[i] == builtin.end.K[i]);
    REQUIRE(loaded.a[i] == Catch::Approx(builtin.a[i]).margin(1e-15));
    REQUIRE(loaded.w[i] == Catch::Approx(builtin.w[i]).margin(1e-15));
  }
}

TEST_CASE("method file with non-diagonal K is rejected") {
  const std::string text = R"(c = 1/3 2/3 1
[start]
A = 2 0 0; -10/3 15/8 0; 5/3 -73/24 11/6
K = 1/3 0 0; 0.1 25/72 0; 0 0 1/3
[standard]
A = 11/6 0 0; -3 11/6 0; 3/2 -3 11/6
B = 1/3 -3/2 3; 0 1/3 -3/2; 0 0 1/3
K = 1/3 1/3 1/3
[end]
A = 21/8 0 0; -14/3 23/12 0; 49/24 -23/12 1
B = 1/2 -73/24 31/6; -1/3 41/12 -35/6; 1/6 -37/24 5/2
K = 7/36 23/36 0
)";
  std::istringstream in(text);
  REQUIRE_THROWS_AS(load_suite(in), InvariantViolation);
}

TEST_CASE("method file accepts a 2-stage method") {
  // implicit midpoint-flavoured 2-stage peer scheme: only structural
  // invariants are checked here, not order
  const std::string text = R"(name = two-stage
c = 1/2 1
[start]
A = 1 0; -1 1
K = 1/2 1/2
[standard]
A = 1 0; -2 2
B = 0 1; 0 0
K = 1/2 1/2
[end]
A = 1 0; -2 2
B = 0 1; 0 0
K = 1/2 1/2
)";
  std::istringstream in(text);
  const auto suite = load_suite(in);
  REQUIRE(suite.nodes.s() == 2);
  REQUIRE(suite.w.size() == 2);
}

TEST_CASE("parse errors carry position information") {
  std::istringstream in("c = 1/3 oops 1\n");
  try {
    load_suite(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("BDF3 standard set is persymmetric") {
  const auto suite = builtin_suite("BDF3o22");
  const Mat pi = flip_permutation(3);
  const Mat kinv_a = suite.standard.A * 3.0;  // K = I/3
  const Mat kinv_b = *suite.standard.B * 3.0;
  REQUIRE((pi * kinv_a - kinv_a.transpose() * pi).max_abs() <= 1e-13);
  REQUIRE((pi * kinv_b - kinv_b.transpose() * pi).max_abs() <= 1e-13);
}
