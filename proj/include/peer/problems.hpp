#ifndef PEER_PROBLEMS_HPP
#define PEER_PROBLEMS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "peer/errors.hpp"
#include "peer/kkt.hpp"

namespace peer {

struct ProblemSpec {
  std::string name;
  BVProblem bvp;
  std::vector<std::size_t> default_grids;
  std::size_t default_n_ref = 0;
};

// Tunnel-diode oscillator with quadratic cost, control eliminated.
inline ProblemSpec rayleigh() {
  ProblemSpec spec;
  spec.name = "rayleigh";
  spec.default_grids = {40, 80, 160, 320};
  spec.default_n_ref = 2560;
  BVProblem& pr = spec.bvp;
  pr.m = 2;
  pr.T = 2.5;
  pr.y0 = {-5.0, -5.0};
  pr.g = [](const Vec& y, const Vec& p) -> Vec {
    return {y[1], -y[0] + y[1] * (1.4 - 0.14 * y[1] * y[1]) - 8.0 * p[1]};
  };
  pr.phi = [](const Vec& y, const Vec& p) -> Vec {
    return {p[1] - 2.0 * y[0], -p[0] - (1.4 - 0.42 * y[1] * y[1]) * p[1]};
  };
  pr.terminal_p = [](const Vec&) -> Vec { return {0.0, 0.0}; };
  pr.dg_dy = [](const Vec& y, const Vec&) -> Mat {
    return Mat{{0.0, 1.0}, {-1.0, 1.4 - 0.42 * y[1] * y[1]}};
  };
  pr.dg_dp = [](const Vec&, const Vec&) -> Mat {
    return Mat{{0.0, 0.0}, {0.0, -8.0}};
  };
  pr.dphi_dy = [](const Vec& y, const Vec& p) -> Mat {
    return Mat{{-2.0, 0.0}, {0.0, 0.84 * y[1] * p[1]}};
  };
  pr.dphi_dp = [](const Vec& y, const Vec&) -> Mat {
    return Mat{{0.0, 1.0}, {-1.0, -(1.4 - 0.42 * y[1] * y[1])}};
  };
  return spec;
}

// Controlled van der Pol oscillator in Lienhard coordinates.
inline ProblemSpec van_der_pol(double epsilon = 0.1) {
  if (!(epsilon > 0.0)) throw NonpositiveEpsilon("epsilon must be positive");
  ProblemSpec spec;
  spec.name = "van_der_pol";
  spec.default_grids = {160, 320, 640, 1280};
  spec.default_n_ref = 10240;
  BVProblem& pr = spec.bvp;
  const double e1 = 1.0 / epsilon;
  const double e2 = 2.0 / (epsilon * epsilon);
  pr.m = 2;
  pr.T = 2.0;
  pr.y0 = {2.0 * epsilon, 0.0};
  pr.g = [e1](const Vec& y, const Vec& p) -> Vec {
    const double s = y[0] + y[1] - y[1] * y[1] * y[1] / 3.0;
    return {-y[1] - 0.5 * p[0], e1 * s};
  };
  pr.phi = [e1, e2](const Vec& y, const Vec& p) -> Vec {
    const double s = y[0] + y[1] - y[1] * y[1] * y[1] / 3.0;
    const double w = 1.0 - y[1] * y[1];
    return {-e1 * p[1] - e2 * s,
            p[0] - e1 * w * p[1] - e2 * s * w - 2.0 * y[1]};
  };
  pr.terminal_p = [](const Vec&) -> Vec { return {0.0, 0.0}; };
  pr.dg_dy = [e1](const Vec& y, const Vec&) -> Mat {
    return Mat{{0.0, -1.0}, {e1, e1 * (1.0 - y[1] * y[1])}};
  };
  pr.dg_dp = [](const Vec&, const Vec&) -> Mat {
    return Mat{{-0.5, 0.0}, {0.0, 0.0}};
  };
  pr.dphi_dy = [e1, e2](const Vec& y, const Vec& p) -> Mat {
    const double s = y[0] + y[1] - y[1] * y[1] * y[1] / 3.0;
    const double w = 1.0 - y[1] * y[1];
    return Mat{{-e2, -e2 * w},
               {-e2 * w, 2.0 * e1 * y[1] * p[1] - e2 * (w * w - 2.0 * y[1] * s) -
                             2.0}};
  };
  pr.dphi_dp = [e1](const Vec& y, const Vec&) -> Mat {
    return Mat{{0.0, -e1}, {1.0, -e1 * (1.0 - y[1] * y[1])}};
  };
  return spec;
}

inline ProblemSpec problem_by_name(const std::string& name) {
  if (name == "rayleigh") return rayleigh();
  if (name == "van_der_pol" || name == "vdpol") return van_der_pol();
  throw UnknownMethod("unknown problem: " + name);
}

}  // namespace peer

#endif
