#ifndef PEER_HARNESS_HPP
#define PEER_HARNESS_HPP

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "peer/errors.hpp"
#include "peer/kkt.hpp"
#include "peer/method.hpp"
#include "peer/problems.hpp"

namespace peer {

struct ConvergenceTable {
  std::string method;
  std::string problem;
  std::vector<std::size_t> grids;
  std::vector<std::string> variables;        // y1..ym then p1..pm
  std::vector<std::vector<double>> errors;   // [variable][grid]
  std::vector<std::vector<double>> orders;   // [variable][grid]; NaN if none
};

inline std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Per-variable l-infinity stage errors against a self-generated fine-grid
// reference, with estimated orders between consecutive doubling grids.
// The norm runs over the stages of steps 0..N-1 plus the delivered end
// values y_h(T) and p_h(0).  The end step's auxiliary stages are excluded:
// end blocks carry a reduced-order defect by construction, and that defect
// is annihilated in the w-combination that defines y_h(T) (the kernel row
// of A_N^{-1} times the defect vanishes), so only the internal stages of
// the final step see it.
inline ConvergenceTable converge_study(const PeerMethodSuite& suite,
                                       const ProblemSpec& spec,
                                       const std::vector<std::size_t>& grids,
                                       std::size_t n_ref,
                                       SolveOptions opt = {}) {
  if (grids.empty()) throw InvariantViolation("empty grid list");
  for (std::size_t k = 0; k + 1 < grids.size(); ++k)
    if (!(grids[k] < grids[k + 1]))
      throw InvariantViolation("grids must be strictly increasing");
  for (const std::size_t n : grids)
    if (n == 0 || n_ref % n != 0)
      throw InvariantViolation("every grid must divide the reference grid");

  const BVProblem& prob = spec.bvp;
  const std::size_t m = prob.m;
  const PeerMethodSuite ref_suite = builtin_suite("BDF3o32");
  const DenseReference ref = reference_solution(ref_suite, prob, n_ref, opt);
  const DenseReference ref_half =
      reference_solution(ref_suite, prob, n_ref / 2, opt);

  ConvergenceTable table;
  table.method = suite.name;
  table.problem = spec.name;
  table.grids = grids;
  for (std::size_t k = 0; k < m; ++k)
    table.variables.push_back("y" + std::to_string(k + 1));
  for (std::size_t k = 0; k < m; ++k)
    table.variables.push_back("p" + std::to_string(k + 1));
  table.errors.assign(2 * m, std::vector<double>(grids.size(), 0.0));
  table.orders.assign(
      2 * m, std::vector<double>(grids.size(),
                                 std::numeric_limits<double>::quiet_NaN()));

  std::vector<double> ref_disagreement(2 * m, 0.0);
  const std::size_t s = suite.nodes.s();
  for (std::size_t gi = 0; gi < grids.size(); ++gi) {
    const DiscreteSolution sol = solve_kkt(suite, prob, grids[gi], opt);
    for (std::size_t n = 0; n < sol.grid.N; ++n)
      for (std::size_t i = 0; i < s; ++i) {
        const double t = sol.grid.stage_time(n, suite.nodes.c[i]);
        const Vec yr = ref.y(t), pr = ref.p(t);
        const Vec yr2 = ref_half.y(t), pr2 = ref_half.p(t);
        for (std::size_t k = 0; k < m; ++k) {
          table.errors[k][gi] = std::max(
              table.errors[k][gi], std::abs(sol.Y[n][i * m + k] - yr[k]));
          table.errors[m + k][gi] = std::max(
              table.errors[m + k][gi], std::abs(sol.P[n][i * m + k] - pr[k]));
          ref_disagreement[k] =
              std::max(ref_disagreement[k], std::abs(yr[k] - yr2[k]));
          ref_disagreement[m + k] =
              std::max(ref_disagreement[m + k], std::abs(pr[k] - pr2[k]));
        }
      }
    const Vec yrT = ref.y(prob.T), pr0 = ref.p(0.0);
    for (std::size_t k = 0; k < m; ++k) {
      table.errors[k][gi] =
          std::max(table.errors[k][gi], std::abs(sol.yh_T[k] - yrT[k]));
      table.errors[m + k][gi] =
          std::max(table.errors[m + k][gi], std::abs(sol.ph_0[k] - pr0[k]));
    }
  }

  // per-variable halving check: the reference bias must stay well below the
  // smallest error it is used to measure
  for (std::size_t v = 0; v < 2 * m; ++v) {
    double min_error = std::numeric_limits<double>::infinity();
    for (const double e : table.errors[v])
      if (e > 0.0) min_error = std::min(min_error, e);
    if (!(ref_disagreement[v] <= 1e-1 * min_error))
      throw ReferenceNotConverged(
          "reference self-validation failed for " + table.variables[v] +
          ": disagreement " + format_g17(ref_disagreement[v]) +
          " vs smallest error " + format_g17(min_error));
  }

  for (std::size_t v = 0; v < 2 * m; ++v)
    for (std::size_t gi = 1; gi < grids.size(); ++gi)
      if (grids[gi] == 2 * grids[gi - 1] && table.errors[v][gi] > 0.0)
        table.orders[v][gi] =
            std::log2(table.errors[v][gi - 1] / table.errors[v][gi]);
  return table;
}

// CSV with header N,var,error,order; order empty on the coarsest grid
inline void write_converge_csv(const ConvergenceTable& table,
                               std::ostream& out) {
  out << "N,var,error,order\n";
  for (std::size_t gi = 0; gi < table.grids.size(); ++gi)
    for (std::size_t v = 0; v < table.variables.size(); ++v) {
      out << table.grids[gi] << ',' << table.variables[v] << ','
          << format_g17(table.errors[v][gi]) << ',';
      if (!std::isnan(table.orders[v][gi]))
        out << format_g17(table.orders[v][gi]);
      out << '\n';
    }
}

// aligned text table, orders in brackets with one decimal
inline void print_converge_table(const ConvergenceTable& table,
                                 std::ostream& out) {
  out << "method " << table.method << " on " << table.problem << '\n';
  out << "         ";
  for (const std::size_t n : table.grids) {
    char head[32];
    std::snprintf(head, sizeof head, " %16zu", n);
    out << head;
  }
  out << '\n';
  for (std::size_t v = 0; v < table.variables.size(); ++v) {
    char name[16];
    std::snprintf(name, sizeof name, "%-9s", table.variables[v].c_str());
    out << name;
    for (std::size_t gi = 0; gi < table.grids.size(); ++gi) {
      char cell[40];
      if (std::isnan(table.orders[v][gi]))
        std::snprintf(cell, sizeof cell, " %10.2e      ",
                      table.errors[v][gi]);
      else
        std::snprintf(cell, sizeof cell, " %10.2e (%.1f)",
                      table.errors[v][gi], table.orders[v][gi]);
      out << cell;
    }
    out << '\n';
  }
}

}  // namespace peer

#endif
