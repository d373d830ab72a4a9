#ifndef PEER_CLI_HPP
#define PEER_CLI_HPP

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "peer/errors.hpp"
#include "peer/harness.hpp"
#include "peer/kkt.hpp"
#include "peer/method.hpp"
#include "peer/order.hpp"
#include "peer/problems.hpp"
#include "peer/stability.hpp"

namespace peer {

inline PeerMethodSuite resolve_method(const std::string& arg) {
  try {
    return builtin_suite(arg);
  } catch (const UnknownMethod&) {
  }
  if (!std::filesystem::exists(arg))
    throw UnknownMethod("no builtin method or method file named '" + arg +
                        "'");
  return load_suite(arg);
}

namespace detail {

inline std::vector<std::size_t> parse_grid_list(const std::string& text) {
  std::vector<std::size_t> grids;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    grids.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (grids.empty()) throw InvariantViolation("empty grid list");
  return grids;
}

inline void print_order_report(const PeerMethodSuite& suite,
                               std::ostream& out) {
  const OrderReport report = achieved_orders(suite);
  out << "order conditions for " << suite.name << '\n';
  bool all_ok = true;
  for (const auto& cond : report.conditions) {
    double worst = 0.0;
    for (std::size_t q = 1; q <= cond.required; ++q)
      worst = std::max(worst, cond.residuals[q - 1]);
    char line[160];
    std::snprintf(line, sizeof line,
                  "  %-18s required q=%zu  achieved q=%zu  residual %.3e  %s\n",
                  condition_name(cond.kind), cond.required, cond.achieved,
                  worst, cond.meets ? "ok" : "FAIL");
    out << line;
    all_ok = all_ok && cond.meets;
  }
  out << (all_ok ? "all conditions satisfied\n"
                 : "some conditions not satisfied\n");
}

inline void print_stability(const PeerMethodSuite& suite, int n_theta,
                            std::ostream& out) {
  const StabilityReport rep = stability_report(suite.standard, n_theta);
  out << "stability of " << suite.name << " (standard step)\n";
  out << "  zero-stable: " << (rep.zero_stable ? "yes" : "no") << '\n';
  out << "  M(0) eigenvalues:";
  for (const auto& lam : rep.m0_eigenvalues)
    out << "  " << format_g17(lam.real()) << (lam.imag() < 0 ? "-" : "+")
        << format_g17(std::abs(lam.imag())) << "i";
  out << '\n';
  if (rep.alpha_degrees)
    out << "  alpha: " << format_g17(*rep.alpha_degrees) << " degrees\n";
}

inline void write_scan_csv(const ScanResult& result, std::ostream& out) {
  out << "d1,d3,q_residual,zero_stable,alpha\n";
  for (const auto& rec : result.records) {
    out << format_g17(rec.d1) << ',' << format_g17(rec.d3) << ','
        << format_g17(rec.q_residual) << ',' << (rec.zero_stable ? 1 : 0)
        << ',';
    if (rec.alpha_degrees) out << format_g17(*rec.alpha_degrees);
    out << '\n';
  }
}

inline void write_matrix(std::ostream& out, const char* key, const Mat& m) {
  out << key << " =";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j)
      out << ' ' << format_g17(m(i, j));
    if (i + 1 < m.rows()) out << " ;";
  }
  out << '\n';
}

inline void write_synthesis(const SynthesisResult& syn, std::ostream& out) {
  out << "# synthesized standard step, residual "
      << format_g17(syn.residual) << '\n';
  out << "c =";
  for (const double ci : syn.nodes.c) out << ' ' << format_g17(ci);
  out << '\n';
  out << "[standard]\n";
  write_matrix(out, "A", syn.set.A);
  write_matrix(out, "B", *syn.set.B);
  out << "K =";
  for (const double k : syn.set.K) out << ' ' << format_g17(k);
  out << '\n';
}

inline void write_solve_csv(const PeerMethodSuite& suite,
                            const BVProblem& prob,
                            const DiscreteSolution& sol, std::ostream& out) {
  const std::size_t s = suite.nodes.s();
  const std::size_t m = prob.m;
  out << "n,i,t";
  for (std::size_t k = 0; k < m; ++k) out << ",y" << (k + 1);
  for (std::size_t k = 0; k < m; ++k) out << ",p" << (k + 1);
  out << '\n';
  for (std::size_t n = 0; n <= sol.grid.N; ++n)
    for (std::size_t i = 0; i < s; ++i) {
      out << n << ',' << (i + 1) << ','
          << format_g17(sol.grid.stage_time(n, suite.nodes.c[i]));
      for (std::size_t k = 0; k < m; ++k)
        out << ',' << format_g17(sol.Y[n][i * m + k]);
      for (std::size_t k = 0; k < m; ++k)
        out << ',' << format_g17(sol.P[n][i * m + k]);
      out << '\n';
    }
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"implicit peer two-step methods and discrete adjoints"};
  app.require_subcommand(1);

  std::string method_arg, problem_arg, csv_path, out_path, box_arg, grids_arg;
  int n_theta = 2000;
  int seeds = 0;
  std::uint64_t rng_seed = 0;
  double d1 = 0.0, d3 = 0.0;
  std::size_t n_steps = 0, n_ref = 0;

  auto* verify = app.add_subcommand("verify-orders", "order-condition report");
  verify->add_option("--method", method_arg)->required();

  auto* stab = app.add_subcommand("stability", "zero stability and alpha");
  stab->add_option("--method", method_arg)->required();
  stab->add_option("--ntheta", n_theta);

  auto* scan = app.add_subcommand("scan", "multistart scan of the Q = 0 curve");
  scan->add_option("--box", box_arg)->required();
  scan->add_option("--seeds", seeds)->required();
  scan->add_option("--rng", rng_seed)->required();
  scan->add_option("--csv", csv_path);
  scan->add_option("--ntheta", n_theta);

  auto* synth = app.add_subcommand("synthesize", "standard step from (d1,d3)");
  synth->add_option("--d1", d1)->required();
  synth->add_option("--d3", d3)->required();
  synth->add_option("--out", out_path);

  auto* solve = app.add_subcommand("solve", "coupled forward/adjoint solve");
  solve->add_option("--method", method_arg)->required();
  solve->add_option("--problem", problem_arg)->required();
  solve->add_option("--N", n_steps)->required();
  solve->add_option("--csv", csv_path);

  auto* conv = app.add_subcommand("converge", "convergence study table");
  conv->add_option("--method", method_arg)->required();
  conv->add_option("--problem", problem_arg)->required();
  conv->add_option("--grids", grids_arg)->required();
  conv->add_option("--nref", n_ref);
  conv->add_option("--csv", csv_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (verify->parsed()) {
      detail::print_order_report(resolve_method(method_arg), std::cout);
    } else if (stab->parsed()) {
      detail::print_stability(resolve_method(method_arg), n_theta, std::cout);
    } else if (scan->parsed()) {
      std::vector<double> bounds;
      std::stringstream in(box_arg);
      std::string item;
      while (std::getline(in, item, ',')) bounds.push_back(std::stod(item));
      if (bounds.size() != 4) {
        std::cerr << "--box needs d1min,d1max,d3min,d3max\n";
        return 2;
      }
      const ScanResult result = scan_q_curve(
          ScanBox{bounds[0], bounds[1], bounds[2], bounds[3]}, seeds,
          rng_seed, n_theta);
      std::cout << result.records.size() << " points on the curve\n";
      detail::write_scan_csv(result, std::cout);
      if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        detail::write_scan_csv(result, out);
      }
    } else if (synth->parsed()) {
      const SynthesisResult result = synthesize_standard(d1, d3);
      detail::write_synthesis(result, std::cout);
      if (!out_path.empty()) {
        std::ofstream out(out_path);
        detail::write_synthesis(result, out);
      }
    } else if (solve->parsed()) {
      const PeerMethodSuite suite = resolve_method(method_arg);
      const ProblemSpec spec = problem_by_name(problem_arg);
      const DiscreteSolution sol = solve_kkt(suite, spec.bvp, n_steps);
      std::cout << "residual " << format_g17(sol.residual_norm) << ", "
                << sol.stats.sweeps << " sweeps"
                << (sol.stats.used_global_newton ? " + global Newton" : "")
                << '\n';
      std::cout << "y_h(T) =";
      for (const double v : sol.yh_T) std::cout << ' ' << format_g17(v);
      std::cout << "\np_h(0) =";
      for (const double v : sol.ph_0) std::cout << ' ' << format_g17(v);
      std::cout << '\n';
      if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        detail::write_solve_csv(suite, spec.bvp, sol, out);
      }
    } else if (conv->parsed()) {
      const PeerMethodSuite suite = resolve_method(method_arg);
      const ProblemSpec spec = problem_by_name(problem_arg);
      const auto grids = detail::parse_grid_list(grids_arg);
      const std::size_t nr = n_ref ? n_ref : 8 * grids.back();
      const ConvergenceTable table = converge_study(suite, spec, grids, nr);
      print_converge_table(table, std::cout);
      if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        write_converge_csv(table, out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace peer

#endif
