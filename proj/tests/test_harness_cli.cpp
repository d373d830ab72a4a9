#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "peer/cli.hpp"
#include "peer/harness.hpp"
#include "peer/problems.hpp"

using namespace peer;

namespace {

int run(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"peer"};
  argv.insert(argv.end(), args.begin(), args.end());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(const char* name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("g17 formatting round-trips doubles") {
  for (const double x : {1.0 / 3.0, 0.48059993107999468110, -2.5e-13}) {
    REQUIRE(std::stod(format_g17(x)) == x);
  }
}

TEST_CASE("convergence study on small Rayleigh grids") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const std::vector<std::size_t> grids{20, 40};
  const ConvergenceTable table = converge_study(suite, spec, grids, 320);

  REQUIRE(table.variables ==
          std::vector<std::string>{"y1", "y2", "p1", "p2"});
  REQUIRE(table.errors.size() == 4);
  for (const auto& row : table.errors) {
    REQUIRE(row.size() == 2);
    REQUIRE(row[0] > row[1]);  // errors shrink with refinement
    for (const double e : row) REQUIRE(e > 0.0);
  }
  // orders only on the doubling transition, blank on the coarsest grid
  for (const auto& row : table.orders) {
    REQUIRE(std::isnan(row[0]));
    REQUIRE(std::isfinite(row[1]));
    REQUIRE(row[1] > 1.0);
  }
}

TEST_CASE("convergence study input validation") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  REQUIRE_THROWS_AS(converge_study(suite, spec, {}, 320),
                    InvariantViolation);
  REQUIRE_THROWS_AS(converge_study(suite, spec, {40, 20}, 320),
                    InvariantViolation);
  REQUIRE_THROWS_AS(converge_study(suite, spec, {30}, 320),
                    InvariantViolation);
}

TEST_CASE("converge CSV format and reparse") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const ConvergenceTable table =
      converge_study(suite, spec, {20, 40}, 320);
  std::stringstream out;
  write_converge_csv(table, out);

  std::string line;
  REQUIRE(std::getline(out, line));
  REQUIRE(line == "N,var,error,order");
  std::size_t rows = 0;
  while (std::getline(out, line)) {
    std::stringstream ls(line);
    std::string n_str, var, err_str, ord_str;
    REQUIRE(std::getline(ls, n_str, ','));
    REQUIRE(std::getline(ls, var, ','));
    REQUIRE(std::getline(ls, err_str, ','));
    std::getline(ls, ord_str, ',');
    const std::size_t n = std::stoull(n_str);
    REQUIRE((n == 20 || n == 40));
    const std::size_t v =
        std::find(table.variables.begin(), table.variables.end(), var) -
        table.variables.begin();
    REQUIRE(v < table.variables.size());
    const std::size_t gi = (n == 20) ? 0 : 1;
    REQUIRE(std::stod(err_str) == table.errors[v][gi]);
    if (gi == 0)
      REQUIRE(ord_str.empty());
    else
      REQUIRE(std::stod(ord_str) == table.orders[v][gi]);
    ++rows;
  }
  REQUIRE(rows == 8);

  // byte-identical rerun
  std::stringstream again;
  write_converge_csv(converge_study(suite, spec, {20, 40}, 320), again);
  std::stringstream first;
  write_converge_csv(table, first);
  REQUIRE(again.str() == first.str());
}

TEST_CASE("printed table has bracketed orders") {
  const auto suite = builtin_suite("BDF3o32");
  const auto spec = rayleigh();
  const ConvergenceTable table =
      converge_study(suite, spec, {20, 40}, 320);
  std::stringstream out;
  print_converge_table(table, out);
  const std::string text = out.str();
  REQUIRE(text.find("BDF3o32") != std::string::npos);
  REQUIRE(text.find("rayleigh") != std::string::npos);
  REQUIRE(text.find('(') != std::string::npos);
  REQUIRE(text.find("y1") != std::string::npos);
  REQUIRE(text.find("p2") != std::string::npos);
}

TEST_CASE("method resolution falls back to files") {
  REQUIRE(resolve_method("BDF3o22").name == "BDF3o22");
  REQUIRE_THROWS_AS(resolve_method("no-such-method"), UnknownMethod);
}

TEST_CASE("cli exit codes") {
  REQUIRE(run({"verify-orders", "--method", "BDF3o32"}) == 0);
  REQUIRE(run({"stability", "--method", "BDF3o32", "--ntheta", "600"}) == 0);
  REQUIRE(run({"verify-orders", "--method", "no-such-method"}) == 1);
  REQUIRE(run({"verify-orders"}) == 2);          // missing --method
  REQUIRE(run({"no-such-subcommand"}) == 2);
  REQUIRE(run({"synthesize", "--d1", "0.3", "--d3", "0.3"}) == 1);  // off curve
}

TEST_CASE("cli synthesize writes a loadable method fragment") {
  TempFile tmp("peer_synth_test.method");
  REQUIRE(run({"synthesize", "--d1", "0.33333333333333333", "--d3",
               "0.33333333333333333", "--out", tmp.path.c_str()}) == 0);
  const std::string text = slurp(tmp.path);
  REQUIRE(text.find("[standard]") != std::string::npos);
  REQUIRE(text.find("c =") != std::string::npos);
  REQUIRE(text.find("K =") != std::string::npos);
}

TEST_CASE("cli scan emits the documented CSV header") {
  TempFile tmp("peer_scan_test.csv");
  REQUIRE(run({"scan", "--box", "0.2,0.8,0.2,0.8", "--seeds", "12", "--rng",
               "7", "--ntheta", "300", "--csv", tmp.path.c_str()}) == 0);
  const std::string text = slurp(tmp.path);
  REQUIRE(text.rfind("d1,d3,q_residual,zero_stable,alpha\n", 0) == 0);

  // deterministic rerun is byte-identical
  TempFile tmp2("peer_scan_test2.csv");
  REQUIRE(run({"scan", "--box", "0.2,0.8,0.2,0.8", "--seeds", "12", "--rng",
               "7", "--ntheta", "300", "--csv", tmp2.path.c_str()}) == 0);
  REQUIRE(slurp(tmp2.path) == text);
}

TEST_CASE("cli solve writes stage trajectories") {
  TempFile tmp("peer_solve_test.csv");
  REQUIRE(run({"solve", "--method", "BDF3o32", "--problem", "rayleigh",
               "--N", "16", "--csv", tmp.path.c_str()}) == 0);
  std::ifstream in(tmp.path);
  std::string header;
  REQUIRE(std::getline(in, header));
  REQUIRE(header == "n,i,t,y1,y2,p1,p2");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 17 * 3);
}

TEST_CASE("cli converge writes the study CSV") {
  TempFile tmp("peer_conv_test.csv");
  REQUIRE(run({"converge", "--method", "BDF3o32", "--problem", "rayleigh",
               "--grids", "20,40", "--nref", "320", "--csv",
               tmp.path.c_str()}) == 0);
  const std::string text = slurp(tmp.path);
  REQUIRE(text.rfind("N,var,error,order\n", 0) == 0);
}
