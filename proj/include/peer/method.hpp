#ifndef PEER_METHOD_HPP
#define PEER_METHOD_HPP

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "peer/errors.hpp"
#include "peer/matrix.hpp"
#include "peer/poly.hpp"

namespace peer {

struct Nodes {
  std::vector<double> c;

  explicit Nodes(std::vector<double> nodes) : c(std::move(nodes)) {
    if (c.size() < 2) throw InvariantViolation("need at least two nodes");
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j)
        if (std::abs(c[i] - c[j]) <= 1e-12)
          throw InvariantViolation("nodes must be pairwise distinct");
  }

  std::size_t s() const { return c.size(); }
  double d1() const { return c[1] - c[0]; }
  double d3() const { return c[2] - c[1]; }
};

enum class StageRole { start, standard, end };

struct StageMatrixSet {
  StageRole role;
  Mat A;
  std::optional<Mat> B;    // absent for role = start
  std::vector<double> K;   // diagonal entries
  std::optional<Mat> Atilde;  // optional for role = end

  Mat Kmat() const {
    Mat k(K.size(), K.size());
    for (std::size_t i = 0; i < K.size(); ++i) k(i, i) = K[i];
    return k;
  }

  std::size_t s() const { return A.rows(); }

  void validate() const {
    const std::size_t n = A.rows();
    if (A.cols() != n) throw InvariantViolation("A must be square");
    if (K.size() != n) throw InvariantViolation("K diagonal length");
    if (B && (B->rows() != n || B->cols() != n))
      throw InvariantViolation("B shape");
    if (role == StageRole::start && B)
      throw InvariantViolation("start set has no B");
    if (role != StageRole::start && !B)
      throw InvariantViolation("B required");
    if (role != StageRole::end) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (A(i, j) != 0.0)
            throw InvariantViolation("A lower triangular");
    }
    if (std::abs(determinant(A)) < 1e-14)
      throw InvariantViolation("A nonsingular");
  }
};

struct PeerMethodSuite {
  std::string name;
  Nodes nodes;
  StageMatrixSet start;
  StageMatrixSet standard;
  StageMatrixSet end;
  std::vector<double> a, b, w, v;
};

// Interpolation weights for evaluating at 0 from values at the nodes:
// v'1 = 1, v'c^j = 0 for j = 1..s-1 (Vandermonde system).
inline std::vector<double> derive_v(const Nodes& nodes) {
  const std::size_t s = nodes.s();
  Mat vt(s, s);  // rows: powers, cols: nodes
  Mat rhs(s, 1);
  rhs(0, 0) = 1.0;
  for (std::size_t j = 0; j < s; ++j) {
    double p = 1.0;
    for (std::size_t i = 0; i < s; ++i) {
      vt(i, j) = p;
      p *= nodes.c[j];
    }
  }
  const Mat x = solve_dense(vt, rhs);
  std::vector<double> v(s);
  for (std::size_t i = 0; i < s; ++i) v[i] = x(i, 0);
  return v;
}

// Q(d1,d3): solvability polynomial of the combined order-(4,3) conditions
// for 3-stage methods.
inline double q_polynomial(double d1, double d3) {
  return 3.0 * (11.0 * d1 * d1 + 18.0 * d1 * d3 + 7.0 * d3 * d3) * d1 * d3 -
         15.0 * d1 * d1 * d1 - 67.0 * d1 * d1 * d3 - 55.0 * d1 * d3 * d3 -
         7.0 * d3 * d3 * d3 +
         5.0 * (3.0 * d1 * d1 + 5.0 * d1 * d3 + d3 * d3) + 3.0 * (d1 + d3) -
         3.0;
}

// 12 c2^3 - 33 c2^2 + 28 c2 - 43/6: determines the interior node of the
// c3 != 1 end methods built on BDF3 node spacing.
inline double qn_bdf3_cubic(double c2) {
  return ((12.0 * c2 - 33.0) * c2 + 28.0) * c2 - 43.0 / 6.0;
}

inline std::vector<double> qn_bdf3_roots() {
  auto roots = real_cubic_roots(12.0, -33.0, 28.0, -43.0 / 6.0);
  for (double r : roots)
    if (std::abs(qn_bdf3_cubic(r)) > 1e-10)
      throw Error("cubic root polishing failed");
  return roots;
}

namespace detail {

inline std::vector<double> mat_times_ones(const Mat& m) {
  std::vector<double> r(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r[i] += m(i, j);
  return r;
}

inline std::vector<double> matT_times_ones(const Mat& m) {
  std::vector<double> r(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += m(i, j);
  return r;
}

}  // namespace detail

// Assembles a suite from its three coefficient sets; derives a = A0*1,
// b = A0*c - K0*1, w = AN'*1, v from the node interpolant, and validates
// the structural invariants.
inline PeerMethodSuite make_suite(std::string name, Nodes nodes,
                                  StageMatrixSet start, StageMatrixSet standard,
                                  StageMatrixSet end) {
  start.validate();
  standard.validate();
  end.validate();
  const std::size_t s = nodes.s();
  if (start.s() != s || standard.s() != s || end.s() != s)
    throw InvariantViolation("matrix sizes must match node count");
  PeerMethodSuite suite{std::move(name), std::move(nodes), std::move(start),
                        std::move(standard), std::move(end),
                        {}, {}, {}, {}};
  suite.a = detail::mat_times_ones(suite.start.A);
  suite.b = suite.start.A.apply(suite.nodes.c);
  for (std::size_t i = 0; i < s; ++i) suite.b[i] -= suite.start.K[i];
  suite.w = detail::matT_times_ones(suite.end.A);
  suite.v = derive_v(suite.nodes);
  double sw = 0.0, sv = 0.0;
  for (std::size_t i = 0; i < s; ++i) { sw += suite.w[i]; sv += suite.v[i]; }
  if (std::abs(sw - 1.0) > 1e-9)
    throw InvariantViolation("1'w = 1 violated");
  if (std::abs(sv - 1.0) > 1e-12)
    throw InvariantViolation("1'v = 1 violated");
  return suite;
}

namespace detail {
inline double fr(long num, long den) {
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

inline PeerMethodSuite builtin_suite(std::string_view name) {
  using detail::fr;
  // shared standard set: rescaled BDF3, shift-invariant in the nodes
  const Mat bdf3_a{{fr(11, 6), 0, 0}, {-3, fr(11, 6), 0}, {fr(3, 2), -3, fr(11, 6)}};
  const Mat bdf3_b{{fr(1, 3), fr(-3, 2), 3},
                   {0, fr(1, 3), fr(-3, 2)},
                   {0, 0, fr(1, 3)}};
  const std::vector<double> bdf3_k{fr(1, 3), fr(1, 3), fr(1, 3)};
  const StageMatrixSet standard{StageRole::standard, bdf3_a, bdf3_b, bdf3_k,
                                std::nullopt};

  // start set shared by BDF3o22 and BDF3o32
  const StageMatrixSet bdf3_start{
      StageRole::start,
      Mat{{2, 0, 0}, {fr(-10, 3), fr(15, 8), 0}, {fr(5, 3), fr(-73, 24), fr(11, 6)}},
      std::nullopt,
      {fr(1, 3), fr(25, 72), fr(1, 3)},
      std::nullopt};

  if (name == "BDF3o22") {
    StageMatrixSet end{
        StageRole::end,
        Mat{{fr(21, 8), 0, 0}, {fr(-14, 3), fr(23, 12), 0},
            {fr(49, 24), fr(-23, 12), 1}},
        Mat{{fr(1, 2), fr(-73, 24), fr(31, 6)},
            {fr(-1, 3), fr(41, 12), fr(-35, 6)},
            {fr(1, 6), fr(-37, 24), fr(5, 2)}},
        {fr(7, 36), fr(23, 36), 0},
        std::nullopt};
    return make_suite("BDF3o22", Nodes({fr(1, 3), fr(2, 3), 1.0}), bdf3_start,
                      standard, std::move(end));
  }
  if (name == "BDF3o32") {
    StageMatrixSet end{
        StageRole::end,
        Mat{{fr(9, 5), 0, 0}, {fr(-109, 40), fr(4, 3), fr(7, 24)},
            {fr(37, 40), fr(-4, 3), fr(17, 24)}},
        Mat{{fr(39, 80), fr(-19, 10), fr(257, 80)},
            {fr(-37, 120), fr(17, 15), fr(-77, 40)},
            {fr(37, 240), fr(-2, 5), fr(131, 240)}},
        {fr(7, 24), fr(4, 9), fr(7, 72)},
        Mat{{fr(9, 5), 0, 0}, {fr(-109, 40), fr(73, 39), 0},
            {fr(37, 40), fr(-4, 3), fr(535, 752)}}};
    return make_suite("BDF3o32", Nodes({fr(1, 3), fr(2, 3), 1.0}), bdf3_start,
                      standard, std::move(end));
  }
  if (name == "PEER3o32w") {
    const double c2 = 0.48059993107999468110;
    StageMatrixSet start{
        StageRole::start,
        Mat{{2.1796087544459576670, 0, 0},
            {-4.2110754936961070457, 1.9644965156719027025, 0},
            {2.3648000725834827177, -3.1311631823385693702, fr(11, 6)}},
        std::nullopt,
        {0.16049178284304720811, 0.37705439411285645618, fr(1, 3)},
        std::nullopt};
    StageMatrixSet end{
        StageRole::end,
        Mat{{2, 0, 0},
            {-3.2608729312532042110, 1.7608729312532043906, 0},
            {1.6957667700466743694, -3.1888608156001606791,
             1.9930940455534862169}},
        Mat{{0.5271726507800490190, -2.0724604020801301580,
             3.5452877513000811390},
            {-0.3876786348934308516, 1.4782541374935927700,
             -2.5905755026001617388},
            {0.19383931744671510930, -0.57246040208012921227,
             0.87862108463341401017}},
        {0.32729496649332262670, 0.32125659965331187900,
         0.37084850277337088940},
        std::nullopt};
    return make_suite("PEER3o32w", Nodes({c2 - fr(1, 3), c2, c2 + fr(1, 3)}),
                      std::move(start), standard, std::move(end));
  }
  throw UnknownMethod("unknown builtin method: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Method file format:
//   name = <id>
//   c = v1 v2 v3
//   [start] / [standard] / [end] blocks with
//   A = r11 r12 ...; r21 ...; ...
//   K = k1 k2 k3
//   B = ... (standard/end), Atilde = ... (end, optional)
// Numbers are decimals or "p/q" fractions.  '#' starts a comment.
// ---------------------------------------------------------------------------

namespace detail {

struct MethodFileParser {
  explicit MethodFileParser(std::istream& in) : in_(in) {}

  PeerMethodSuite parse() {
    std::string name = "unnamed";
    std::optional<std::vector<double>> c;
    struct Block {
      std::optional<Mat> A, B, Atilde;
      std::optional<std::vector<double>> K;
    };
    Block blocks[3];
    int current = -1;

    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      std::string line = strip(raw);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line == "[start]") current = 0;
        else if (line == "[standard]") current = 1;
        else if (line == "[end]") current = 2;
        else fail("unknown section " + line, 1);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail("expected 'key = value'", 1);
      const std::string key = strip(line.substr(0, eq));
      const std::string value = strip(line.substr(eq + 1));
      if (key == "name") {
        name = value;
      } else if (key == "c") {
        c = parse_vector(value);
      } else if (current < 0) {
        fail("'" + key + "' outside a section", 1);
      } else if (key == "A") {
        blocks[current].A = parse_matrix(value);
      } else if (key == "B") {
        blocks[current].B = parse_matrix(value);
      } else if (key == "K") {
        blocks[current].K = parse_diagonal(value);
      } else if (key == "Atilde") {
        blocks[current].Atilde = parse_matrix(value);
      } else {
        fail("unknown key '" + key + "'", 1);
      }
    }
    if (!c) fail("missing node line 'c = ...'", 1);
    for (int i = 0; i < 3; ++i) {
      if (!blocks[i].A || !blocks[i].K)
        fail("section missing A or K", 1);
    }
    if (blocks[0].B) fail("[start] must not contain B", 1);
    if (!blocks[1].B || !blocks[2].B)
      fail("[standard] and [end] need B", 1);

    StageMatrixSet start{StageRole::start, *blocks[0].A, std::nullopt,
                         *blocks[0].K, std::nullopt};
    StageMatrixSet standard{StageRole::standard, *blocks[1].A, blocks[1].B,
                            *blocks[1].K, std::nullopt};
    StageMatrixSet end{StageRole::end, *blocks[2].A, blocks[2].B,
                       *blocks[2].K, blocks[2].Atilde};
    try {
      return make_suite(name, Nodes(*c), std::move(start), std::move(standard),
                        std::move(end));
    } catch (const InvariantViolation&) {
      throw;
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg, std::size_t col) const {
    std::ostringstream os;
    os << "parse error at line " << line_ << ", column " << col << ": " << msg;
    throw ParseError(os.str());
  }

  static std::string strip(std::string s) {
    const auto hash = s.find('#');
    if (hash != std::string::npos) s.erase(hash);
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  double parse_number(const std::string& tok, std::size_t col) const {
    const auto slash = tok.find('/');
    try {
      std::size_t used = 0;
      if (slash != std::string::npos) {
        const double num = std::stod(tok.substr(0, slash), &used);
        if (used != slash) throw std::invalid_argument(tok);
        const double den = std::stod(tok.substr(slash + 1), &used);
        if (used != tok.size() - slash - 1) throw std::invalid_argument(tok);
        if (den == 0.0) fail("zero denominator in '" + tok + "'", col);
        return num / den;
      }
      const double x = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return x;
    } catch (const std::logic_error&) {
      fail("bad number '" + tok + "'", col);
    }
  }

  std::vector<double> parse_vector(const std::string& s) const {
    std::istringstream is(s);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) out.push_back(parse_number(tok, 1));
    if (out.empty()) fail("empty value", 1);
    return out;
  }

  // K is a diagonal: either the diagonal entries on one line or a full
  // matrix whose off-diagonal entries must vanish.
  std::vector<double> parse_diagonal(const std::string& s) const {
    if (s.find(';') == std::string::npos) return parse_vector(s);
    const Mat m = parse_matrix(s);
    if (m.rows() != m.cols()) fail("K must be square", 1);
    std::vector<double> diag(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      diag[i] = m(i, i);
      for (std::size_t j = 0; j < m.cols(); ++j)
        if (i != j && m(i, j) != 0.0)
          throw InvariantViolation("K diagonal");
    }
    return diag;
  }

  Mat parse_matrix(const std::string& s) const {
    std::vector<std::vector<double>> rows;
    std::string part;
    std::istringstream is(s);
    while (std::getline(is, part, ';')) rows.push_back(parse_vector(part));
    const std::size_t n = rows.size();
    Mat m(n, rows.front().size());
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != m.cols()) fail("ragged matrix rows", 1);
      for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::istream& in_;
  std::size_t line_ = 0;
};

}  // namespace detail

inline PeerMethodSuite load_suite(std::istream& in) {
  return detail::MethodFileParser(in).parse();
}

inline PeerMethodSuite load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open method file: " + path);
  return load_suite(in);
}

}  // namespace peer

#endif
