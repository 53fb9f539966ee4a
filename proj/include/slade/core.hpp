#pragma once

// Dense vector/matrix primitives, similarity kernels and the
// finite-difference gradient oracle shared by every test suite.
// Everything here is a pure function on immutable inputs; all real
// arithmetic is 64-bit.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace slade {

/// Structural validation failure: bad shapes, malformed files, bad config.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerically degenerate state: zero vectors, dead embeddings,
/// unseparated similarity distributions.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec = std::vector<double>;
using IndexPair = std::pair<int, int>;

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs)) throw ValidationError(std::string(what) + ": non-finite value");
}

/// Row-major dense matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c),
        values(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
    if (r < 0 || c < 0) throw ValidationError("matrix dimensions must be nonnegative");
  }

  static Matrix from_rows(const std::vector<Vec>& rs) {
    Matrix m(static_cast<int>(rs.size()), rs.empty() ? 0 : static_cast<int>(rs[0].size()));
    for (int i = 0; i < m.rows; ++i) {
      if (static_cast<int>(rs[i].size()) != m.cols)
        throw ValidationError("ragged rows in matrix literal");
      std::copy(rs[i].begin(), rs[i].end(), m.values.begin() + static_cast<size_t>(i) * m.cols);
    }
    return m;
  }

  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) {
    return {values.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {values.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  Vec row_vec(int r) const {
    auto s = row(r);
    return Vec(s.begin(), s.end());
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && values == o.values;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// a += s * b
inline void add_scaled(std::span<double> a, std::span<const double> b, double s) {
  if (a.size() != b.size()) throw ValidationError("add_scaled: length mismatch");
  for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline void add_scaled(Matrix& a, const Matrix& b, double s) {
  if (!a.same_shape(b)) throw ValidationError("add_scaled: shape mismatch");
  add_scaled(std::span<double>(a.values), std::span<const double>(b.values), s);
}

/// y = M x
inline Vec matvec(const Matrix& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.cols) throw ValidationError("matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) y[r] = dot(m.row(r), x);
  return y;
}

/// y = M^T x
inline Vec matvec_t(const Matrix& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.rows) throw ValidationError("matvec_t: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    auto mr = m.row(r);
    for (int c = 0; c < m.cols; ++c) y[c] += mr[c] * x[r];
  }
  return y;
}

/// M += s * (u outer v), u along rows.
inline void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double s = 1.0) {
  if (static_cast<int>(u.size()) != m.rows || static_cast<int>(v.size()) != m.cols)
    throw ValidationError("add_outer: dimension mismatch");
  for (int r = 0; r < m.rows; ++r) {
    auto mr = m.row(r);
    for (int c = 0; c < m.cols; ++c) mr[c] += s * u[r] * v[c];
  }
}

/// Scales v to unit Euclidean norm. A zero vector has no direction and is
/// rejected so a dead embedding surfaces instead of propagating silently.
inline Vec l2_normalize(const Vec& v) {
  require_finite(v, "l2_normalize");
  double n = norm(v);
  if (n < 1e-300) throw NumericError("degenerate direction");
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

/// Cosine of the angle between u and v, clamped to [-1, 1] so downstream
/// threshold comparisons never see 1 + epsilon.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ValidationError("cosine_similarity: length mismatch");
  double nu = norm(u);
  double nv = norm(v);
  if (nu < 1e-300 || nv < 1e-300) throw NumericError("degenerate direction");
  double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine_similarity(const Vec& u, const Vec& v) {
  return cosine_similarity(std::span<const double>(u), std::span<const double>(v));
}

/// Max-subtracted softmax.
inline Vec softmax(const Vec& v) {
  require_finite(v, "softmax");
  if (v.empty()) throw ValidationError("softmax: empty input");
  double m = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double total = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

/// Central-difference gradient: entry i is (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
/// This is the independent oracle every analytic gradient in the project is
/// checked against; keep it free of any shared code path with those gradients.
template <typename ScalarFn>
Vec finite_diff_gradient(ScalarFn&& f, Vec x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_gradient: eps must be positive");
  Vec g(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    double saved = x[i];
    x[i] = saved + eps;
    double fp = f(x);
    x[i] = saved - eps;
    double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Deterministic seed derivation. Named streams keep independent parts of the
// pipeline (batch order, pair sampling, clustering) from sharing RNG state.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream * 0x2545f4914f6cdd1dULL + 1));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t round) {
  return derive_seed(derive_seed(base, stream), round);
}

// ---------------------------------------------------------------------------
// Text helpers. Doubles are written in shortest round-trip form so every file
// format re-reads bit-exactly.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double_token(std::string_view tok, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw ValidationError(context + ": bad numeric field '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw ValidationError(context + ": non-finite value");
  return v;
}

inline long long parse_int_token(std::string_view tok, const std::string& context) {
  long long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw ValidationError(context + ": bad integer field '" + std::string(tok) + "'");
  return v;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

/// FNV-1a over a byte string; used for checkpoint identifiers.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf, 16);
}

}  // namespace slade
