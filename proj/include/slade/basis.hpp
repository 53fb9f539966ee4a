#pragma once

// Learnable basis vectors: a k_b x d matrix whose rows act as class
// anchors. Projecting an embedding onto the rows yields the class-response
// representation used for pair scoring and mining.

#include <random>

#include "slade/core.hpp"

namespace slade {

struct BasisMatrix {
  int basis_count = 0;  // rows
  int dim = 0;          // embedding dim
  Matrix values;

  BasisMatrix() = default;
  BasisMatrix(int k_b, int d) : basis_count(k_b), dim(d), values(k_b, d) {
    if (k_b <= 0 || d <= 0) throw ValidationError("basis: dimensions must be positive");
  }

  bool operator==(const BasisMatrix& o) const {
    return basis_count == o.basis_count && dim == o.dim && values == o.values;
  }
};

inline BasisMatrix init_basis(std::uint64_t seed, int basis_count, int dim) {
  BasisMatrix b(basis_count, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (double& x : b.values.values) x = dist(rng);
  return b;
}

/// r = W_a f, so r_i is the response of basis row i to the embedding.
inline Vec project(const BasisMatrix& basis, std::span<const double> f) {
  if (static_cast<int>(f.size()) != basis.dim)
    throw ValidationError("project: embedding dim does not match basis dim");
  return matvec(basis.values, f);
}

inline Vec project(const BasisMatrix& basis, const Vec& f) {
  return project(basis, std::span<const double>(f));
}

inline std::string serialize_basis(const BasisMatrix& b) {
  std::string out = "slade-basis v1\n";
  out += "k " + std::to_string(b.basis_count) + "\n";
  out += "dim " + std::to_string(b.dim) + "\n";
  for (int r = 0; r < b.basis_count; ++r) {
    auto row = b.values.row(r);
    for (int c = 0; c < b.dim; ++c) {
      out += fmt_double(row[c]);
      out += (c + 1 == b.dim) ? "\n" : " ";
    }
  }
  return out;
}

inline BasisMatrix parse_basis(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "slade-basis v1")
    throw ValidationError("basis: bad header");
  auto kt = split_ws((std::getline(in, line), line));
  if (kt.size() != 2 || kt[0] != "k") throw ValidationError("basis: expected k line");
  int k = static_cast<int>(parse_int_token(kt[1], "basis k"));
  auto dt = split_ws((std::getline(in, line), line));
  if (dt.size() != 2 || dt[0] != "dim") throw ValidationError("basis: expected dim line");
  int d = static_cast<int>(parse_int_token(dt[1], "basis dim"));
  BasisMatrix b(k, d);
  for (int r = 0; r < k; ++r) {
    if (!std::getline(in, line)) throw ValidationError("basis: truncated file");
    auto toks = split_ws(line);
    if (static_cast<int>(toks.size()) != d)
      throw ValidationError("basis: row " + std::to_string(r) + " has wrong field count");
    for (int c = 0; c < d; ++c) b.values.at(r, c) = parse_double_token(toks[c], "basis value");
  }
  while (std::getline(in, line))
    if (!line.empty()) throw ValidationError("basis: trailing content");
  return b;
}

}  // namespace slade
