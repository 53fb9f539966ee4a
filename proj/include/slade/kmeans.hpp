#pragma once

// k-means over teacher embeddings. Cluster ids become pseudo labels.
// k-means++ seeding, Lloyd iterations, deterministic for a fixed seed.

#include <random>

#include "slade/core.hpp"
#include "slade/embedding.hpp"

namespace slade {

struct ClusterModel {
  int k = 0;
  Matrix centers;       // k x d
  double inertia = 0.0; // sum of squared distances to assigned centers
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Nearest center by squared distance; ties go to the lowest center index.
inline int nearest_center(const Matrix& centers, std::span<const double> x) {
  int best = 0;
  double best_d = sq_dist(centers.row(0), x);
  for (int c = 1; c < centers.rows; ++c) {
    double d = sq_dist(centers.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline Matrix kmeanspp_init(const Matrix& points, int k, std::mt19937_64& rng) {
  int n = points.rows;
  Matrix centers(k, points.cols);
  std::uniform_int_distribution<int> first(0, n - 1);
  int c0 = first(rng);
  std::copy(points.row(c0).begin(), points.row(c0).end(), centers.row(0).begin());

  Vec d2(n, 0.0);
  for (int chosen = 1; chosen < k; ++chosen) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = sq_dist(centers.row(0), points.row(i));
      for (int c = 1; c < chosen; ++c)
        best = std::min(best, sq_dist(centers.row(c), points.row(i)));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) throw NumericError("fewer distinct points than clusters");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double target = u(rng) * total;
    double acc = 0.0;
    int pick = -1;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0) {
        pick = i;
        if (acc >= target) break;
      }
    }
    std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(chosen).begin());
  }
  return centers;
}

struct LloydResult {
  Matrix centers;
  std::vector<int> assignment;
  double inertia = 0.0;
};

inline LloydResult lloyd(const Matrix& points, int k, int max_iter, std::mt19937_64& rng) {
  int n = points.rows;
  Matrix centers = kmeanspp_init(points, k, rng);
  std::vector<int> assign(n, -1);
  std::vector<int> prev_assign;
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iter; ++it) {
    for (int i = 0; i < n; ++i) assign[i] = nearest_center(centers, points.row(i));

    // Re-seed any emptied cluster with the point farthest from its stale
    // center; each repair claims a distinct point, in cluster order.
    std::vector<int> counts(k, 0);
    for (int a : assign) ++counts[a];
    std::vector<char> claimed(n, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      int far = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (claimed[i]) continue;
        double d = sq_dist(centers.row(c), points.row(i));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      std::copy(points.row(far).begin(), points.row(far).end(), centers.row(c).begin());
      --counts[assign[far]];
      assign[far] = c;
      ++counts[c];
      claimed[far] = 1;
    }

    // Means of the (now all nonempty) clusters.
    Matrix sums(k, points.cols);
    for (int i = 0; i < n; ++i) add_scaled(sums.row(assign[i]), points.row(i), 1.0);
    for (int c = 0; c < k; ++c) {
      auto row = sums.row(c);
      for (double& x : row) x /= static_cast<double>(counts[c]);
    }
    centers = std::move(sums);

    double inertia = 0.0;
    for (int i = 0; i < n; ++i) inertia += sq_dist(centers.row(assign[i]), points.row(i));
    if (inertia > prev_inertia + 1e-9)
      throw std::logic_error("kmeans: inertia increased across an iteration");
    bool stable = (assign == prev_assign);
    prev_assign = assign;
    prev_inertia = inertia;
    if (stable) break;
  }

  // Final pass so every point ends on its true nearest center even when the
  // loop stopped at max_iter.
  LloydResult res;
  res.assignment.resize(n);
  res.inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    res.assignment[i] = nearest_center(centers, points.row(i));
    res.inertia += sq_dist(centers.row(res.assignment[i]), points.row(i));
  }
  res.centers = std::move(centers);
  return res;
}

}  // namespace detail

/// Fits k-means with k-means++ seeding; best of `restarts` runs by inertia.
inline ClusterModel kmeans_fit(const EmbeddingBatch& batch, int k, int max_iter,
                               std::uint64_t seed, int restarts = 1) {
  if (k <= 0) throw ValidationError("kmeans_fit: k must be positive");
  if (k > batch.count)
    throw ValidationError("kmeans_fit: k exceeds sample count (" + std::to_string(k) + " > " +
                          std::to_string(batch.count) + ")");
  if (max_iter < 1) throw ValidationError("kmeans_fit: max_iter must be at least 1");
  if (restarts < 1) throw ValidationError("kmeans_fit: restarts must be at least 1");
  require_finite(batch.embeddings.values, "kmeans points");

  ClusterModel best;
  bool first = true;
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto res = detail::lloyd(batch.embeddings, k, max_iter, rng);
    if (first || res.inertia < best.inertia) {
      best.k = k;
      best.centers = std::move(res.centers);
      best.inertia = res.inertia;
      first = false;
    }
  }
  return best;
}

/// Maps each sample to its nearest center; ties break to the lowest index.
inline std::vector<int> assign(const ClusterModel& model, const EmbeddingBatch& batch) {
  if (batch.dim != model.centers.cols)
    throw ValidationError("assign: embedding dim does not match center dim");
  std::vector<int> labels(batch.count);
  for (int i = 0; i < batch.count; ++i)
    labels[i] = detail::nearest_center(model.centers, batch.embeddings.row(i));
  return labels;
}

inline std::string serialize_cluster_model(const ClusterModel& m) {
  std::string out = "slade-kmeans v1\n";
  out += "k " + std::to_string(m.k) + "\n";
  out += "dim " + std::to_string(m.centers.cols) + "\n";
  out += "inertia " + fmt_double(m.inertia) + "\n";
  for (int r = 0; r < m.k; ++r) {
    auto row = m.centers.row(r);
    for (int c = 0; c < m.centers.cols; ++c) {
      out += fmt_double(row[c]);
      out += (c + 1 == m.centers.cols) ? "\n" : " ";
    }
  }
  return out;
}

inline ClusterModel parse_cluster_model(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "slade-kmeans v1")
    throw ValidationError("kmeans: bad header");
  auto kt = split_ws((std::getline(in, line), line));
  if (kt.size() != 2 || kt[0] != "k") throw ValidationError("kmeans: expected k line");
  int k = static_cast<int>(parse_int_token(kt[1], "kmeans k"));
  auto dt = split_ws((std::getline(in, line), line));
  if (dt.size() != 2 || dt[0] != "dim") throw ValidationError("kmeans: expected dim line");
  int d = static_cast<int>(parse_int_token(dt[1], "kmeans dim"));
  auto it = split_ws((std::getline(in, line), line));
  if (it.size() != 2 || it[0] != "inertia") throw ValidationError("kmeans: expected inertia line");
  ClusterModel m;
  m.k = k;
  m.inertia = parse_double_token(it[1], "kmeans inertia");
  m.centers = Matrix(k, d);
  for (int r = 0; r < k; ++r) {
    if (!std::getline(in, line)) throw ValidationError("kmeans: truncated file");
    auto toks = split_ws(line);
    if (static_cast<int>(toks.size()) != d)
      throw ValidationError("kmeans: center row has wrong field count");
    for (int c = 0; c < d; ++c) m.centers.at(r, c) = parse_double_token(toks[c], "kmeans value");
  }
  while (std::getline(in, line))
    if (!line.empty()) throw ValidationError("kmeans: trailing content");
  return m;
}

}  // namespace slade
