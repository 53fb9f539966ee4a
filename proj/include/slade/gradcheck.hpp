#pragma once

// Finite-difference certification of every analytic gradient: the embedding
// backward pass (raw and normalized), the ranking loss, basis cross-entropy,
// the similarity-distribution loss and both cross-entropy baselines.
// Exposed as a library call so the CLI `gradcheck` subcommand and the
// acceptance suite run the identical battery.

#include <random>

#include "slade/basis.hpp"
#include "slade/core.hpp"
#include "slade/embedding.hpp"
#include "slade/losses.hpp"

namespace slade {

struct GradCheckResult {
  std::string name;
  int probes = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

// Relative error with a floor that absorbs central-difference roundoff on
// near-zero coordinates.
inline double rel_err(double analytic, double fd) {
  double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
  return std::abs(analytic - fd) / denom;
}

inline Vec random_vec(std::mt19937_64& rng, size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vec v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  std::normal_distribution<double> d(0.0, scale);
  for (double& x : m.values) x = d(rng);
  return m;
}

/// Compares an analytic gradient against central differences of `f` over the
/// full coordinate vector, folding the result into `res`.
template <typename ScalarFn>
void compare(GradCheckResult& res, ScalarFn&& f, const Vec& x0, const Vec& analytic, double eps,
             double tol) {
  Vec fd = finite_diff_gradient(f, x0, eps);
  for (size_t i = 0; i < x0.size(); ++i) {
    double e = rel_err(analytic[i], fd[i]);
    res.max_rel_err = std::max(res.max_rel_err, e);
    ++res.probes;
  }
  res.pass = res.max_rel_err < tol;
}

}  // namespace gradcheck_detail

/// Backward pass against finite differences of loss = sum(G * forward(x)).
inline GradCheckResult check_embedding_backward(bool normalize, std::uint64_t seed,
                                                double eps = 1e-5, double tol = 1e-4,
                                                int instances = 4) {
  using namespace gradcheck_detail;
  GradCheckResult res{normalize ? "embedding-backward-normalized" : "embedding-backward-raw"};
  res.pass = true;
  for (int inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng(derive_seed(seed, 900 + inst));
    std::vector<int> dims = {3, 5, 2};
    EmbeddingParams p = init_params(derive_seed(seed, 910 + inst), dims, normalize);
    Matrix inputs = random_matrix(rng, 3, dims[0]);
    Matrix G = random_matrix(rng, 3, dims.back());

    // flatten parameters -> loss
    auto unpack = [&](const Vec& x) {
      EmbeddingParams q = p;
      size_t pos = 0;
      for (auto& w : q.weights)
        for (double& v : w.values) v = x[pos++];
      for (auto& b : q.biases)
        for (double& v : b) v = x[pos++];
      return q;
    };
    Vec x0;
    for (auto& w : p.weights) x0.insert(x0.end(), w.values.begin(), w.values.end());
    for (auto& b : p.biases) x0.insert(x0.end(), b.begin(), b.end());

    auto loss = [&](const Vec& x) {
      EmbeddingBatch e = forward(unpack(x), inputs);
      return dot(e.embeddings.values, G.values);
    };
    ParamGrads g = backward(p, inputs, G);
    Vec analytic;
    for (auto& w : g.weights) analytic.insert(analytic.end(), w.values.begin(), w.values.end());
    for (auto& b : g.biases) analytic.insert(analytic.end(), b.begin(), b.end());
    compare(res, loss, x0, analytic, eps, tol);
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

/// Ranking loss gradient w.r.t. raw embedding entries.
inline GradCheckResult check_rank_loss(std::uint64_t seed, double eps = 1e-5, double tol = 1e-4,
                                       int instances = 5) {
  using namespace gradcheck_detail;
  GradCheckResult res{"contrastive-rank-loss"};
  RankingMargins margins{0.3, 0.9};
  for (int inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng(derive_seed(seed, 920 + inst));
    int n = 6, d = 4;
    Matrix emb = random_matrix(rng, n, d);
    PairSet pairs;
    pairs.positives = {{0, 1}, {2, 3}, {1, 4}};
    pairs.negatives = {{0, 5}, {3, 4}, {2, 5}};

    auto loss = [&](const Vec& x) {
      EmbeddingBatch b{n, d, Matrix(n, d)};
      b.embeddings.values = x;
      return contrastive_rank_loss(b, pairs, margins).loss;
    };
    EmbeddingBatch b{n, d, emb};
    RankLossResult r = contrastive_rank_loss(b, pairs, margins);
    compare(res, loss, emb.values, r.grad_embeddings.values, eps, tol);
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

/// Cross-entropy gradients w.r.t. both basis entries and embeddings, probed
/// jointly over the concatenated coordinate vector.
inline GradCheckResult check_basis_ce(std::uint64_t seed, double eps = 1e-5, double tol = 1e-4,
                                      int instances = 4) {
  using namespace gradcheck_detail;
  GradCheckResult res{"basis-cross-entropy"};
  for (int inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng(derive_seed(seed, 930 + inst));
    int k = 5, d = 3, n = 4;
    Matrix W = random_matrix(rng, k, d);
    Matrix F = random_matrix(rng, n, d);
    std::vector<int> labels = {0, 2, 4, 1};

    Vec x0 = W.values;
    x0.insert(x0.end(), F.values.begin(), F.values.end());
    auto loss = [&](const Vec& x) {
      BasisMatrix basis(k, d);
      std::copy(x.begin(), x.begin() + W.values.size(), basis.values.values.begin());
      EmbeddingBatch b{n, d, Matrix(n, d)};
      std::copy(x.begin() + W.values.size(), x.end(), b.embeddings.values.begin());
      return basis_ce_loss(basis, b, labels).loss;
    };
    BasisMatrix basis(k, d);
    basis.values = W;
    EmbeddingBatch b{n, d, F};
    BasisCEResult r = basis_ce_loss(basis, b, labels);
    Vec analytic = r.grad_basis.values;
    analytic.insert(analytic.end(), r.grad_embeddings.values.begin(),
                    r.grad_embeddings.values.end());
    compare(res, loss, x0, analytic, eps, tol);
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

namespace gradcheck_detail {

/// Probes a similarity-statistics loss: the function re-updates the stats
/// from the probed similarity values before evaluating, matching the
/// batch-contribution gradient convention.
template <typename LossFn>
GradCheckResult check_sim_loss(const char* name, LossFn&& evaluate, std::uint64_t seed,
                               double eps, double tol, int instances, bool with_history) {
  GradCheckResult res{name};
  for (int inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng(derive_seed(seed, 940 + inst));
    std::uniform_real_distribution<double> pos_d(0.1, 0.9), neg_d(-0.9, 0.1);
    int n_pos = 10, n_neg = 10;
    Vec pos(n_pos), neg(n_neg);
    for (double& s : pos) s = pos_d(rng);
    for (double& s : neg) s = neg_d(rng);

    GaussStats prior = make_gauss_stats(0.5);
    if (with_history) {
      prior.pos_initialized = prior.neg_initialized = true;
      prior.mu_pos = 0.4;
      prior.var_pos = 0.02;
      prior.mu_neg = -0.3;
      prior.var_neg = 0.03;
    }

    Vec x0 = pos;
    x0.insert(x0.end(), neg.begin(), neg.end());
    auto value = [&](const Vec& x) {
      Vec p(x.begin(), x.begin() + n_pos);
      Vec ng(x.begin() + n_pos, x.end());
      return evaluate(prior, p, ng).loss;
    };
    auto r = evaluate(prior, pos, neg);
    Vec analytic = r.d_pos;
    analytic.insert(analytic.end(), r.d_neg.begin(), r.d_neg.end());
    compare(res, value, x0, analytic, eps, tol);
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

}  // namespace gradcheck_detail

inline GradCheckResult check_sd_loss(std::uint64_t seed, double eps = 1e-5, double tol = 1e-4) {
  SDConfig cfg{0.5, 0.25};
  return gradcheck_detail::check_sim_loss(
      "similarity-distribution-loss",
      [&](const GaussStats& prior, const Vec& p, const Vec& n) {
        GaussStats s = update_gauss_stats(prior, p, n);
        return sd_loss(s, p, n, cfg);
      },
      seed, eps, tol, 6, /*with_history=*/true);
}

inline GradCheckResult check_local_ce(std::uint64_t seed, double eps = 1e-5, double tol = 1e-4) {
  return gradcheck_detail::check_sim_loss(
      "local-cross-entropy",
      [&](const GaussStats&, const Vec& p, const Vec& n) { return local_ce_pair_loss(p, n); },
      seed, eps, tol, 6, /*with_history=*/false);
}

inline GradCheckResult check_global_ce(std::uint64_t seed, double eps = 1e-5, double tol = 1e-4) {
  return gradcheck_detail::check_sim_loss(
      "global-cross-entropy",
      [&](const GaussStats& prior, const Vec& p, const Vec& n) {
        GaussStats s = update_gauss_stats(prior, p, n);
        return global_ce_loss(s);
      },
      seed, eps, tol, 6, /*with_history=*/true);
}

/// The full battery. Every check must make at least 100 probes.
inline std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed = 20240501,
                                                        double eps = 1e-5, double tol = 1e-4) {
  std::vector<GradCheckResult> out;
  out.push_back(check_embedding_backward(false, seed, eps, tol));
  out.push_back(check_embedding_backward(true, seed, eps, tol));
  out.push_back(check_rank_loss(seed, eps, tol));
  out.push_back(check_basis_ce(seed, eps, tol));
  out.push_back(check_sd_loss(seed, eps, tol));
  out.push_back(check_local_ce(seed, eps, tol));
  out.push_back(check_global_ce(seed, eps, tol));
  return out;
}

}  // namespace slade
