#pragma once

// High-confidence pair mining: thresholds derived from the running
// similarity statistics, then an in-batch filter over all pair similarities
// in basis space.

#include <algorithm>

#include "slade/basis.hpp"
#include "slade/losses.hpp"

namespace slade {

struct MiningThresholds {
  double t1 = 0.0;  // accept as positive when s >= t1
  double t2 = 0.0;  // accept as negative when s <= t2
};

/// T1 = mu+, T2 = mu-. Rejects unseparated distributions so the caller can
/// skip mining for the step instead of emitting junk pairs.
inline MiningThresholds thresholds_from_stats(const GaussStats& stats) {
  if (!stats.initialized()) throw ValidationError("thresholds_from_stats: stats not initialized");
  if (stats.mu_pos <= stats.mu_neg) throw NumericError("distributions not separated");
  return MiningThresholds{stats.mu_pos, stats.mu_neg};
}

struct MinedPairs {
  PairSet pairs;
  MiningThresholds thresholds;
  GaussStats stats_snapshot;
  int degenerate_pairs = 0;
};

namespace detail {

struct ScoredPair {
  double sim;
  IndexPair pair;
};

// keep the `cap` most extreme entries; ties by lowest index pair
inline void apply_cap(std::vector<ScoredPair>& scored, int cap, bool descending) {
  if (cap <= 0 || static_cast<int>(scored.size()) <= cap) return;
  std::sort(scored.begin(), scored.end(), [&](const ScoredPair& a, const ScoredPair& b) {
    if (a.sim != b.sim) return descending ? a.sim > b.sim : a.sim < b.sim;
    return a.pair < b.pair;
  });
  scored.resize(cap);
}

}  // namespace detail

/// Scores all unordered in-batch pairs and keeps those past the thresholds.
/// With pair_cap > 0 only the most extreme similarities survive per side.
/// Emitted pair lists follow the batch enumeration order.
inline MinedPairs mine_pairs(const BasisMatrix& basis, const EmbeddingBatch& batch,
                             const MiningThresholds& thresholds, int pair_cap = 0,
                             const GaussStats* stats_snapshot = nullptr) {
  if (batch.count < 2) throw ValidationError("mine_pairs: need at least 2 samples");
  if (!(thresholds.t1 > thresholds.t2))
    throw ValidationError("mine_pairs: degenerate thresholds (t1 must exceed t2)");
  if (batch.dim != basis.dim) throw ValidationError("mine_pairs: dim mismatch");

  std::vector<Vec> projected(batch.count);
  Vec norms(batch.count);
  for (int i = 0; i < batch.count; ++i) {
    projected[i] = project(basis, batch.embeddings.row(i));
    norms[i] = norm(projected[i]);
  }

  MinedPairs out;
  out.thresholds = thresholds;
  if (stats_snapshot) out.stats_snapshot = *stats_snapshot;

  std::vector<detail::ScoredPair> pos, neg;
  for (int i = 0; i < batch.count; ++i) {
    for (int j = i + 1; j < batch.count; ++j) {
      if (norms[i] < 1e-12 || norms[j] < 1e-12) {
        ++out.degenerate_pairs;
        continue;
      }
      double s = std::clamp(dot(projected[i], projected[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      if (s >= thresholds.t1) pos.push_back({s, {i, j}});
      else if (s <= thresholds.t2) neg.push_back({s, {i, j}});
    }
  }
  detail::apply_cap(pos, pair_cap, /*descending=*/true);
  detail::apply_cap(neg, pair_cap, /*descending=*/false);

  auto by_pair = [](const detail::ScoredPair& a, const detail::ScoredPair& b) {
    return a.pair < b.pair;
  };
  std::sort(pos.begin(), pos.end(), by_pair);
  std::sort(neg.begin(), neg.end(), by_pair);
  for (const auto& sp : pos) out.pairs.positives.push_back(sp.pair);
  for (const auto& sp : neg) out.pairs.negatives.push_back(sp.pair);
  return out;
}

struct PairPurity {
  double positive = 1.0;  // fraction of mined positives with matching true class
  double negative = 1.0;  // fraction of mined negatives with differing true class
  int positive_count = 0;
  int negative_count = 0;
};

/// Scores mined pairs against reference labels. Sides with no pairs report
/// purity 1 so medians over seeds stay well defined.
inline PairPurity pair_purity(const PairSet& pairs, const std::vector<int>& true_labels) {
  PairPurity out;
  out.positive_count = static_cast<int>(pairs.positives.size());
  out.negative_count = static_cast<int>(pairs.negatives.size());
  int pos_ok = 0, neg_ok = 0;
  for (auto [i, j] : pairs.positives) {
    if (i < 0 || j < 0 || i >= static_cast<int>(true_labels.size()) ||
        j >= static_cast<int>(true_labels.size()))
      throw ValidationError("pair_purity: pair index outside label range");
    if (true_labels[i] == true_labels[j]) ++pos_ok;
  }
  for (auto [i, j] : pairs.negatives) {
    if (i < 0 || j < 0 || i >= static_cast<int>(true_labels.size()) ||
        j >= static_cast<int>(true_labels.size()))
      throw ValidationError("pair_purity: pair index outside label range");
    if (true_labels[i] != true_labels[j]) ++neg_ok;
  }
  if (out.positive_count > 0) out.positive = static_cast<double>(pos_ok) / out.positive_count;
  if (out.negative_count > 0) out.negative = static_cast<double>(neg_ok) / out.negative_count;
  return out;
}

}  // namespace slade
