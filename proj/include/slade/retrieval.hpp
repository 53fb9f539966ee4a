#pragma once

// Exact retrieval evaluation: MAP@R, R-Precision, P@1 and Recall@K over a
// cosine-ranked gallery. Ties break by ascending gallery index so the
// evaluator is bit-reproducible and oracle-comparable.

#include <algorithm>
#include <map>

#include "slade/core.hpp"

namespace slade {

struct RetrievalIndex {
  Matrix gallery;           // unit rows
  std::vector<int> labels;  // aligned with rows

  RetrievalIndex() = default;
  RetrievalIndex(Matrix g, std::vector<int> l) : gallery(std::move(g)), labels(std::move(l)) {
    if (static_cast<int>(labels.size()) != gallery.rows)
      throw ValidationError("retrieval index: one label per gallery row required");
    for (int r = 0; r < gallery.rows; ++r) {
      double n = norm(gallery.row(r));
      if (std::abs(n - 1.0) > 1e-10)
        throw ValidationError("retrieval index: gallery row " + std::to_string(r) +
                              " is not unit norm");
    }
  }
};

struct RetrievalReport {
  double map_at_r = 0.0;
  double r_precision = 0.0;
  double p_at_1 = 0.0;
  std::vector<std::pair<int, double>> recall_at_k;  // ascending K
  int query_count = 0;
  int skipped_queries = 0;  // queries whose class has no other gallery member

  double recall_at(int k) const {
    for (auto& [kk, v] : recall_at_k)
      if (kk == k) return v;
    throw ValidationError("recall_at: K " + std::to_string(k) + " not evaluated");
  }
};

/// Gallery indices sorted by descending cosine similarity to the query,
/// ties by ascending index; `exclude` drops one row (self-match removal).
inline std::vector<int> rank_gallery(const RetrievalIndex& index, const Vec& query,
                                     int exclude = -1) {
  if (static_cast<int>(query.size()) != index.gallery.cols)
    throw ValidationError("rank_gallery: query dim mismatch");
  if (std::abs(norm(query) - 1.0) > 1e-8)
    throw ValidationError("rank_gallery: query is not unit norm");

  std::vector<std::pair<double, int>> scored;
  scored.reserve(index.gallery.rows);
  for (int r = 0; r < index.gallery.rows; ++r) {
    if (r == exclude) continue;
    scored.emplace_back(dot(index.gallery.row(r), query), r);
  }
  if (scored.empty()) throw ValidationError("rank_gallery: empty gallery after exclusion");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> order;
  order.reserve(scored.size());
  for (auto& [s, r] : scored) order.push_back(r);
  return order;
}

/// Evaluates queries against the gallery. exclude, when given, maps each
/// query to a gallery row omitted from its ranking (-1 for none); pass the
/// identity map for leave-one-out evaluation.
inline RetrievalReport evaluate(const RetrievalIndex& index, const Matrix& queries,
                                const std::vector<int>& query_labels, const std::vector<int>& ks,
                                const std::vector<int>* exclude = nullptr) {
  if (static_cast<int>(query_labels.size()) != queries.rows)
    throw ValidationError("evaluate: one label per query required");
  if (exclude && static_cast<int>(exclude->size()) != queries.rows)
    throw ValidationError("evaluate: exclusion map length mismatch");
  std::vector<int> sorted_ks = ks;
  std::sort(sorted_ks.begin(), sorted_ks.end());
  sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
  for (int k : sorted_ks)
    if (k < 1) throw ValidationError("evaluate: recall K must be at least 1");

  RetrievalReport rep;
  double sum_map = 0.0, sum_rp = 0.0, sum_p1 = 0.0;
  std::vector<double> sum_recall(sorted_ks.size(), 0.0);

  for (int q = 0; q < queries.rows; ++q) {
    int excl = exclude ? (*exclude)[q] : -1;
    int label = query_labels[q];
    int relevant = 0;
    for (int r = 0; r < index.gallery.rows; ++r)
      if (r != excl && index.labels[r] == label) ++relevant;
    if (relevant == 0) {
      ++rep.skipped_queries;
      continue;
    }

    auto order = rank_gallery(index, queries.row_vec(q), excl);
    int hits = 0;
    double ap_sum = 0.0;
    int hits_at_r = 0;
    for (int t = 0; t < static_cast<int>(order.size()); ++t) {
      bool correct = index.labels[order[t]] == label;
      if (correct) ++hits;
      if (t < relevant) {
        // P(i) counts only when position i itself is a correct match.
        if (correct) ap_sum += static_cast<double>(hits) / static_cast<double>(t + 1);
        if (correct) ++hits_at_r;
      }
      if (t == 0) sum_p1 += correct ? 1.0 : 0.0;
    }
    sum_map += ap_sum / static_cast<double>(relevant);
    sum_rp += static_cast<double>(hits_at_r) / static_cast<double>(relevant);
    for (size_t ki = 0; ki < sorted_ks.size(); ++ki) {
      int K = std::min<int>(sorted_ks[ki], static_cast<int>(order.size()));
      bool any = false;
      for (int t = 0; t < K && !any; ++t) any = index.labels[order[t]] == label;
      sum_recall[ki] += any ? 1.0 : 0.0;
    }
    ++rep.query_count;
  }

  if (rep.query_count > 0) {
    double inv = 1.0 / static_cast<double>(rep.query_count);
    rep.map_at_r = sum_map * inv;
    rep.r_precision = sum_rp * inv;
    rep.p_at_1 = sum_p1 * inv;
    for (size_t ki = 0; ki < sorted_ks.size(); ++ki)
      rep.recall_at_k.emplace_back(sorted_ks[ki], sum_recall[ki] * inv);
  } else {
    for (int k : sorted_ks) rep.recall_at_k.emplace_back(k, 0.0);
  }
  return rep;
}

/// Standard protocol: every gallery item queries the rest of the gallery.
inline RetrievalReport evaluate_leave_one_out(const Matrix& embeddings,
                                              const std::vector<int>& labels,
                                              const std::vector<int>& ks) {
  RetrievalIndex index(embeddings, labels);
  std::vector<int> self(embeddings.rows);
  for (int i = 0; i < embeddings.rows; ++i) self[i] = i;
  return evaluate(index, embeddings, labels, ks, &self);
}

inline std::string serialize_report(const RetrievalReport& r) {
  std::string out = "slade-retrieval v1\n";
  out += "map_at_r " + fmt_double(r.map_at_r) + "\n";
  out += "r_precision " + fmt_double(r.r_precision) + "\n";
  out += "p_at_1 " + fmt_double(r.p_at_1) + "\n";
  out += "query_count " + std::to_string(r.query_count) + "\n";
  out += "skipped_queries " + std::to_string(r.skipped_queries) + "\n";
  for (auto& [k, v] : r.recall_at_k)
    out += "recall_at " + std::to_string(k) + " " + fmt_double(v) + "\n";
  return out;
}

}  // namespace slade
