#pragma once

// Pipeline orchestration: teacher fine-tuning on labeled data, pseudo-label
// generation by clustering, basis warm-up, joint student/basis optimization,
// the iterative student-to-teacher refresh, and the fold-concatenation
// protocol.
//
// Determinism contract: every stochastic choice draws from a named RNG
// stream derived from (config seed, stream id, round), so a fixed config and
// seed reproduce the run bit for bit. The labeled-data streams are shared
// between teacher and student training, which makes a student with
// lambda1 = lambda2 = 0 retrace the teacher trajectory exactly.

#include <iostream>
#include <numeric>
#include <optional>

#include "slade/basis.hpp"
#include "slade/core.hpp"
#include "slade/dataio.hpp"
#include "slade/embedding.hpp"
#include "slade/kmeans.hpp"
#include "slade/losses.hpp"
#include "slade/mining.hpp"
#include "slade/retrieval.hpp"

namespace slade {

// RNG stream ids
namespace streams {
inline constexpr std::uint64_t kInitTeacher = 11;
inline constexpr std::uint64_t kLabeledBatch = 12;   // shared: teacher + student
inline constexpr std::uint64_t kLabeledPairs = 13;   // shared: teacher + student
inline constexpr std::uint64_t kUnlabeledBatch = 14;
inline constexpr std::uint64_t kKmeans = 15;
inline constexpr std::uint64_t kInitBasis = 16;
inline constexpr std::uint64_t kWarmupLabeled = 17;
inline constexpr std::uint64_t kWarmupUnlabeled = 18;
inline constexpr std::uint64_t kFold = 19;
}  // namespace streams

struct PseudoLabeledSet {
  Matrix features;
  std::vector<int> pseudo_labels;
  std::string source_teacher;  // checksum of the teacher checkpoint
  int k = 0;

  int count() const { return features.rows; }
};

struct PseudoLabelResult {
  PseudoLabeledSet set;
  ClusterModel model;
};

struct StepRecord {
  double rank_labeled = 0.0;
  double rank_unlabeled = 0.0;
  double basis_ce = 0.0;
  double basis_sd = 0.0;
  double total = 0.0;
  int mined_positives = 0;
  int mined_negatives = 0;
  bool mining_skipped = false;  // statistics unseparated this step
};

struct EpochRecord {
  int epoch = 0;
  double rank_labeled = 0.0;   // means over the epoch's steps
  double rank_unlabeled = 0.0;
  double basis_ce = 0.0;
  double basis_sd = 0.0;
  double total = 0.0;
  int mined_positives = 0;     // totals
  int mined_negatives = 0;
  int skipped_mining_steps = 0;
  int starved_positive_anchors = 0;
  int starved_negative_anchors = 0;
};

struct RoundRecord {
  int round = 0;
  std::string role;            // "teacher" or "student"
  std::string checkpoint;      // params checksum
  std::string pseudo_source;   // teacher checksum behind this round's pseudo labels
  std::vector<EpochRecord> epochs;
  std::optional<RetrievalReport> heldout;
};

struct PipelineState {
  EmbeddingParams teacher;
  EmbeddingParams student;
  BasisMatrix basis;
  GaussStats stats;
  int round = 0;
  std::vector<RoundRecord> history;
  std::vector<EmbeddingParams> round_checkpoints;  // aligned with history
};

inline const std::vector<int>& default_recall_ks() {
  static const std::vector<int> ks = {1, 2, 4, 8};
  return ks;
}

namespace detail {

inline void validate_labeled(const Dataset& d, const char* who) {
  if (d.count() == 0) throw ValidationError(std::string(who) + ": empty labeled dataset");
  for (int l : d.labels)
    if (l < 0) throw ValidationError(std::string(who) + ": labeled dataset has unlabeled rows");
}

inline Matrix take_rows(const Matrix& m, std::span<const int> idx) {
  Matrix out(static_cast<int>(idx.size()), m.cols);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(static_cast<int>(i)).begin());
  return out;
}

template <typename T>
std::vector<T> take(const std::vector<T>& v, std::span<const int> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[i]);
  return out;
}

/// Per anchor: one same-class and one different-class partner, both drawn
/// uniformly from the batch. Anchors without a candidate on a side are
/// counted as starved, not fatal.
inline PairSet sample_ranking_pairs(const std::vector<int>& labels, std::mt19937_64& rng,
                                    int* starved_pos, int* starved_neg) {
  int n = static_cast<int>(labels.size());
  PairSet pairs;
  std::vector<int> same, diff;
  for (int a = 0; a < n; ++a) {
    same.clear();
    diff.clear();
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      (labels[b] == labels[a] ? same : diff).push_back(b);
    }
    if (!same.empty()) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(same.size()) - 1);
      pairs.positives.emplace_back(a, same[pick(rng)]);
    } else if (starved_pos) {
      ++*starved_pos;
    }
    if (!diff.empty()) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(diff.size()) - 1);
      pairs.negatives.emplace_back(a, diff[pick(rng)]);
    } else if (starved_neg) {
      ++*starved_neg;
    }
  }
  return pairs;
}

/// All unordered in-batch pairs routed by label equality (the pseudo-label
/// ablation draws its ranking pairs this way, no thresholds involved).
inline PairSet all_label_pairs(const std::vector<int>& labels) {
  PairSet pairs;
  int n = static_cast<int>(labels.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      (labels[i] == labels[j] ? pairs.positives : pairs.negatives).emplace_back(i, j);
  return pairs;
}

/// Deterministic shuffled batch stream that reshuffles when exhausted.
class BatchCycler {
 public:
  BatchCycler(int count, int batch_size, std::uint64_t seed)
      : count_(count), batch_(batch_size), rng_(seed) {
    order_.resize(count);
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }

  std::vector<int> next() {
    if (count_ == 0) return {};
    if (pos_ >= count_) reshuffle();
    int take = std::min(batch_, count_ - pos_);
    std::vector<int> idx(order_.begin() + pos_, order_.begin() + pos_ + take);
    pos_ += take;
    return idx;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  int count_;
  int batch_;
  std::mt19937_64 rng_;
  std::vector<int> order_;
  int pos_ = 0;
};

struct VariantLoss {
  double value = 0.0;
  Vec d_pos, d_neg;
  bool active = false;
};

inline VariantLoss basis_pair_loss(SDVariant variant, const GaussStats& stats,
                                   const PairSimilarities& sims, const SDConfig& cfg) {
  VariantLoss out;
  if (sims.pos_sims.empty() && sims.neg_sims.empty()) return out;
  switch (variant) {
    case SDVariant::kSD: {
      auto r = sd_loss(stats, sims.pos_sims, sims.neg_sims, cfg);
      if (r.empty) return out;
      out = {r.loss, std::move(r.d_pos), std::move(r.d_neg), true};
      return out;
    }
    case SDVariant::kLocalCE: {
      auto r = local_ce_pair_loss(sims.pos_sims, sims.neg_sims);
      out = {r.loss, std::move(r.d_pos), std::move(r.d_neg), true};
      return out;
    }
    case SDVariant::kGlobalCE: {
      if (!stats.initialized()) return out;
      auto r = global_ce_loss(stats);
      out = {r.loss, std::move(r.d_pos), std::move(r.d_neg), true};
      return out;
    }
  }
  return out;
}

}  // namespace detail

struct TeacherResult {
  EmbeddingParams params;
  std::vector<EpochRecord> epochs;
};

/// Fine-tunes an embedding on labeled data with the ranking loss.
inline TeacherResult train_teacher(const Dataset& labeled, const TrainConfig& cfg,
                                   const std::optional<EmbeddingParams>& init = std::nullopt,
                                   int round = 0) {
  validate_config(cfg);
  detail::validate_labeled(labeled, "train_teacher");

  EmbeddingParams params =
      init ? *init
           : init_params(derive_seed(cfg.seed, streams::kInitTeacher, round),
                         cfg.layer_dims(labeled.dim(), cfg.embed_dim), cfg.normalize_output);
  if (params.input_dim() != labeled.dim())
    throw ValidationError("train_teacher: parameter input dim does not match dataset");

  RankingMargins margins{cfg.margin_pos, cfg.margin_neg};
  std::mt19937_64 batch_rng(derive_seed(cfg.seed, streams::kLabeledBatch, round));
  std::mt19937_64 pair_rng(derive_seed(cfg.seed, streams::kLabeledPairs, round));

  TeacherResult out;
  int n = labeled.count();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs_teacher; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      int take = std::min(cfg.batch_size, n - start);
      std::span<const int> idx(order.data() + start, static_cast<size_t>(take));
      Matrix bx = detail::take_rows(labeled.features, idx);
      std::vector<int> by = detail::take(labeled.labels, idx);

      EmbeddingBatch emb = forward(params, bx);
      PairSet pairs = detail::sample_ranking_pairs(by, pair_rng, &rec.starved_positive_anchors,
                                                   &rec.starved_negative_anchors);
      RankLossResult rl = contrastive_rank_loss(emb, pairs, margins);
      ParamGrads grads = backward(params, bx, rl.grad_embeddings);
      params = sgd_step(params, grads, cfg.learning_rate);

      rec.rank_labeled += rl.loss;
      rec.total += rl.loss;
      ++steps;
    }
    if (steps > 0) {
      rec.rank_labeled /= steps;
      rec.total /= steps;
    }
    out.epochs.push_back(rec);
  }
  out.params = std::move(params);
  return out;
}

/// Embeds the unlabeled pool with the teacher, clusters, and attaches the
/// cluster ids as pseudo labels.
inline PseudoLabelResult generate_pseudo_labels(const EmbeddingParams& teacher,
                                                const Dataset& unlabeled, int k,
                                                std::uint64_t seed, int max_iter = 100,
                                                int restarts = 4) {
  if (unlabeled.count() < k)
    throw ValidationError("generate_pseudo_labels: fewer unlabeled samples than clusters");
  EmbeddingBatch emb = forward(teacher, unlabeled.features);
  PseudoLabelResult out;
  out.model = kmeans_fit(emb, k, max_iter, seed, restarts);
  out.set.features = unlabeled.features;
  out.set.pseudo_labels = assign(out.model, emb);
  out.set.source_teacher = params_checksum(teacher);
  out.set.k = k;
  return out;
}

struct WarmupResult {
  BasisMatrix basis;
  GaussStats stats;
};

/// Optimizes the basis objective (labeled cross-entropy plus the configured
/// pairwise loss on unlabeled data) for a fixed embedding; initializes the
/// running similarity statistics as a side effect.
inline WarmupResult warmup_basis(const EmbeddingParams& student, BasisMatrix basis,
                                 const Dataset& labeled, const PseudoLabeledSet& pseudo,
                                 int iters, const TrainConfig& cfg, int round = 0) {
  validate_config(cfg);
  detail::validate_labeled(labeled, "warmup_basis");
  if (iters < 0) throw ValidationError("warmup_basis: iters must be nonnegative");

  WarmupResult out;
  out.stats = make_gauss_stats(cfg.beta);
  SDConfig sd_cfg{cfg.sd_margin, cfg.sd_lambda};

  detail::BatchCycler labeled_batches(labeled.count(), cfg.batch_size,
                                      derive_seed(cfg.seed, streams::kWarmupLabeled, round));
  detail::BatchCycler unlabeled_batches(pseudo.count(), cfg.batch_size,
                                        derive_seed(cfg.seed, streams::kWarmupUnlabeled, round));

  for (int it = 0; it < iters; ++it) {
    Matrix grad_basis(basis.basis_count, basis.dim);

    auto lidx = labeled_batches.next();
    Matrix lx = detail::take_rows(labeled.features, lidx);
    std::vector<int> ly = detail::take(labeled.labels, lidx);
    EmbeddingBatch le = forward(student, lx);
    BasisCEResult ce = basis_ce_loss(basis, le, ly);
    add_scaled(grad_basis, ce.grad_basis, 1.0);

    if (pseudo.count() >= 2) {
      auto uidx = unlabeled_batches.next();
      if (uidx.size() >= 2) {
        Matrix ux = detail::take_rows(pseudo.features, uidx);
        std::vector<int> uy = detail::take(pseudo.pseudo_labels, uidx);
        EmbeddingBatch ue = forward(student, ux);
        PairSimilarities sims = batch_pair_similarities(basis, ue, uy);
        out.stats = update_gauss_stats(out.stats, sims.pos_sims, sims.neg_sims);
        auto vl = detail::basis_pair_loss(cfg.sd_variant, out.stats, sims, sd_cfg);
        if (vl.active) {
          Vec dLds;
          std::vector<IndexPair> pairs;
          pairs.reserve(sims.pos_pairs.size() + sims.neg_pairs.size());
          dLds.reserve(pairs.capacity());
          pairs.insert(pairs.end(), sims.pos_pairs.begin(), sims.pos_pairs.end());
          dLds.insert(dLds.end(), vl.d_pos.begin(), vl.d_pos.end());
          pairs.insert(pairs.end(), sims.neg_pairs.begin(), sims.neg_pairs.end());
          dLds.insert(dLds.end(), vl.d_neg.begin(), vl.d_neg.end());
          PairBackprop bp = pair_similarity_backprop(basis, ue, pairs, dLds);
          add_scaled(grad_basis, bp.grad_basis, 1.0);
        }
      }
    }

    add_scaled(basis.values, grad_basis, -cfg.learning_rate);
  }
  out.basis = std::move(basis);
  return out;
}

struct StudentResult {
  EmbeddingParams params;
  BasisMatrix basis;
  GaussStats stats;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

/// Joint optimization of the student and the basis: labeled ranking loss,
/// mined (or pseudo-pair) unlabeled ranking loss weighted lambda1, and the
/// basis objective weighted lambda2, all applied in one combined step.
inline StudentResult train_student(const Dataset& labeled, const PseudoLabeledSet& pseudo,
                                   const TrainConfig& cfg, const EmbeddingParams& init,
                                   BasisMatrix basis, GaussStats stats, int round = 0) {
  validate_config(cfg);
  detail::validate_labeled(labeled, "train_student");
  if (cfg.lambda1 > 0.0 && pseudo.count() == 0)
    throw ValidationError("train_student: pseudo-labeled set required when lambda1 > 0");
  if (init.input_dim() != labeled.dim())
    throw ValidationError("train_student: parameter input dim does not match dataset");

  EmbeddingParams student = init;
  RankingMargins margins{cfg.margin_pos, cfg.margin_neg};
  SDConfig sd_cfg{cfg.sd_margin, cfg.sd_lambda};

  const bool unlabeled_rank_on = cfg.lambda1 > 0.0 && pseudo.count() >= 2;
  const bool basis_on = cfg.use_basis;
  const bool basis_term_on = basis_on && cfg.lambda2 > 0.0;

  std::mt19937_64 batch_rng(derive_seed(cfg.seed, streams::kLabeledBatch, round));
  std::mt19937_64 pair_rng(derive_seed(cfg.seed, streams::kLabeledPairs, round));
  detail::BatchCycler unlabeled_batches(pseudo.count(), cfg.batch_size,
                                        derive_seed(cfg.seed, streams::kUnlabeledBatch, round));

  StudentResult out;
  int n = labeled.count();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs_student; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int steps_in_epoch = 0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      int take = std::min(cfg.batch_size, n - start);
      std::span<const int> idx(order.data() + start, static_cast<size_t>(take));
      Matrix lx = detail::take_rows(labeled.features, idx);
      std::vector<int> ly = detail::take(labeled.labels, idx);

      StepRecord step;
      ParamGrads student_grads;
      Matrix grad_basis;
      if (basis_on) grad_basis = Matrix(basis.basis_count, basis.dim);

      // (a) labeled ranking + labeled basis cross-entropy
      EmbeddingBatch le = forward(student, lx);
      PairSet lpairs = detail::sample_ranking_pairs(ly, pair_rng, &rec.starved_positive_anchors,
                                                    &rec.starved_negative_anchors);
      RankLossResult lrank = contrastive_rank_loss(le, lpairs, margins);
      step.rank_labeled = lrank.loss;
      Matrix grad_le = lrank.grad_embeddings;

      if (basis_term_on) {
        BasisCEResult ce = basis_ce_loss(basis, le, ly);
        step.basis_ce = ce.loss;
        add_scaled(grad_le, ce.grad_embeddings, cfg.lambda2);
        add_scaled(grad_basis, ce.grad_basis, cfg.lambda2);
      }
      accumulate(student_grads, backward(student, lx, grad_le));

      // (b) unlabeled: statistics, mining, ranking and the pairwise basis loss
      const bool need_unlabeled = (unlabeled_rank_on || basis_term_on) && pseudo.count() >= 2;
      if (need_unlabeled) {
        auto uidx = unlabeled_batches.next();
        if (uidx.size() >= 2) {
          Matrix ux = detail::take_rows(pseudo.features, uidx);
          std::vector<int> uy = detail::take(pseudo.pseudo_labels, uidx);
          EmbeddingBatch ue = forward(student, ux);
          Matrix grad_ue(ue.count, ue.dim);
          bool ue_grads_used = false;

          PairSimilarities sims;
          if (basis_on) {
            sims = batch_pair_similarities(basis, ue, uy);
            stats = update_gauss_stats(stats, sims.pos_sims, sims.neg_sims);
          }

          if (unlabeled_rank_on) {
            PairSet upairs;
            bool have_pairs = false;
            if (basis_on && cfg.use_mining) {
              if (stats.separated()) {
                MinedPairs mined = mine_pairs(basis, ue, thresholds_from_stats(stats),
                                              cfg.pair_cap, &stats);
                upairs = mined.pairs;
                step.mined_positives = static_cast<int>(upairs.positives.size());
                step.mined_negatives = static_cast<int>(upairs.negatives.size());
                have_pairs = true;
              } else {
                step.mining_skipped = true;  // Eq. stats not separated: skip the term
              }
            } else {
              upairs = detail::all_label_pairs(uy);
              have_pairs = true;
            }
            if (have_pairs && upairs.total() > 0) {
              RankLossResult urank = contrastive_rank_loss(ue, upairs, margins);
              step.rank_unlabeled = urank.loss;
              add_scaled(grad_ue, urank.grad_embeddings, cfg.lambda1);
              ue_grads_used = true;
            }
          }

          if (basis_term_on) {
            auto vl = detail::basis_pair_loss(cfg.sd_variant, stats, sims, sd_cfg);
            if (vl.active) {
              step.basis_sd = vl.value;
              std::vector<IndexPair> pairs;
              Vec dLds;
              pairs.insert(pairs.end(), sims.pos_pairs.begin(), sims.pos_pairs.end());
              dLds.insert(dLds.end(), vl.d_pos.begin(), vl.d_pos.end());
              pairs.insert(pairs.end(), sims.neg_pairs.begin(), sims.neg_pairs.end());
              dLds.insert(dLds.end(), vl.d_neg.begin(), vl.d_neg.end());
              PairBackprop bp = pair_similarity_backprop(basis, ue, pairs, dLds);
              add_scaled(grad_ue, bp.grad_embeddings, cfg.lambda2);
              add_scaled(grad_basis, bp.grad_basis, cfg.lambda2);
              ue_grads_used = true;
            }
          }

          if (ue_grads_used) accumulate(student_grads, backward(student, ux, grad_ue));
        }
      }

      // (c) one combined step
      step.total = step.rank_labeled + cfg.lambda1 * step.rank_unlabeled +
                   cfg.lambda2 * (step.basis_ce + step.basis_sd);
      student = sgd_step(student, student_grads, cfg.learning_rate);
      if (basis_on) add_scaled(basis.values, grad_basis, -cfg.learning_rate);

      rec.rank_labeled += step.rank_labeled;
      rec.rank_unlabeled += step.rank_unlabeled;
      rec.basis_ce += step.basis_ce;
      rec.basis_sd += step.basis_sd;
      rec.total += step.total;
      rec.mined_positives += step.mined_positives;
      rec.mined_negatives += step.mined_negatives;
      if (step.mining_skipped) ++rec.skipped_mining_steps;
      out.steps.push_back(step);
      ++steps_in_epoch;
    }

    if (steps_in_epoch > 0) {
      rec.rank_labeled /= steps_in_epoch;
      rec.rank_unlabeled /= steps_in_epoch;
      rec.basis_ce /= steps_in_epoch;
      rec.basis_sd /= steps_in_epoch;
      rec.total /= steps_in_epoch;
    }
    if (cfg.use_basis && cfg.use_mining && cfg.lambda1 > 0.0 &&
        rec.skipped_mining_steps == steps_in_epoch && steps_in_epoch > 0) {
      std::cerr << "warning: similarity distributions stayed unseparated for epoch " << epoch
                << " (mu+ = " << stats.mu_pos << ", mu- = " << stats.mu_neg
                << "); mined ranking term skipped\n";
    }
    out.epochs.push_back(rec);
  }

  out.params = std::move(student);
  out.basis = std::move(basis);
  out.stats = stats;
  return out;
}

/// Embeds a labeled evaluation set and runs leave-one-out retrieval.
inline RetrievalReport evaluate_params(const EmbeddingParams& params, const Dataset& eval_set,
                                       const std::vector<int>& ks = default_recall_ks()) {
  detail::validate_labeled(eval_set, "evaluate_params");
  EmbeddingBatch emb = forward(params, eval_set.features);
  return evaluate_leave_one_out(emb.embeddings, eval_set.labels, ks);
}

inline int effective_basis_count(const TrainConfig& cfg, const Dataset& labeled) {
  int classes = static_cast<int>(labeled.distinct_labels().size());
  int k_b = cfg.basis_count > 0 ? cfg.basis_count : classes;
  if (k_b < classes)
    throw ValidationError("basis_count " + std::to_string(k_b) +
                          " is smaller than the labeled class count " + std::to_string(classes));
  return k_b;
}

/// Full self-training loop. Round 0 fits (or loads) the teacher; each later
/// round clusters with the current teacher, warms the basis, trains a
/// student seeded from the teacher, and promotes it to teacher. The final
/// student is the retrieval model.
inline PipelineState self_train(const Dataset& labeled, const Dataset& unlabeled,
                                const TrainConfig& cfg,
                                const std::optional<Dataset>& eval_set = std::nullopt,
                                const std::optional<EmbeddingParams>& teacher_init = std::nullopt) {
  validate_config(cfg);
  detail::validate_labeled(labeled, "self_train");

  PipelineState st;
  {
    RoundRecord rec;
    rec.round = 0;
    rec.role = "teacher";
    if (!cfg.warm_start.empty()) {
      st.teacher = load_params(cfg.warm_start);
      if (st.teacher.input_dim() != labeled.dim())
        throw ValidationError("warm_start parameters do not match the dataset dim");
    } else {
      TeacherResult tr = train_teacher(labeled, cfg, teacher_init, 0);
      st.teacher = std::move(tr.params);
      rec.epochs = std::move(tr.epochs);
    }
    rec.checkpoint = params_checksum(st.teacher);
    if (eval_set) rec.heldout = evaluate_params(st.teacher, *eval_set);
    st.history.push_back(std::move(rec));
    st.round_checkpoints.push_back(st.teacher);
  }

  st.student = st.teacher;
  int k_b = effective_basis_count(cfg, labeled);

  for (int round = 1; round <= cfg.self_train_rounds; ++round) {
    PseudoLabelResult pl = generate_pseudo_labels(
        st.teacher, unlabeled, cfg.clusters, derive_seed(cfg.seed, streams::kKmeans, round),
        cfg.kmeans_max_iter, cfg.kmeans_restarts);

    BasisMatrix basis = init_basis(derive_seed(cfg.seed, streams::kInitBasis, round), k_b,
                                   cfg.embed_dim);
    GaussStats stats = make_gauss_stats(cfg.beta);
    if (cfg.use_basis) {
      WarmupResult w = warmup_basis(st.teacher, std::move(basis), labeled, pl.set,
                                    cfg.basis_warmup_iters, cfg, round);
      basis = std::move(w.basis);
      stats = w.stats;
    }

    StudentResult sr = train_student(labeled, pl.set, cfg, st.teacher, std::move(basis),
                                     stats, round);

    RoundRecord rec;
    rec.round = round;
    rec.role = "student";
    rec.checkpoint = params_checksum(sr.params);
    rec.pseudo_source = pl.set.source_teacher;
    rec.epochs = std::move(sr.epochs);
    if (eval_set) rec.heldout = evaluate_params(sr.params, *eval_set);
    st.history.push_back(std::move(rec));
    st.round_checkpoints.push_back(sr.params);

    st.student = std::move(sr.params);
    st.basis = std::move(sr.basis);
    st.stats = sr.stats;
    st.round = round;
    st.teacher = st.student;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Fold-concatenation protocol
// ---------------------------------------------------------------------------

/// Evaluation-time embedding built from per-fold students: each model's
/// output is concatenated and the result re-normalized.
struct ConcatEmbedding {
  std::vector<EmbeddingParams> models;

  int output_dim() const {
    int d = 0;
    for (const auto& m : models) d += m.output_dim();
    return d;
  }

  EmbeddingBatch embed(const Matrix& inputs) const {
    if (models.empty()) throw ValidationError("concat embedding: no fold models");
    EmbeddingBatch out;
    out.count = inputs.rows;
    out.dim = output_dim();
    out.embeddings = Matrix(inputs.rows, out.dim);
    int offset = 0;
    for (const auto& m : models) {
      EmbeddingBatch part = forward(m, inputs);
      for (int r = 0; r < inputs.rows; ++r)
        std::copy(part.embeddings.row(r).begin(), part.embeddings.row(r).end(),
                  out.embeddings.row(r).begin() + offset);
      offset += m.output_dim();
    }
    for (int r = 0; r < out.count; ++r) {
      Vec unit = l2_normalize(out.embeddings.row_vec(r));
      std::copy(unit.begin(), unit.end(), out.embeddings.row(r).begin());
    }
    return out;
  }
};

struct FoldRun {
  std::vector<PipelineState> fold_states;
  ConcatEmbedding concat;
  std::optional<RetrievalReport> heldout;  // concatenated-embedding metrics
};

/// Splits labeled classes into `folds` disjoint groups by sorted class id;
/// fold f trains on every class outside group f, and its student seeds the
/// next fold's teacher. Each fold model emits embed_dim / folds dimensions.
inline FoldRun run_folds(const Dataset& labeled, const Dataset& unlabeled, const TrainConfig& cfg,
                         const std::optional<Dataset>& eval_set = std::nullopt) {
  validate_config(cfg);
  detail::validate_labeled(labeled, "run_folds");

  FoldRun out;
  if (cfg.folds == 1) {
    PipelineState st = self_train(labeled, unlabeled, cfg, eval_set);
    out.concat.models.push_back(st.student);
    if (eval_set) out.heldout = st.history.back().heldout;
    out.fold_states.push_back(std::move(st));
    return out;
  }

  if (cfg.embed_dim % cfg.folds != 0)
    throw ValidationError("run_folds: embed_dim must be divisible by folds");
  std::vector<int> classes = labeled.distinct_labels();
  if (static_cast<int>(classes.size()) < cfg.folds)
    throw ValidationError("run_folds: fewer labeled classes than folds");

  std::optional<EmbeddingParams> carry;
  for (int fold = 0; fold < cfg.folds; ++fold) {
    // training classes: everything outside this fold's group
    std::vector<int> keep;
    for (size_t ci = 0; ci < classes.size(); ++ci)
      if (static_cast<int>(ci) % cfg.folds != fold) keep.push_back(classes[ci]);
    std::map<int, int> remap;
    for (size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = static_cast<int>(i);

    std::vector<int> rows;
    for (int r = 0; r < labeled.count(); ++r)
      if (remap.count(labeled.labels[r])) rows.push_back(r);
    Dataset sub;
    sub.features = detail::take_rows(labeled.features, rows);
    sub.labels.reserve(rows.size());
    for (int r : rows) sub.labels.push_back(remap[labeled.labels[r]]);
    sub.labeled_file = true;

    TrainConfig fold_cfg = cfg;
    fold_cfg.embed_dim = cfg.embed_dim / cfg.folds;
    fold_cfg.folds = 1;
    fold_cfg.seed = derive_seed(cfg.seed, streams::kFold, static_cast<std::uint64_t>(fold));

    PipelineState st = self_train(sub, unlabeled, fold_cfg, eval_set, carry);
    carry = st.student;
    out.concat.models.push_back(st.student);
    out.fold_states.push_back(std::move(st));
  }

  if (eval_set) {
    detail::validate_labeled(*eval_set, "run_folds eval");
    EmbeddingBatch emb = out.concat.embed(eval_set->features);
    out.heldout = evaluate_leave_one_out(emb.embeddings, eval_set->labels, default_recall_ks());
  }
  return out;
}

}  // namespace slade
