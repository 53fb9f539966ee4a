#pragma once

// Dataset and config ingestion plus the synthetic benchmark generator.
// All formats are line-oriented text; doubles round-trip bit-exactly.

#include <map>
#include <optional>
#include <random>
#include <set>

#include "slade/core.hpp"

namespace slade {

/// In-memory dataset. label -1 marks an unlabeled sample ('?' in the file).
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  bool labeled_file = true;  // header flag: rows must all carry class ids

  int count() const { return features.rows; }
  int dim() const { return features.cols; }

  std::vector<int> distinct_labels() const {
    std::set<int> s;
    for (int l : labels)
      if (l >= 0) s.insert(l);
    return {s.begin(), s.end()};
  }
};

inline std::string serialize_dataset(const Dataset& d) {
  std::string out = "slade-data v1\n";
  out += "dim " + std::to_string(d.dim()) + "\n";
  out += "labeled " + std::string(d.labeled_file ? "1" : "0") + "\n";
  for (int r = 0; r < d.count(); ++r) {
    out += d.labels[r] < 0 ? "?" : std::to_string(d.labels[r]);
    auto row = d.features.row(r);
    for (int c = 0; c < d.dim(); ++c) out += " " + fmt_double(row[c]);
    out += "\n";
  }
  return out;
}

inline Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line))
      throw ValidationError(std::string("dataset: truncated file, expected ") + what);
    ++lineno;
    return line;
  };
  if (next("header") != "slade-data v1") throw ValidationError("dataset line 1: bad header");
  auto dt = split_ws(next("dim"));
  if (dt.size() != 2 || dt[0] != "dim") throw ValidationError("dataset line 2: expected dim line");
  int dim = static_cast<int>(parse_int_token(dt[1], "dataset dim"));
  if (dim <= 0) throw ValidationError("dataset line 2: dim must be positive");
  auto lt = split_ws(next("labeled"));
  if (lt.size() != 2 || lt[0] != "labeled" || (lt[1] != "0" && lt[1] != "1"))
    throw ValidationError("dataset line 3: expected labeled 0|1");

  Dataset d;
  d.labeled_file = lt[1] == "1";
  std::vector<Vec> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto toks = split_ws(line);
    if (static_cast<int>(toks.size()) != dim + 1)
      throw ValidationError("dataset line " + std::to_string(lineno) + ": expected " +
                            std::to_string(dim + 1) + " fields, got " +
                            std::to_string(toks.size()));
    int label;
    if (toks[0] == "?") {
      label = -1;
    } else {
      long long v = parse_int_token(toks[0], "dataset line " + std::to_string(lineno) + " class id");
      if (v < 0) throw ValidationError("dataset line " + std::to_string(lineno) +
                                       ": class ids must be nonnegative");
      label = static_cast<int>(v);
    }
    if (d.labeled_file && label < 0)
      throw ValidationError("dataset line " + std::to_string(lineno) +
                            ": unlabeled row in a labeled file");
    Vec row(dim);
    for (int c = 0; c < dim; ++c)
      row[c] = parse_double_token(toks[c + 1],
                                  "dataset line " + std::to_string(lineno) + " feature");
    d.labels.push_back(label);
    rows.push_back(std::move(row));
  }
  d.features = rows.empty() ? Matrix(0, dim) : Matrix::from_rows(rows);
  if (d.features.cols != dim) d.features.cols = dim;  // empty file keeps declared dim
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  write_text_file(path, serialize_dataset(d));
}

inline Dataset load_dataset(const std::string& path) {
  try {
    return parse_dataset(read_text_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

// Ground-truth sidecar for unlabeled data: purity scoring only, never an
// input to training. One class id per row, aligned with the unlabeled file.
inline std::string serialize_truth(const std::vector<int>& labels) {
  std::string out = "slade-truth v1\n";
  out += "count " + std::to_string(labels.size()) + "\n";
  for (int l : labels) out += std::to_string(l) + "\n";
  return out;
}

inline std::vector<int> parse_truth(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "slade-truth v1")
    throw ValidationError("truth: bad header");
  auto ct = split_ws((std::getline(in, line), line));
  if (ct.size() != 2 || ct[0] != "count") throw ValidationError("truth: expected count line");
  long long n = parse_int_token(ct[1], "truth count");
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    labels.push_back(static_cast<int>(parse_int_token(line, "truth label")));
  }
  if (static_cast<long long>(labels.size()) != n)
    throw ValidationError("truth: row count disagrees with header");
  return labels;
}

inline std::vector<int> load_truth(const std::string& path) {
  return parse_truth(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

struct SynthSpec {
  int seen_classes = 10;
  int unseen_classes = 10;
  int samples_per_class = 30;
  int dim = 16;
  double center_separation = 6.0;
  double within_std = 1.0;
  std::uint64_t seed = 1;
};

struct SynthData {
  Dataset labeled;       // seen classes only
  Dataset unlabeled;     // seen + unseen classes, labels stripped
  std::vector<int> truth;  // true class per unlabeled row (sidecar)
};

/// Class centers live on a sphere of radius center_separation with pairwise
/// distance at least center_separation (rejection sampling). Samples are
/// isotropic Gaussians around their center.
inline SynthData generate_synth(const SynthSpec& spec) {
  if (spec.seen_classes < 1 || spec.unseen_classes < 0)
    throw ValidationError("synth: need at least one seen class");
  if (spec.samples_per_class < 1) throw ValidationError("synth: samples_per_class must be positive");
  if (spec.dim < 1) throw ValidationError("synth: dim must be positive");
  if (!(spec.center_separation > 0.0)) throw ValidationError("synth: separation must be positive");
  if (!(spec.within_std > 0.0)) throw ValidationError("synth: within_std must be positive");

  int total = spec.seen_classes + spec.unseen_classes;
  std::mt19937_64 center_rng(derive_seed(spec.seed, 101));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Vec> centers;
  const long long budget = 1000LL * total;
  long long attempts = 0;
  while (static_cast<int>(centers.size()) < total) {
    if (++attempts > budget) throw ValidationError("separation infeasible at this dim");
    Vec c(spec.dim);
    for (double& x : c) x = gauss(center_rng);
    double n = norm(c);
    if (n < 1e-12) continue;
    for (double& x : c) x *= spec.center_separation / n;
    bool ok = true;
    for (const Vec& prev : centers) {
      double d2 = 0.0;
      for (int i = 0; i < spec.dim; ++i) d2 += (c[i] - prev[i]) * (c[i] - prev[i]);
      if (d2 < spec.center_separation * spec.center_separation) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }

  auto draw_class_samples = [&](std::mt19937_64& rng, int cls, std::vector<Vec>& rows,
                                std::vector<int>& labels) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      Vec x(spec.dim);
      for (int i = 0; i < spec.dim; ++i) x[i] = centers[cls][i] + spec.within_std * gauss(rng);
      rows.push_back(std::move(x));
      labels.push_back(cls);
    }
  };

  SynthData out;
  {
    std::mt19937_64 rng(derive_seed(spec.seed, 102));
    std::vector<Vec> rows;
    std::vector<int> labels;
    for (int c = 0; c < spec.seen_classes; ++c) draw_class_samples(rng, c, rows, labels);
    out.labeled.features = rows.empty() ? Matrix(0, spec.dim) : Matrix::from_rows(rows);
    out.labeled.labels = std::move(labels);
    out.labeled.labeled_file = true;
  }
  {
    std::mt19937_64 rng(derive_seed(spec.seed, 103));
    std::vector<Vec> rows;
    std::vector<int> labels;
    for (int c = 0; c < total; ++c) draw_class_samples(rng, c, rows, labels);
    // deterministic shuffle so class order leaks nothing into batch order
    std::vector<int> perm(rows.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    std::mt19937_64 shuffle_rng(derive_seed(spec.seed, 104));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    std::vector<Vec> srows(rows.size());
    out.truth.resize(rows.size());
    for (size_t i = 0; i < perm.size(); ++i) {
      srows[i] = std::move(rows[perm[i]]);
      out.truth[i] = labels[perm[i]];
    }
    out.unlabeled.features = srows.empty() ? Matrix(0, spec.dim) : Matrix::from_rows(srows);
    out.unlabeled.labels.assign(srows.size(), -1);
    out.unlabeled.labeled_file = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train configuration: flat key = value lines, '#' comments, strict keys.
// ---------------------------------------------------------------------------

enum class SDVariant { kSD, kLocalCE, kGlobalCE };

inline const char* to_string(SDVariant v) {
  switch (v) {
    case SDVariant::kSD: return "sd";
    case SDVariant::kLocalCE: return "local_ce";
    case SDVariant::kGlobalCE: return "global_ce";
  }
  return "sd";
}

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.25;
  double beta = 0.99;
  double sd_margin = 0.5;
  double sd_lambda = 0.25;
  double margin_pos = 0.2;
  double margin_neg = 1.0;
  int clusters = 10;
  int basis_count = 0;  // 0: use the number of labeled training classes
  int basis_warmup_iters = 50;
  int epochs_teacher = 60;
  int epochs_student = 60;
  int batch_size = 32;
  double learning_rate = 0.1;
  int self_train_rounds = 1;
  std::uint64_t seed = 1;
  int folds = 1;
  int pair_cap = 100;
  SDVariant sd_variant = SDVariant::kSD;
  bool use_basis = true;
  bool use_mining = true;
  std::vector<int> hidden_dims = {32};
  int embed_dim = 8;
  bool normalize_output = true;
  int kmeans_max_iter = 100;
  int kmeans_restarts = 4;
  std::string warm_start;  // optional teacher parameter file

  std::vector<int> layer_dims(int input_dim, int output_dim) const {
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(output_dim);
    return dims;
  }
};

inline void validate_config(const TrainConfig& c) {
  if (!(c.lambda1 >= 0.0) || !(c.lambda2 >= 0.0)) throw ValidationError("config: lambdas must be nonnegative");
  if (!(c.beta >= 0.0 && c.beta < 1.0)) throw ValidationError("config: beta must lie in [0, 1)");
  if (!(c.sd_margin > 0.0) || c.sd_margin > 2.0) throw ValidationError("config: sd_margin must lie in (0, 2]");
  if (!(c.sd_lambda >= 0.0)) throw ValidationError("config: sd_lambda must be nonnegative");
  if (!(c.margin_pos >= 0.0 && c.margin_neg >= 0.0 && c.margin_pos < c.margin_neg))
    throw ValidationError("config: require 0 <= margin_pos < margin_neg");
  if (c.clusters < 1) throw ValidationError("config: clusters must be at least 1");
  if (c.basis_count < 0) throw ValidationError("config: basis_count must be nonnegative");
  if (c.basis_warmup_iters < 0) throw ValidationError("config: basis_warmup_iters must be nonnegative");
  if (c.epochs_teacher < 0 || c.epochs_student < 0) throw ValidationError("config: epochs must be nonnegative");
  if (c.batch_size < 2) throw ValidationError("config: batch_size must be at least 2");
  if (!(c.learning_rate > 0.0)) throw ValidationError("config: learning_rate must be positive");
  if (c.self_train_rounds < 1) throw ValidationError("config: self_train_rounds must be at least 1");
  if (c.folds < 1) throw ValidationError("config: folds must be at least 1");
  if (c.pair_cap < 0) throw ValidationError("config: pair_cap must be nonnegative");
  if (c.embed_dim < 1) throw ValidationError("config: embed_dim must be positive");
  for (int h : c.hidden_dims)
    if (h < 1) throw ValidationError("config: hidden dims must be positive");
  if (c.kmeans_max_iter < 1) throw ValidationError("config: kmeans_max_iter must be at least 1");
  if (c.kmeans_restarts < 1) throw ValidationError("config: kmeans_restarts must be at least 1");
}

inline TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() < 3 || toks[1] != "=")
      throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string& key = toks[0];
    if (!seen.insert(key).second)
      throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    auto ctx = "config line " + std::to_string(lineno) + " (" + key + ")";
    auto one_value = [&]() -> const std::string& {
      if (toks.size() != 3) throw ValidationError(ctx + ": expected a single value");
      return toks[2];
    };
    auto as_double = [&]() { return parse_double_token(one_value(), ctx); };
    auto as_int = [&]() { return static_cast<int>(parse_int_token(one_value(), ctx)); };
    auto as_bool = [&]() {
      const std::string& v = one_value();
      if (v == "1" || v == "true") return true;
      if (v == "0" || v == "false") return false;
      throw ValidationError(ctx + ": expected 0/1");
    };

    if (key == "lambda1") c.lambda1 = as_double();
    else if (key == "lambda2") c.lambda2 = as_double();
    else if (key == "beta") c.beta = as_double();
    else if (key == "sd_margin") c.sd_margin = as_double();
    else if (key == "sd_lambda") c.sd_lambda = as_double();
    else if (key == "margin_pos") c.margin_pos = as_double();
    else if (key == "margin_neg") c.margin_neg = as_double();
    else if (key == "clusters") c.clusters = as_int();
    else if (key == "basis_count") c.basis_count = as_int();
    else if (key == "basis_warmup_iters") c.basis_warmup_iters = as_int();
    else if (key == "epochs_teacher") c.epochs_teacher = as_int();
    else if (key == "epochs_student") c.epochs_student = as_int();
    else if (key == "batch_size") c.batch_size = as_int();
    else if (key == "learning_rate") c.learning_rate = as_double();
    else if (key == "self_train_rounds") c.self_train_rounds = as_int();
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int_token(one_value(), ctx));
    else if (key == "folds") c.folds = as_int();
    else if (key == "pair_cap") c.pair_cap = as_int();
    else if (key == "sd_variant") {
      const std::string& v = one_value();
      if (v == "sd") c.sd_variant = SDVariant::kSD;
      else if (v == "local_ce") c.sd_variant = SDVariant::kLocalCE;
      else if (v == "global_ce") c.sd_variant = SDVariant::kGlobalCE;
      else throw ValidationError(ctx + ": expected sd|local_ce|global_ce");
    } else if (key == "use_basis") c.use_basis = as_bool();
    else if (key == "use_mining") c.use_mining = as_bool();
    else if (key == "hidden_dims") {
      c.hidden_dims.clear();
      const std::string& v = one_value();
      std::string tok;
      std::istringstream hs(v);
      while (std::getline(hs, tok, ','))
        c.hidden_dims.push_back(static_cast<int>(parse_int_token(tok, ctx)));
      if (c.hidden_dims.empty()) throw ValidationError(ctx + ": expected comma-separated dims");
    } else if (key == "embed_dim") c.embed_dim = as_int();
    else if (key == "normalize_output") c.normalize_output = as_bool();
    else if (key == "kmeans_max_iter") c.kmeans_max_iter = as_int();
    else if (key == "kmeans_restarts") c.kmeans_restarts = as_int();
    else if (key == "warm_start") c.warm_start = one_value();
    else throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  validate_config(c);
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  return parse_config(read_text_file(path));
}

}  // namespace slade
