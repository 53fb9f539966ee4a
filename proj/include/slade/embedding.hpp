#pragma once

// A small feed-forward embedding network: affine layers with max(0, x)
// nonlinearities, an affine output layer and optional L2 normalization of
// each output row. Carries the parameters of both the teacher and the
// student networks. Gradients are exact reverse-mode, including the
// normalization Jacobian.

#include <optional>
#include <random>
#include <utility>

#include "slade/core.hpp"

namespace slade {

struct EmbeddingParams {
  std::vector<int> layer_dims;   // input -> hidden... -> embedding dim
  std::vector<Matrix> weights;   // weights[i]: layer_dims[i+1] x layer_dims[i]
  std::vector<Vec> biases;       // biases[i]: layer_dims[i+1]
  bool normalize_output = true;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }

  bool operator==(const EmbeddingParams& o) const {
    return layer_dims == o.layer_dims && weights == o.weights && biases == o.biases &&
           normalize_output == o.normalize_output;
  }
};

/// Embeddings of a batch of samples, one row per sample.
struct EmbeddingBatch {
  int count = 0;
  int dim = 0;
  Matrix embeddings;
};

/// Gradients with the same layout as EmbeddingParams.
struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<Vec> biases;
};

inline void validate_params(const EmbeddingParams& p) {
  if (p.layer_dims.size() < 2) throw ValidationError("embedding needs at least 2 layer dims");
  for (int d : p.layer_dims)
    if (d <= 0) throw ValidationError("layer dims must be positive");
  size_t layers = p.layer_dims.size() - 1;
  if (p.weights.size() != layers || p.biases.size() != layers)
    throw ValidationError("layer count mismatch");
  for (size_t i = 0; i < layers; ++i) {
    if (p.weights[i].rows != p.layer_dims[i + 1] || p.weights[i].cols != p.layer_dims[i])
      throw ValidationError("weight shape inconsistent with layer dims");
    if (static_cast<int>(p.biases[i].size()) != p.layer_dims[i + 1])
      throw ValidationError("bias shape inconsistent with layer dims");
    require_finite(p.weights[i].values, "weights");
    require_finite(p.biases[i], "biases");
  }
}

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic for a fixed seed.
inline EmbeddingParams init_params(std::uint64_t seed, const std::vector<int>& layer_dims,
                                   bool normalize_output = true) {
  if (layer_dims.size() < 2) throw ValidationError("init_params: need at least 2 layer dims");
  for (int d : layer_dims)
    if (d <= 0) throw ValidationError("init_params: layer dims must be positive");

  EmbeddingParams p;
  p.layer_dims = layer_dims;
  p.normalize_output = normalize_output;
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    int fan_in = layer_dims[i];
    int fan_out = layer_dims[i + 1];
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    Matrix w(fan_out, fan_in);
    for (double& x : w.values) x = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

namespace detail {

// Forward pass keeping every pre-activation; backward replays them.
struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] = inputs; one per layer after
  Vec prenorm_norms;                // per-row norm before normalization (if enabled)
  Matrix output;
};

inline ForwardTrace forward_trace(const EmbeddingParams& p, const Matrix& inputs) {
  validate_params(p);
  if (inputs.cols != p.input_dim())
    throw ValidationError("forward: input dim " + std::to_string(inputs.cols) +
                          " does not match layer dim " + std::to_string(p.input_dim()));
  require_finite(inputs.values, "forward inputs");

  ForwardTrace t;
  t.activations.reserve(p.weights.size() + 1);
  t.activations.push_back(inputs);
  int layers = p.layer_count();
  for (int l = 0; l < layers; ++l) {
    const Matrix& prev = t.activations.back();
    Matrix next(prev.rows, p.layer_dims[l + 1]);
    const bool hidden = l + 1 < layers;
    for (int r = 0; r < prev.rows; ++r) {
      Vec z = matvec(p.weights[l], prev.row(r));
      add_scaled(std::span<double>(z), std::span<const double>(p.biases[l]), 1.0);
      auto out_row = next.row(r);
      for (int c = 0; c < next.cols; ++c) out_row[c] = hidden ? std::max(0.0, z[c]) : z[c];
    }
    t.activations.push_back(std::move(next));
  }

  t.output = t.activations.back();
  if (p.normalize_output) {
    t.prenorm_norms.resize(t.output.rows);
    for (int r = 0; r < t.output.rows; ++r) {
      double n = norm(t.output.row(r));
      if (n < 1e-12) throw NumericError("dead embedding");
      t.prenorm_norms[r] = n;
      for (double& x : t.output.row(r)) x /= n;
    }
  }
  return t;
}

}  // namespace detail

inline EmbeddingBatch forward(const EmbeddingParams& p, const Matrix& inputs) {
  auto t = detail::forward_trace(p, inputs);
  return EmbeddingBatch{inputs.rows, p.output_dim(), std::move(t.output)};
}

/// Exact reverse-mode gradients of forward() with respect to all parameters.
inline ParamGrads backward(const EmbeddingParams& p, const Matrix& inputs,
                           const Matrix& grad_embeddings) {
  auto t = detail::forward_trace(p, inputs);
  if (grad_embeddings.rows != inputs.rows || grad_embeddings.cols != p.output_dim())
    throw ValidationError("backward: grad_embeddings shape mismatch");
  require_finite(grad_embeddings.values, "grad_embeddings");

  ParamGrads g;
  int layers = p.layer_count();
  g.weights.reserve(layers);
  g.biases.reserve(layers);
  for (int l = 0; l < layers; ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].size(), 0.0);
  }

  // Gradient w.r.t. the (possibly normalized) output, pulled back through
  // y = z / |z|:  dL/dz = (dL/dy - (y . dL/dy) y) / |z|.
  Matrix delta = grad_embeddings;
  if (p.normalize_output) {
    const Matrix& y = t.output;
    for (int r = 0; r < delta.rows; ++r) {
      double proj = dot(y.row(r), delta.row(r));
      auto dr = delta.row(r);
      auto yr = y.row(r);
      double n = t.prenorm_norms[r];
      for (int c = 0; c < delta.cols; ++c) dr[c] = (dr[c] - proj * yr[c]) / n;
    }
  }

  for (int l = layers - 1; l >= 0; --l) {
    const Matrix& below = t.activations[l];
    const Matrix& above = t.activations[l + 1];
    const bool hidden = l + 1 < layers;
    Matrix next_delta(below.rows, below.cols);
    for (int r = 0; r < below.rows; ++r) {
      Vec dz(delta.cols);
      auto drow = delta.row(r);
      auto arow = above.row(r);
      for (int c = 0; c < delta.cols; ++c) {
        // max(0, .) passes gradient only where the unit fired.
        dz[c] = (hidden && arow[c] <= 0.0) ? 0.0 : drow[c];
      }
      add_outer(g.weights[l], dz, below.row(r));
      add_scaled(std::span<double>(g.biases[l]), std::span<const double>(dz), 1.0);
      Vec dx = matvec_t(p.weights[l], dz);
      std::copy(dx.begin(), dx.end(), next_delta.row(r).begin());
    }
    delta = std::move(next_delta);
  }
  return g;
}

inline EmbeddingParams sgd_step(const EmbeddingParams& p, const ParamGrads& g, double lr) {
  if (!(lr >= 0.0)) throw ValidationError("sgd_step: learning rate must be nonnegative");
  if (g.weights.size() != p.weights.size() || g.biases.size() != p.biases.size())
    throw ValidationError("sgd_step: gradient layout mismatch");
  EmbeddingParams out = p;
  for (size_t l = 0; l < p.weights.size(); ++l) {
    add_scaled(out.weights[l], g.weights[l], -lr);
    add_scaled(std::span<double>(out.biases[l]), std::span<const double>(g.biases[l]), -lr);
  }
  return out;
}

inline void accumulate(ParamGrads& acc, const ParamGrads& g, double scale = 1.0) {
  if (acc.weights.empty()) {
    acc = g;
    if (scale != 1.0) {
      for (auto& w : acc.weights)
        for (double& x : w.values) x *= scale;
      for (auto& b : acc.biases)
        for (double& x : b) x *= scale;
    }
    return;
  }
  if (acc.weights.size() != g.weights.size()) throw ValidationError("accumulate: layout mismatch");
  for (size_t l = 0; l < g.weights.size(); ++l) {
    add_scaled(acc.weights[l], g.weights[l], scale);
    add_scaled(std::span<double>(acc.biases[l]), std::span<const double>(g.biases[l]), scale);
  }
}

// ---------------------------------------------------------------------------
// slade-params v1 text format. See docs/formats.md.
// ---------------------------------------------------------------------------

inline std::string serialize_params(const EmbeddingParams& p) {
  validate_params(p);
  std::string out = "slade-params v1\n";
  out += "dims";
  for (int d : p.layer_dims) out += " " + std::to_string(d);
  out += "\n";
  out += "normalize " + std::string(p.normalize_output ? "1" : "0") + "\n";
  for (int l = 0; l < p.layer_count(); ++l) {
    out += "layer " + std::to_string(l) + "\n";
    const Matrix& w = p.weights[l];
    out += "weight " + std::to_string(w.rows) + " " + std::to_string(w.cols) + "\n";
    for (int r = 0; r < w.rows; ++r) {
      auto row = w.row(r);
      for (int c = 0; c < w.cols; ++c) {
        out += fmt_double(row[c]);
        out += (c + 1 == w.cols) ? "\n" : " ";
      }
    }
    out += "bias " + std::to_string(p.biases[l].size()) + "\n";
    for (size_t c = 0; c < p.biases[l].size(); ++c) {
      out += fmt_double(p.biases[l][c]);
      out += (c + 1 == p.biases[l].size()) ? "\n" : " ";
    }
  }
  return out;
}

inline EmbeddingParams parse_params(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw ValidationError(std::string("params: truncated file, expected ") + what);
    ++lineno;
    return line;
  };
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError("params line " + std::to_string(lineno) + ": " + msg);
  };

  if (next_line("header") != "slade-params v1") fail("bad header");
  auto dims_tok = split_ws(next_line("dims"));
  if (dims_tok.size() < 3 || dims_tok[0] != "dims") fail("expected dims line");
  EmbeddingParams p;
  for (size_t i = 1; i < dims_tok.size(); ++i) {
    long long d = parse_int_token(dims_tok[i], "params dims");
    if (d <= 0) fail("non-positive layer dim");
    p.layer_dims.push_back(static_cast<int>(d));
  }
  auto norm_tok = split_ws(next_line("normalize"));
  if (norm_tok.size() != 2 || norm_tok[0] != "normalize") fail("expected normalize line");
  if (norm_tok[1] != "0" && norm_tok[1] != "1") fail("normalize must be 0 or 1");
  p.normalize_output = norm_tok[1] == "1";

  int layers = static_cast<int>(p.layer_dims.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    auto lt = split_ws(next_line("layer"));
    if (lt.size() != 2 || lt[0] != "layer" || parse_int_token(lt[1], "layer index") != l)
      fail("expected layer " + std::to_string(l));
    auto wt = split_ws(next_line("weight"));
    if (wt.size() != 3 || wt[0] != "weight") fail("expected weight header");
    int rows = static_cast<int>(parse_int_token(wt[1], "weight rows"));
    int cols = static_cast<int>(parse_int_token(wt[2], "weight cols"));
    if (rows != p.layer_dims[l + 1] || cols != p.layer_dims[l])
      fail("weight shape disagrees with declared dims");
    Matrix w(rows, cols);
    for (int r = 0; r < rows; ++r) {
      auto toks = split_ws(next_line("weight row"));
      if (static_cast<int>(toks.size()) != cols) fail("weight row has wrong field count");
      for (int c = 0; c < cols; ++c) w.at(r, c) = parse_double_token(toks[c], "weight value");
    }
    auto bt = split_ws(next_line("bias"));
    if (bt.size() != 2 || bt[0] != "bias") fail("expected bias header");
    int blen = static_cast<int>(parse_int_token(bt[1], "bias length"));
    if (blen != p.layer_dims[l + 1]) fail("bias length disagrees with declared dims");
    auto btoks = split_ws(next_line("bias row"));
    if (static_cast<int>(btoks.size()) != blen) fail("bias row has wrong field count");
    Vec b(blen);
    for (int c = 0; c < blen; ++c) b[c] = parse_double_token(btoks[c], "bias value");
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty()) fail("trailing content after parameter blocks");
  }
  validate_params(p);
  return p;
}

inline void save_params(const EmbeddingParams& p, const std::string& path) {
  write_text_file(path, serialize_params(p));
}

inline EmbeddingParams load_params(const std::string& path) {
  return parse_params(read_text_file(path));
}

/// Short content hash identifying a checkpoint (provenance of pseudo labels).
inline std::string params_checksum(const EmbeddingParams& p) {
  return fnv1a_hex(serialize_params(p));
}

}  // namespace slade
