#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tolo/grid.hpp"
#include "tolo/ops.hpp"
#include "tolo/rng.hpp"

namespace tolo {

/// Geometry and seeds of the toy cross-attention model.
struct EngineConfig {
  Index latent_height = 16;
  Index latent_width = 16;
  Index channels = 4;
  Index proj_dim = 8;
  Index embed_dim = 16;
  Index map_size = 64;
  std::vector<std::pair<Index, Index>> layers{{8, 8}, {16, 16}};
  double gamma = 0.98;
  double query_scale = 2.0;
  double key_scale = 2.0;
  double init_scale = 1.0;
  double drift_scale = 1.0;

  void validate() const {
    if (latent_height < 1 || latent_width < 1 || channels < 1) {
      throw InputError("engine: latent dimensions must be positive");
    }
    if (proj_dim < 1 || embed_dim < 1) throw InputError("engine: projection dims must be positive");
    if (map_size < 3) throw InputError("engine: map_size must be at least 3");
    if (layers.empty()) throw InputError("engine: at least one attention layer is required");
    for (const auto& [h, w] : layers) {
      if (h < 1 || w < 1) throw InputError("engine: layer resolution must be positive");
      if (latent_height % h != 0 || latent_width % w != 0) {
        throw ShapeError("engine: layer " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not pool from the latent resolution");
      }
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InputError("engine: gamma must lie in (0, 1]");
  }
};

/// Latent z_t stored as (height*width) x channels; column c is channel c in row-major order.
template <typename Scalar>
struct Latent {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  Matrix<Scalar> values;

  static Latent zeros(Index h, Index w, Index c) {
    return Latent{h, w, c, Matrix<Scalar>::Zero(h * w, c)};
  }

  Matrix<Scalar> channel(Index c) const {
    Matrix<Scalar> out(height, width);
    for (Index i = 0; i < height * width; ++i) out(i / width, i % width) = values(i, c);
    return out;
  }

  bool finite() const { return values.allFinite(); }
};

template <typename Scalar>
struct TextEmbedding {
  std::vector<std::string> tokens;
  Matrix<Scalar> matrix;  // N x d_e

  Index length() const { return matrix.rows(); }
  Index dim() const { return matrix.cols(); }
};

/// Deterministic stand-in for a text encoder: each row is a unit vector drawn from
/// a stream keyed by (token label, seed), so repeated tokens share a row.
template <typename Scalar>
TextEmbedding<Scalar> encode_prompt(const std::vector<std::string>& tokens, Index embed_dim,
                                    std::uint64_t seed) {
  if (tokens.empty()) throw InputError("encode_prompt: empty prompt");
  if (embed_dim < 1) throw InputError("encode_prompt: embedding dimension must be positive");
  TextEmbedding<Scalar> e{tokens, Matrix<Scalar>(static_cast<Index>(tokens.size()), embed_dim)};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto rng = make_stream(seed, "embeddings:" + tokens[i]);
    std::normal_distribution<double> normal;
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> row(embed_dim);
    do {
      for (Index k = 0; k < embed_dim; ++k) row(k) = static_cast<Scalar>(normal(rng));
    } while (row.norm() == Scalar(0));
    e.matrix.row(static_cast<Index>(i)) = row / row.norm();
  }
  return e;
}

template <typename Scalar>
struct AttentionLayerSpec {
  int layer_id = 0;
  Index height = 0;
  Index width = 0;
  Matrix<Scalar> query_proj;  // d_z x d
  Matrix<Scalar> key_proj;    // d_e x d

  Index dim() const { return query_proj.cols(); }
};

/// Random query/key projections for every configured layer.
template <typename Scalar>
std::vector<AttentionLayerSpec<Scalar>> make_layer_specs(const EngineConfig& cfg,
                                                         std::uint64_t seed) {
  cfg.validate();
  std::vector<AttentionLayerSpec<Scalar>> specs;
  auto rng = make_stream(seed, "projections");
  std::normal_distribution<double> normal;
  const double qs = cfg.query_scale / std::sqrt(static_cast<double>(cfg.channels));
  const double ks = cfg.key_scale / std::sqrt(static_cast<double>(cfg.embed_dim));
  int id = 0;
  for (const auto& [h, w] : cfg.layers) {
    AttentionLayerSpec<Scalar> s{id++, h, w, Matrix<Scalar>(cfg.channels, cfg.proj_dim),
                                 Matrix<Scalar>(cfg.embed_dim, cfg.proj_dim)};
    for (Index i = 0; i < s.query_proj.size(); ++i) {
      s.query_proj.data()[i] = static_cast<Scalar>(qs * normal(rng));
    }
    for (Index i = 0; i < s.key_proj.size(); ++i) {
      s.key_proj.data()[i] = static_cast<Scalar>(ks * normal(rng));
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

/// Average-pooling operator mapping a flattened in_h x in_w field to out_h x out_w.
template <typename Scalar>
Matrix<Scalar> pooling_matrix(Index in_h, Index in_w, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1 || in_h % out_h != 0 || in_w % out_w != 0) {
    throw ShapeError("pooling: " + detail::shape_str(out_h, out_w) + " does not divide " +
                     detail::shape_str(in_h, in_w));
  }
  const Index fh = in_h / out_h;
  const Index fw = in_w / out_w;
  const Scalar weight = Scalar(1) / static_cast<Scalar>(fh * fw);
  Matrix<Scalar> p = Matrix<Scalar>::Zero(out_h * out_w, in_h * in_w);
  for (Index r = 0; r < in_h; ++r) {
    for (Index c = 0; c < in_w; ++c) {
      p((r / fh) * out_w + c / fw, r * in_w + c) = weight;
    }
  }
  return p;
}

/// A_l = softmax(Q Kᵀ / √d) for one layer, with Q projected from the pooled latent.
///
/// `z` is the flattened latent ((H*W) x d_z); the result is (h_l*w_l) x N and stays
/// on z's tape.
template <typename Scalar>
Grid<Scalar> compute_attention(const Grid<Scalar>& z, Index latent_h, Index latent_w,
                               const TextEmbedding<Scalar>& e,
                               const AttentionLayerSpec<Scalar>& spec) {
  if (z.rows() != latent_h * latent_w) throw ShapeError("compute_attention: latent size mismatch");
  if (z.cols() != spec.query_proj.rows()) {
    throw ShapeError("compute_attention: latent channels do not match query projection");
  }
  if (e.dim() != spec.key_proj.rows()) {
    throw ShapeError("compute_attention: embedding dim does not match key projection");
  }
  Grid<Scalar> pooled = z;
  if (spec.height != latent_h || spec.width != latent_w) {
    pooled = matmul(Grid<Scalar>(pooling_matrix<Scalar>(latent_h, latent_w, spec.height,
                                                        spec.width)),
                    z);
  }
  const Grid<Scalar> q = matmul(pooled, Grid<Scalar>(spec.query_proj));
  const Matrix<Scalar> keys_t = (e.matrix * spec.key_proj).transpose();
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(spec.dim()));
  return softmax_rows(inv_sqrt_d * matmul(q, Grid<Scalar>(keys_t)));
}

/// M_i = (1/L) Σ_l Σ_{j ∈ s_i} upsample(A_l^j) for every concept.
///
/// Columns are summed at layer resolution before upsampling; resampling is
/// linear so the order does not change the result.
template <typename Scalar>
std::vector<Grid<Scalar>> aggregate_concept_maps(std::span<const Grid<Scalar>> stack,
                                                 std::span<const AttentionLayerSpec<Scalar>> specs,
                                                 std::span<const std::vector<int>> concepts,
                                                 Index map_size) {
  if (stack.size() != specs.size() || stack.empty()) {
    throw InputError("aggregate_concept_maps: one layer spec per attention map is required");
  }
  const Scalar inv_layers = Scalar(1) / static_cast<Scalar>(stack.size());
  std::vector<Grid<Scalar>> maps;
  maps.reserve(concepts.size());
  for (const auto& tokens : concepts) {
    if (tokens.empty()) throw InputError("aggregate_concept_maps: concept has no tokens");
    Grid<Scalar> acc;
    for (std::size_t l = 0; l < stack.size(); ++l) {
      const auto& a = stack[l];
      Grid<Scalar> cols;
      for (std::size_t k = 0; k < tokens.size(); ++k) {
        const int j = tokens[k];
        if (j < 0 || j >= a.cols()) {
          throw InputError("aggregate_concept_maps: token index " + std::to_string(j) +
                           " out of range");
        }
        Grid<Scalar> c = column_grid(a, j, specs[l].height, specs[l].width);
        cols = k == 0 ? c : cols + c;
      }
      Grid<Scalar> up = upsample_bilinear(cols, map_size, map_size);
      acc = l == 0 ? up : acc + up;
    }
    maps.push_back(inv_layers * acc);
  }
  return maps;
}

/// The toy model: fixed embeddings and projections, evaluated against any latent.
template <typename Scalar>
class AttentionEngine {
 public:
  AttentionEngine(EngineConfig cfg, const std::vector<std::string>& prompt, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        embedding_(encode_prompt<Scalar>(prompt, cfg_.embed_dim, seed)),
        specs_(make_layer_specs<Scalar>(cfg_, seed)) {}

  const EngineConfig& config() const { return cfg_; }
  const TextEmbedding<Scalar>& embedding() const { return embedding_; }
  const std::vector<AttentionLayerSpec<Scalar>>& layers() const { return specs_; }

  std::vector<Grid<Scalar>> attention_stack(const Grid<Scalar>& z) const {
    std::vector<Grid<Scalar>> stack;
    stack.reserve(specs_.size());
    for (const auto& s : specs_) {
      stack.push_back(compute_attention(z, cfg_.latent_height, cfg_.latent_width, embedding_, s));
    }
    return stack;
  }

  std::vector<Grid<Scalar>> concept_maps(const Grid<Scalar>& z,
                                         std::span<const std::vector<int>> concepts) const {
    const auto stack = attention_stack(z);
    return aggregate_concept_maps<Scalar>(stack, specs_, concepts, cfg_.map_size);
  }

 private:
  EngineConfig cfg_;
  TextEmbedding<Scalar> embedding_;
  std::vector<AttentionLayerSpec<Scalar>> specs_;
};

/// One reverse-diffusion step z_t -> z_{t-1}; runs off the tape.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual MatrixXd step(const MatrixXd& z, int t) const = 0;
};

/// z <- γ z + (1 − γ) drift, a contraction toward a fixed seeded latent.
class ContractionDenoiser final : public Denoiser {
 public:
  ContractionDenoiser(double gamma, MatrixXd drift) : gamma_(gamma), drift_(std::move(drift)) {}

  static ContractionDenoiser from_config(const EngineConfig& cfg, std::uint64_t seed) {
    auto rng = make_stream(seed, "drift");
    std::normal_distribution<double> normal;
    MatrixXd drift(cfg.latent_height * cfg.latent_width, cfg.channels);
    for (Index i = 0; i < drift.size(); ++i) drift.data()[i] = cfg.drift_scale * normal(rng);
    return ContractionDenoiser(cfg.gamma, std::move(drift));
  }

  MatrixXd step(const MatrixXd& z, int t) const override {
    if (t < 1) throw InputError("denoiser_step: timestep must be >= 1");
    if (z.rows() != drift_.rows() || z.cols() != drift_.cols()) {
      throw ShapeError("denoiser_step: latent shape mismatch");
    }
    return z + (1.0 - gamma_) * (drift_ - z);
  }

  double gamma() const { return gamma_; }
  const MatrixXd& drift() const { return drift_; }

 private:
  double gamma_;
  MatrixXd drift_;
};

/// Initial latent z_T drawn from the "init" stream.
inline MatrixXd initial_latent(const EngineConfig& cfg, std::uint64_t seed) {
  auto rng = make_stream(seed, "init");
  std::normal_distribution<double> normal;
  MatrixXd z(cfg.latent_height * cfg.latent_width, cfg.channels);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = cfg.init_scale * normal(rng);
  return z;
}

}  // namespace tolo
