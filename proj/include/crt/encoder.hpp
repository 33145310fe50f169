#pragma once

// Coded residual transform: prototype correlation, correlation-weighted
// residual encoding and per-prototype embedding heads.
//
//   w_kj = softplus(x_j . c_k)
//   r_k  = sum_j w_kj (x_j - c_k)
//   f    = (1/K) sum_k head_k(r_k)

#include <cstddef>
#include <random>
#include <vector>

#include "crt/tensor.hpp"

namespace crt {

using Rng = std::mt19937_64;

/// H x W grid of L-dimensional features, stored as an [H*W, L] tensor in
/// row-major grid order.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor features;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, Tensor f);
  static FeatureMap from_values(std::size_t h, std::size_t w, std::size_t dim,
                                std::vector<double> values);

  std::size_t positions() const { return height * width; }
  std::size_t dim() const { return features.dim(1); }
};

/// K learnable prototypes stored as a [K, L] parameter.
struct PrototypeSet {
  Tensor prototypes;

  PrototypeSet() = default;
  explicit PrototypeSet(Tensor p);
  /// Gaussian entries, each prototype rescaled to unit norm.
  static PrototypeSet random(std::size_t count, std::size_t dim, Rng& rng);

  std::size_t count() const { return prototypes.dim(0); }
  std::size_t dim() const { return prototypes.dim(1); }
};

inline constexpr double kMinPrototypeNorm = 1e-8;

/// One residual code r_k per prototype, as a [K, L] tensor.
struct ResidualCode {
  Tensor codes;

  std::size_t count() const { return codes.dim(0); }
  std::size_t dim() const { return codes.dim(1); }
};

enum class Activation { gelu, identity };

/// Linear(L -> hidden) -> activation -> Linear(hidden -> out).
struct EmbeddingHead {
  Tensor w1;  // [L, hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [hidden, out]
  Tensor b2;  // [out]
  Activation activation = Activation::gelu;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static EmbeddingHead random(std::size_t in_dim, std::size_t hidden,
                              std::size_t out_dim, Rng& rng);
  /// Identity weights, zero biases and no activation: maps r to r.
  static EmbeddingHead identity(std::size_t dim);

  std::size_t in_dim() const { return w1.dim(0); }
  std::size_t hidden_dim() const { return w1.dim(1); }
  std::size_t out_dim() const { return w2.dim(1); }

  /// Applies the head to the last axis of `x`.
  Tensor apply(const Tensor& x) const;
};

struct BranchConfig {
  std::size_t prototypes = 8;
  std::size_t hidden = 32;
  std::size_t embedding_dim = 32;
  bool per_prototype_heads = true;
  double ms_weight = 1.0;

  void validate() const;
  std::size_t head_count() const { return per_prototype_heads ? prototypes : 1; }
};

/// Raw correlations x_hw . c_k as a [K, H, W] tensor.
Tensor correlation_map(const FeatureMap& fm, const PrototypeSet& ps);

ResidualCode encode_residuals(const FeatureMap& fm, const PrototypeSet& ps);

/// Averages head_k(r_k) over prototypes. With shared heads the single head is
/// applied to every code.
Tensor embed(const ResidualCode& rc, const std::vector<EmbeddingHead>& heads,
             const BranchConfig& cfg);

Tensor forward_branch(const FeatureMap& fm, const PrototypeSet& ps,
                      const std::vector<EmbeddingHead>& heads, const BranchConfig& cfg);

// Batched forms used by training. `features` is [N, H*W, L].

/// [N, K, L] residual codes for a batch of feature maps.
Tensor encode_residuals_batch(const Tensor& features, const PrototypeSet& ps);
/// [N, D_out] embeddings from [N, K, L] codes.
Tensor embed_batch(const Tensor& codes, const std::vector<EmbeddingHead>& heads,
                   const BranchConfig& cfg);

/// One embedding branch: its prototypes, heads and configuration.
struct Branch {
  BranchConfig config;
  PrototypeSet prototypes;
  std::vector<EmbeddingHead> heads;

  static Branch create(const BranchConfig& cfg, std::size_t feature_dim, Rng& rng);

  Tensor forward(const FeatureMap& fm) const;
  Tensor forward_batch(const Tensor& features) const;

  /// Every trainable tensor, prototypes first. Shared tensors appear once.
  std::vector<Tensor> parameters() const;
};

}  // namespace crt
