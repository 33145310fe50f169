#pragma once

// Retrieval and embedding-space diagnostics. All functions are read-only and
// deterministic; embeddings are [n, d] tensors.

#include <cstddef>
#include <string>
#include <vector>

#include "crt/tensor.hpp"

namespace crt {

struct RetrievalReport {
  std::vector<std::size_t> ks;
  std::vector<double> recalls;
};

struct DensityReport {
  double d_intra = 0.0;
  double d_inter = 0.0;
  double density = 0.0;
};

struct SpectralReport {
  std::vector<double> spectrum;
  double rho = 0.0;
};

/// Fraction of queries whose top-k neighbours (cosine, self excluded, ties
/// broken by index) contain a same-class sample.
RetrievalReport recall_at_k(const Tensor& embeddings, const std::vector<int>& labels,
                            const std::vector<std::size_t>& ks);

/// Mean intra-class over mean inter-class Euclidean distance.
DensityReport embedding_space_density(const Tensor& embeddings, const std::vector<int>& labels);

inline constexpr double kSpectrumSmoothing = 1e-12;

/// KL(uniform || normalized singular-value spectrum) with d = embedding dim.
SpectralReport spectral_decay(const Tensor& embeddings, bool center = true);

/// Same quantity from precomputed singular values, zero-padded to `dim`.
SpectralReport spectral_decay_from_values(std::vector<double> singular, std::size_t dim);

/// Row-wise L2 normalization of an untracked embedding matrix.
Tensor normalize_rows(const Tensor& embeddings);

// Flat key=value serialization, one entry per line, prefixed by `prefix`.
std::string to_key_values(const RetrievalReport& r, const std::string& prefix);
std::string to_key_values(const DensityReport& r, const std::string& prefix);
std::string to_key_values(const SpectralReport& r, const std::string& prefix);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace crt
