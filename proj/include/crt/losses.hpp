#pragma once

#include <cstddef>
#include <vector>

#include "crt/encoder.hpp"
#include "crt/tensor.hpp"

namespace crt {

/// Batch cosine-similarity matrix, [n, n].
struct SimilarityMatrix {
  Tensor entries;

  std::size_t size() const { return entries.dim(0); }
  double at(std::size_t i, std::size_t j) const { return entries[i * size() + j]; }
};

/// Multi-similarity hyperparameters and the branch/consistency weights.
struct LossWeights {
  std::vector<double> ms_weights{1.0, 0.1};  // one per branch
  double consistency_weight = 0.9;
  double diversity_weight = 1.0;
  double alpha = 2.0;
  double beta = 50.0;
  double margin = 1.0;
  double mining_epsilon = 0.1;

  void validate() const;
};

/// Mean absolute off-diagonal cosine between prototypes. 0 for K < 2.
Tensor diversity_loss(const PrototypeSet& ps);

/// Cosine similarities between the rows of an [n, D] embedding tensor.
SimilarityMatrix similarity_matrix(const Tensor& embeddings);
SimilarityMatrix similarity_matrix(const std::vector<Tensor>& embeddings);

/// Pair-mined multi-similarity loss averaged over anchors.
Tensor ms_loss(const SimilarityMatrix& sim, const std::vector<int>& labels,
               const LossWeights& w);

/// Mean entrywise |s1 - s2|.
Tensor consistency_loss(const SimilarityMatrix& s1, const SimilarityMatrix& s2);

/// Sum of diversity terms (scaled by w.diversity_weight), branch MS terms
/// weighted by w.ms_weights, and the consistency term weighted by
/// w.consistency_weight.
Tensor total_loss(const std::vector<Tensor>& branch_ms, const std::vector<Tensor>& diversity,
                  const Tensor& consistency, const LossWeights& w);

}  // namespace crt
