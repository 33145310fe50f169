#include "crt/losses.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <limits>
#include <string>

namespace crt {

void LossWeights::validate() const {
  for (double w : ms_weights) {
    if (!(w >= 0.0)) throw ConfigError("MS loss weights must be non-negative");
  }
  if (!(consistency_weight >= 0.0)) throw ConfigError("consistency weight must be non-negative");
  if (!(diversity_weight >= 0.0)) throw ConfigError("diversity weight must be non-negative");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("MS alpha and beta must be positive");
  if (!(margin >= 0.0)) throw ConfigError("MS margin must be non-negative");
  if (!(mining_epsilon >= 0.0)) throw ConfigError("MS mining epsilon must be non-negative");
}

Tensor diversity_loss(const PrototypeSet& ps) {
  const std::size_t k = ps.count();
  if (k < 2) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::clog << "warning: diversity loss is undefined for a single prototype; using 0\n";
    }
    return Tensor::scalar(0.0);
  }
  Tensor unit = l2_normalize(ps.prototypes);
  Tensor cosines = matmul(unit, transpose(unit));
  std::vector<double> off_diagonal(k * k, 1.0);
  for (std::size_t i = 0; i < k; ++i) off_diagonal[i * k + i] = 0.0;
  Tensor masked = mul(abs(cosines), Tensor({k, k}, std::move(off_diagonal)));
  return scale(sum(masked), 1.0 / static_cast<double>(k * (k - 1)));
}

SimilarityMatrix similarity_matrix(const Tensor& embeddings) {
  if (embeddings.rank() != 2) {
    throw ShapeError("similarity_matrix needs [n, D] embeddings, got " +
                     shape_to_string(embeddings.shape()));
  }
  Tensor unit = l2_normalize(embeddings);
  return SimilarityMatrix{matmul(unit, transpose(unit))};
}

SimilarityMatrix similarity_matrix(const std::vector<Tensor>& embeddings) {
  return similarity_matrix(stack(embeddings));
}

Tensor ms_loss(const SimilarityMatrix& sim, const std::vector<int>& labels,
               const LossWeights& w) {
  const std::size_t n = sim.size();
  if (labels.size() != n) {
    throw ShapeError("ms_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " samples");
  }
  // Hard-pair mining on the similarity values; selection is not differentiated.
  std::vector<double> pos_mask(n * n, 0.0), neg_mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double hardest_neg = -std::numeric_limits<double>::infinity();
    double hardest_pos = std::numeric_limits<double>::infinity();
    bool any_pos = false, any_neg = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = sim.at(i, j);
      if (labels[j] == labels[i]) {
        any_pos = true;
        hardest_pos = std::min(hardest_pos, s);
      } else {
        any_neg = true;
        hardest_neg = std::max(hardest_neg, s);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = sim.at(i, j);
      if (labels[j] == labels[i]) {
        if (!any_neg || s < hardest_neg + w.mining_epsilon) pos_mask[i * n + j] = 1.0;
      } else {
        if (!any_pos || s > hardest_pos - w.mining_epsilon) neg_mask[i * n + j] = 1.0;
      }
    }
  }
  const Tensor& s = sim.entries;
  Tensor pos_exp = mul(exp(scale(add_scalar(s, -w.margin), -w.alpha)), Tensor({n, n}, pos_mask));
  Tensor neg_exp = mul(exp(scale(add_scalar(s, -w.margin), w.beta)), Tensor({n, n}, neg_mask));
  Tensor pos_term = scale(log1p(sum_axis(pos_exp, 1)), 1.0 / w.alpha);
  Tensor neg_term = scale(log1p(sum_axis(neg_exp, 1)), 1.0 / w.beta);
  return mean(add(pos_term, neg_term));
}

Tensor consistency_loss(const SimilarityMatrix& s1, const SimilarityMatrix& s2) {
  if (s1.entries.shape() != s2.entries.shape()) {
    throw ShapeError("consistency_loss: similarity matrices " +
                     shape_to_string(s1.entries.shape()) + " and " +
                     shape_to_string(s2.entries.shape()) + " differ in size");
  }
  return mean(abs(sub(s1.entries, s2.entries)));
}

Tensor total_loss(const std::vector<Tensor>& branch_ms, const std::vector<Tensor>& diversity,
                  const Tensor& consistency, const LossWeights& w) {
  if (branch_ms.size() != diversity.size() || branch_ms.size() != w.ms_weights.size()) {
    throw ShapeError("total_loss: " + std::to_string(branch_ms.size()) + " MS terms, " +
                     std::to_string(diversity.size()) + " diversity terms, " +
                     std::to_string(w.ms_weights.size()) + " branch weights");
  }
  Tensor total = scale(consistency, w.consistency_weight);
  for (std::size_t b = 0; b < branch_ms.size(); ++b) {
    total = add(total, scale(diversity[b], w.diversity_weight));
    total = add(total, scale(branch_ms[b], w.ms_weights[b]));
  }
  return total;
}

}  // namespace crt
