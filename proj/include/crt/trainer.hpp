#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crt/encoder.hpp"
#include "crt/losses.hpp"
#include "crt/metrics.hpp"
#include "crt/synthetic.hpp"

namespace crt {

/// Mean-pooled linear embedding: f = mean_j(x_j) W + b. Used as the
/// comparison baseline for the coded residual branches.
struct LinearBaseline {
  Tensor weight;  // [L, D]
  Tensor bias;    // [D]

  static LinearBaseline create(std::size_t feature_dim, std::size_t embedding_dim, Rng& rng);
  Tensor forward_batch(const Tensor& features) const;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ModelState {
  enum class Kind { crt, baseline };

  Kind kind = Kind::crt;
  std::vector<Branch> branches;
  /// Second-branch heads reuse the first branch's hidden layer where the
  /// extents match. Prototypes are never shared.
  bool share_head_weights = false;
  std::optional<LinearBaseline> baseline;

  static ModelState create(const std::vector<BranchConfig>& branches, std::size_t feature_dim,
                           bool share_head_weights, std::uint64_t seed);
  static ModelState create_baseline(std::size_t feature_dim, std::size_t embedding_dim,
                                    std::uint64_t seed);

  /// Trainable tensors in a fixed order; shared tensors listed once.
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;

  /// One [N, D_b] embedding per branch (a single one for the baseline).
  std::vector<Tensor> forward_batch(const Tensor& features) const;

  /// Deep copy with sharing preserved.
  ModelState clone() const;

  /// Re-applies head sharing after branches were rebuilt.
  void link_shared_heads();
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 25;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_classes = 8;    // P
  std::size_t batch_per_class = 5;  // Q
  LossWeights loss;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_steps() const { return epochs * steps_per_epoch; }
};

struct LossBreakdown {
  Tensor total;
  std::vector<Tensor> diversity;
  std::vector<Tensor> ms;
  Tensor consistency;
};

/// Forward pass and all loss terms for one batch. Records on the active tape
/// when there is one.
LossBreakdown compute_losses(const ModelState& model, const Tensor& features,
                             const std::vector<int>& labels, const LossWeights& weights);

struct StepRecord {
  std::size_t step = 0;
  double total = 0.0;
  double diversity = 0.0;  // summed over branches
  double ms1 = 0.0;
  double ms2 = 0.0;
  double consistency = 0.0;
};

struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct Checkpoint {
  ModelState model;
  std::uint64_t step = 0;
  OptimizerState optimizer;
  std::string rng_state;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Step-wise training driver. Owns its model copy.
class Trainer {
 public:
  Trainer(const ModelState& model, const Dataset& train, TrainConfig cfg);
  Trainer(const Checkpoint& ckpt, const Dataset& train, TrainConfig cfg);

  StepRecord step();
  /// Runs until `until` steps have been taken in total (default: all).
  std::vector<StepRecord> run(std::optional<std::size_t> until = std::nullopt);

  Checkpoint checkpoint() const;
  const ModelState& model() const { return model_; }
  std::size_t steps_done() const { return static_cast<std::size_t>(step_); }

 private:
  void apply_update(const Gradients& grads);

  ModelState model_;
  const Dataset* train_;
  TrainConfig cfg_;
  std::vector<NamedParameter> params_;
  OptimizerState opt_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

struct TrainResult {
  ModelState model;
  std::vector<StepRecord> history;
};

TrainResult train(const ModelState& model, const Dataset& train, const TrainConfig& cfg);

/// Mean total loss per epoch from a step history.
std::vector<double> epoch_means(const std::vector<StepRecord>& history, std::size_t steps_per_epoch);

struct BranchEvaluation {
  RetrievalReport retrieval;
  DensityReport density;
  SpectralReport spectral;
};

/// Test-class embeddings of every branch, L2-normalized.
std::vector<Tensor> embed_dataset(const ModelState& model, const Dataset& data);

/// Reports per branch (branch 1 first). Rejects test sets that share classes
/// with `train_classes`.
std::vector<BranchEvaluation> evaluate(const ModelState& model, const Dataset& test,
                                       const std::vector<std::size_t>& ks,
                                       const std::vector<int>& train_classes = {});

std::string evaluation_report(const std::vector<BranchEvaluation>& evals);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Gradients smaller than this are compared absolutely.
  double denominator_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded subset per group.
  std::size_t max_coords_per_group = 0;
  std::uint64_t seed = 0;
  /// Test hook: alters analytic gradients before comparison.
  std::function<void(const std::string& group, std::vector<double>& grad)> corrupt;
};

struct GroupError {
  std::string group;
  std::size_t checked = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GroupError> groups;
  double max_relative_error = 0.0;
  bool passed = true;

  std::string to_text() const;
};

/// Central finite differences of the total loss against autodiff, grouped by
/// branch and parameter role.
GradCheckReport grad_check(const ModelState& model, const Batch& batch, const LossWeights& weights,
                           const GradCheckOptions& options = {});

}  // namespace crt
