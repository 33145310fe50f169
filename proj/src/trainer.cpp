#include "crt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace crt {

// ---------------------------------------------------------------------------
// Models

LinearBaseline LinearBaseline::create(std::size_t feature_dim, std::size_t embedding_dim,
                                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(feature_dim * embedding_dim), b(embedding_dim);
  for (double& x : w) x = dist(rng);
  for (double& x : b) x = dist(rng);
  return {Tensor::parameter({feature_dim, embedding_dim}, std::move(w)),
          Tensor::parameter({embedding_dim}, std::move(b))};
}

Tensor LinearBaseline::forward_batch(const Tensor& features) const {
  return add(matmul(mean_axis(features, 1), weight), bias);
}

ModelState ModelState::create(const std::vector<BranchConfig>& branches, std::size_t feature_dim,
                              bool share_head_weights, std::uint64_t seed) {
  if (branches.empty() || branches.size() > 2) {
    throw ConfigError("a model has one or two embedding branches");
  }
  Rng rng(seed + kInitStream);
  ModelState m;
  m.kind = Kind::crt;
  m.share_head_weights = share_head_weights;
  for (const BranchConfig& cfg : branches) m.branches.push_back(Branch::create(cfg, feature_dim, rng));
  m.link_shared_heads();
  return m;
}

ModelState ModelState::create_baseline(std::size_t feature_dim, std::size_t embedding_dim,
                                       std::uint64_t seed) {
  Rng rng(seed + kInitStream);
  ModelState m;
  m.kind = Kind::baseline;
  m.baseline = LinearBaseline::create(feature_dim, embedding_dim, rng);
  return m;
}

void ModelState::link_shared_heads() {
  if (!share_head_weights || branches.size() < 2) return;
  const auto& source = branches[0].heads;
  auto& target = branches[1].heads;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const EmbeddingHead& src = source[k % source.size()];
    if (src.w1.shape() == target[k].w1.shape()) {
      target[k].w1 = src.w1;
      target[k].b1 = src.b1;
    }
  }
}

std::vector<NamedParameter> ModelState::parameters() const {
  std::vector<NamedParameter> out;
  std::set<const detail::TensorImpl*> seen;
  auto push = [&](std::string name, const Tensor& t) {
    if (seen.insert(t.impl()).second) out.push_back({std::move(name), t});
  };
  if (kind == Kind::baseline) {
    push("baseline.weight", baseline->weight);
    push("baseline.bias", baseline->bias);
    return out;
  }
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const std::string prefix = "branch" + std::to_string(b + 1) + ".";
    push(prefix + "prototypes", branches[b].prototypes.prototypes);
    for (std::size_t k = 0; k < branches[b].heads.size(); ++k) {
      const EmbeddingHead& h = branches[b].heads[k];
      const std::string hp = prefix + "head" + std::to_string(k) + ".";
      push(hp + "w1", h.w1);
      push(hp + "b1", h.b1);
      push(hp + "w2", h.w2);
      push(hp + "b2", h.b2);
    }
  }
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

std::vector<Tensor> ModelState::forward_batch(const Tensor& features) const {
  if (kind == Kind::baseline) return {baseline->forward_batch(features)};
  std::vector<Tensor> out;
  out.reserve(branches.size());
  for (const Branch& b : branches) out.push_back(b.forward_batch(features));
  return out;
}

ModelState ModelState::clone() const {
  std::unordered_map<const detail::TensorImpl*, Tensor> copies;
  auto copy = [&copies](const Tensor& t) {
    auto it = copies.find(t.impl());
    if (it != copies.end()) return it->second;
    Tensor c = Tensor::parameter(t.shape(), t.values());
    copies.emplace(t.impl(), c);
    return c;
  };
  ModelState m = *this;
  if (m.baseline) {
    m.baseline->weight = copy(baseline->weight);
    m.baseline->bias = copy(baseline->bias);
  }
  for (Branch& b : m.branches) {
    b.prototypes.prototypes = copy(b.prototypes.prototypes);
    for (EmbeddingHead& h : b.heads) {
      h.w1 = copy(h.w1);
      h.b1 = copy(h.b1);
      h.w2 = copy(h.w2);
      h.b2 = copy(h.b2);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Losses for one batch

LossBreakdown compute_losses(const ModelState& model, const Tensor& features,
                             const std::vector<int>& labels, const LossWeights& weights) {
  const std::vector<Tensor> outputs = model.forward_batch(features);
  if (weights.ms_weights.size() < outputs.size()) {
    throw ConfigError("need one MS loss weight per branch");
  }
  LossWeights w = weights;
  w.ms_weights.resize(outputs.size());

  LossBreakdown lb;
  std::vector<SimilarityMatrix> sims;
  for (const Tensor& out : outputs) {
    sims.push_back(similarity_matrix(out));
    lb.ms.push_back(ms_loss(sims.back(), labels, w));
  }
  if (model.kind == ModelState::Kind::baseline) {
    lb.consistency = Tensor::scalar(0.0);
    lb.total = scale(lb.ms[0], w.ms_weights[0]);
    return lb;
  }
  for (const Branch& b : model.branches) lb.diversity.push_back(diversity_loss(b.prototypes));
  lb.consistency = sims.size() == 2 ? consistency_loss(sims[0], sims[1]) : Tensor::scalar(0.0);
  lb.total = total_loss(lb.ms, lb.diversity, lb.consistency, w);
  return lb;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
  if (batch_classes < 1 || batch_per_class < 1) throw ConfigError("batch P and Q must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  loss.validate();
}

Trainer::Trainer(const ModelState& model, const Dataset& train, TrainConfig cfg)
    : model_(model.clone()), train_(&train), cfg_(std::move(cfg)), rng_(cfg_.seed + kBatchStream) {
  cfg_.validate();
  params_ = model_.parameters();
  opt_.m.resize(params_.size());
  opt_.v.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    opt_.m[i].assign(params_[i].tensor.size(), 0.0);
    opt_.v[i].assign(params_[i].tensor.size(), 0.0);
  }
}

Trainer::Trainer(const Checkpoint& ckpt, const Dataset& train, TrainConfig cfg)
    : Trainer(ckpt.model, train, std::move(cfg)) {
  if (ckpt.optimizer.m.size() != params_.size() || ckpt.optimizer.v.size() != params_.size()) {
    throw IoError("checkpoint optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (ckpt.optimizer.m[i].size() != params_[i].tensor.size() ||
        ckpt.optimizer.v[i].size() != params_[i].tensor.size()) {
      throw IoError("checkpoint optimizer state does not match the model");
    }
  }
  opt_ = ckpt.optimizer;
  step_ = ckpt.step;
  std::istringstream is(ckpt.rng_state);
  is >> rng_;
  if (!is) throw IoError("checkpoint rng state is malformed");
}

StepRecord Trainer::step() {
  // Every random draw of the step happens before the forward passes.
  const Batch batch = sample_batch(*train_, cfg_.batch_classes, cfg_.batch_per_class, rng_);
  StepRecord rec;
  rec.step = static_cast<std::size_t>(step_);
  Tape tape;
  Tape::Scope scope(tape);
  try {
    LossBreakdown lb = compute_losses(model_, batch.features, batch.labels, cfg_.loss);
    rec.total = lb.total.item();
    for (const Tensor& d : lb.diversity) rec.diversity += d.item();
    rec.ms1 = lb.ms.empty() ? 0.0 : lb.ms[0].item();
    rec.ms2 = lb.ms.size() > 1 ? lb.ms[1].item() : 0.0;
    rec.consistency = lb.consistency.item();
    if (!std::isfinite(rec.total)) throw NumericalError("non-finite total loss");
    apply_update(tape.backward(lb.total));
  } catch (const NumericalError& e) {
    throw NumericalError("training diverged at step " + std::to_string(step_) + ": " + e.what());
  }
  ++step_;
  return rec;
}

void Trainer::apply_update(const Gradients& grads) {
  const double lr = cfg_.learning_rate;
  if (cfg_.optimizer == OptimizerKind::sgd) {
    for (auto& p : params_) {
      const std::vector<double> g = grads.of(p.tensor);
      auto data = p.tensor.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
    }
    return;
  }
  ++opt_.t;
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt_.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt_.t));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const std::vector<double> g = grads.of(params_[k].tensor);
    auto data = params_[k].tensor.mutable_data();
    auto& m = opt_.m[k];
    auto& v = opt_.v[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_epsilon);
    }
  }
}

std::vector<StepRecord> Trainer::run(std::optional<std::size_t> until) {
  const std::size_t target = until.value_or(cfg_.total_steps());
  std::vector<StepRecord> history;
  while (step_ < target) history.push_back(step());
  return history;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model = model_.clone();
  c.step = step_;
  c.optimizer = opt_;
  std::ostringstream os;
  os << rng_;
  c.rng_state = os.str();
  return c;
}

TrainResult train(const ModelState& model, const Dataset& train_set, const TrainConfig& cfg) {
  Trainer trainer(model, train_set, cfg);
  TrainResult result;
  result.history = trainer.run();
  result.model = trainer.model().clone();
  return result;
}

std::vector<double> epoch_means(const std::vector<StepRecord>& history, std::size_t steps_per_epoch) {
  std::vector<double> out;
  if (steps_per_epoch == 0) return out;
  for (std::size_t start = 0; start < history.size(); start += steps_per_epoch) {
    const std::size_t end = std::min(history.size(), start + steps_per_epoch);
    double acc = 0.0;
    for (std::size_t i = start; i < end; ++i) acc += history[i].total;
    out.push_back(acc / static_cast<double>(end - start));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<Tensor> embed_dataset(const ModelState& model, const Dataset& data) {
  std::vector<Tensor> out;
  for (const Tensor& e : model.forward_batch(data.all_features())) out.push_back(normalize_rows(e));
  return out;
}

std::vector<BranchEvaluation> evaluate(const ModelState& model, const Dataset& test,
                                       const std::vector<std::size_t>& ks,
                                       const std::vector<int>& train_classes) {
  const std::vector<int> test_classes = test.classes();
  for (int c : train_classes) {
    if (std::binary_search(test_classes.begin(), test_classes.end(), c)) {
      throw ConfigError("test class " + std::to_string(c) + " also appears in training");
    }
  }
  const std::vector<int> labels = test.labels();
  std::vector<BranchEvaluation> out;
  for (const Tensor& e : embed_dataset(model, test)) {
    BranchEvaluation ev;
    ev.retrieval = recall_at_k(e, labels, ks);
    ev.density = embedding_space_density(e, labels);
    ev.spectral = spectral_decay(e);
    out.push_back(std::move(ev));
  }
  return out;
}

std::string evaluation_report(const std::vector<BranchEvaluation>& evals) {
  std::string out;
  for (std::size_t b = 0; b < evals.size(); ++b) {
    const std::string prefix = "branch" + std::to_string(b + 1) + ".";
    out += to_key_values(evals[b].retrieval, prefix);
    out += to_key_values(evals[b].density, prefix);
    out += to_key_values(evals[b].spectral, prefix);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

std::string group_of(const std::string& name) {
  // branch1.head3.w1 -> branch1.w1
  const auto first = name.find('.');
  const auto second = name.find('.', first + 1);
  if (first == std::string::npos || second == std::string::npos) return name;
  if (name.compare(first + 1, 4, "head") != 0) return name;
  return name.substr(0, first) + name.substr(second);
}

}  // namespace

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  for (const GroupError& g : groups) {
    os << "group." << g.group << ".checked=" << g.checked << '\n';
    os << "group." << g.group << ".max_relative_error=" << format_double(g.max_relative_error) << '\n';
  }
  os << "max_relative_error=" << format_double(max_relative_error) << '\n';
  os << "passed=" << (passed ? "true" : "false") << '\n';
  return os.str();
}

GradCheckReport grad_check(const ModelState& model_in, const Batch& batch, const LossWeights& weights,
                           const GradCheckOptions& options) {
  ModelState model = model_in.clone();
  std::vector<NamedParameter> params = model.parameters();

  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    Tape::Scope scope(tape);
    LossBreakdown lb = compute_losses(model, batch.features, batch.labels, weights);
    Gradients grads = tape.backward(lb.total);
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic[i] = grads.of(params[i].tensor);
      if (options.corrupt) options.corrupt(group_of(params[i].name), analytic[i]);
    }
  }

  auto loss_value = [&]() {
    return compute_losses(model, batch.features, batch.labels, weights).total.item();
  };

  std::map<std::string, GroupError> groups;
  std::vector<std::string> order;
  Rng rng(options.seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string group = group_of(params[i].name);
    if (!groups.count(group)) {
      order.push_back(group);
      groups[group].group = group;
    }
    GroupError& ge = groups[group];
    auto data = params[i].tensor.mutable_data();

    std::vector<std::size_t> coords(data.size());
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
    if (options.max_coords_per_group > 0) {
      // Spread the per-group budget over the group's tensors.
      std::size_t members = 0;
      for (const auto& p : params) members += group_of(p.name) == group ? 1 : 0;
      const std::size_t budget = std::max<std::size_t>(1, options.max_coords_per_group / members);
      if (budget < coords.size()) {
        for (std::size_t c = 0; c < budget; ++c) {
          std::uniform_int_distribution<std::size_t> pick(c, coords.size() - 1);
          std::swap(coords[c], coords[pick(rng)]);
        }
        coords.resize(budget);
      }
    }
    for (std::size_t c : coords) {
      const double saved = data[c];
      data[c] = saved + options.step;
      const double up = loss_value();
      data[c] = saved - options.step;
      const double down = loss_value();
      data[c] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i][c];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), options.denominator_floor});
      ge.max_relative_error = std::max(ge.max_relative_error, std::fabs(a - numeric) / denom);
      ++ge.checked;
    }
  }

  GradCheckReport report;
  for (const std::string& g : order) {
    report.groups.push_back(groups[g]);
    report.max_relative_error = std::max(report.max_relative_error, groups[g].max_relative_error);
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace crt
