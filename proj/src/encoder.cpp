#include "crt/encoder.hpp"

#include <cmath>
#include <string>

namespace crt {

FeatureMap::FeatureMap(std::size_t h, std::size_t w, Tensor f)
    : height(h), width(w), features(std::move(f)) {
  if (features.rank() != 2 || features.dim(0) != h * w) {
    throw ShapeError("feature map " + std::to_string(h) + "x" + std::to_string(w) +
                     " needs an [H*W, L] tensor, got " + shape_to_string(features.shape()));
  }
}

FeatureMap FeatureMap::from_values(std::size_t h, std::size_t w, std::size_t dim,
                                   std::vector<double> values) {
  return FeatureMap(h, w, Tensor({h * w, dim}, std::move(values)));
}

PrototypeSet::PrototypeSet(Tensor p) : prototypes(std::move(p)) {
  if (prototypes.rank() != 2) {
    throw ShapeError("prototype set needs a [K, L] tensor, got " +
                     shape_to_string(prototypes.shape()));
  }
  const std::size_t k = prototypes.dim(0), l = prototypes.dim(1);
  for (std::size_t i = 0; i < k; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < l; ++j) sq += prototypes[i * l + j] * prototypes[i * l + j];
    if (std::sqrt(sq) <= kMinPrototypeNorm) {
      throw DegenerateError("prototype " + std::to_string(i) + " is the zero vector");
    }
  }
}

PrototypeSet PrototypeSet::random(std::size_t count, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(count * dim);
  for (std::size_t k = 0; k < count; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = normal(rng);
      values[k * dim + j] = v;
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < dim; ++j) values[k * dim + j] /= norm;
  }
  return PrototypeSet(Tensor::parameter({count, dim}, std::move(values)));
}

EmbeddingHead EmbeddingHead::random(std::size_t in_dim, std::size_t hidden,
                                    std::size_t out_dim, Rng& rng) {
  auto uniform_params = [&rng](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
  };
  EmbeddingHead head;
  head.w1 = uniform_params({in_dim, hidden}, in_dim);
  head.b1 = uniform_params({hidden}, in_dim);
  head.w2 = uniform_params({hidden, out_dim}, hidden);
  head.b2 = uniform_params({out_dim}, hidden);
  return head;
}

EmbeddingHead EmbeddingHead::identity(std::size_t dim) {
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  EmbeddingHead head;
  head.w1 = Tensor::parameter({dim, dim}, eye);
  head.b1 = Tensor::parameter({dim}, std::vector<double>(dim, 0.0));
  head.w2 = Tensor::parameter({dim, dim}, eye);
  head.b2 = Tensor::parameter({dim}, std::vector<double>(dim, 0.0));
  head.activation = Activation::identity;
  return head;
}

namespace {

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : x;
}

void check_head(const EmbeddingHead& h) {
  if (h.w1.rank() != 2 || h.w2.rank() != 2 || h.b1.rank() != 1 || h.b2.rank() != 1 ||
      h.w1.dim(1) != h.b1.dim(0) || h.w1.dim(1) != h.w2.dim(0) ||
      h.w2.dim(1) != h.b2.dim(0)) {
    throw ShapeError("embedding head layer extents do not chain");
  }
}

void check_dims(const FeatureMap& fm, const PrototypeSet& ps) {
  if (fm.dim() != ps.dim()) {
    throw ShapeError("feature dimension " + std::to_string(fm.dim()) +
                     " does not match prototype dimension " + std::to_string(ps.dim()));
  }
}

// codes [G, N, L] -> head outputs [G, N, D_out]; G is the head count, or the
// code count when a single head is broadcast.
Tensor apply_heads(const Tensor& codes, const std::vector<EmbeddingHead>& heads) {
  const std::size_t g = heads.size();
  std::vector<Tensor> w1, b1, w2, b2;
  w1.reserve(g);
  b1.reserve(g);
  w2.reserve(g);
  b2.reserve(g);
  for (const EmbeddingHead& h : heads) {
    check_head(h);
    if (h.activation != heads.front().activation || h.w1.shape() != heads.front().w1.shape() ||
        h.w2.shape() != heads.front().w2.shape()) {
      throw ShapeError("all heads of a branch must share extents and activation");
    }
    w1.push_back(h.w1);
    b1.push_back(h.b1);
    w2.push_back(h.w2);
    b2.push_back(h.b2);
  }
  const EmbeddingHead& first = heads.front();
  if (codes.dim(2) != first.in_dim()) {
    throw ShapeError("code dimension " + std::to_string(codes.dim(2)) +
                     " does not match head input " + std::to_string(first.in_dim()));
  }
  const std::size_t hidden = first.hidden_dim(), out = first.out_dim();
  Tensor hidden_pre = add(batched_matmul(codes, stack(w1)), reshape(stack(b1), {g, 1, hidden}));
  Tensor hidden_act = activate(hidden_pre, first.activation);
  return add(batched_matmul(hidden_act, stack(w2)), reshape(stack(b2), {g, 1, out}));
}

void check_head_count(const std::vector<EmbeddingHead>& heads, std::size_t codes,
                      const BranchConfig& cfg) {
  const std::size_t expected = cfg.per_prototype_heads ? codes : 1;
  if (heads.size() != expected) {
    throw ShapeError("expected " + std::to_string(expected) + " embedding heads for " +
                     std::to_string(codes) + " codes, got " + std::to_string(heads.size()));
  }
}

}  // namespace

Tensor EmbeddingHead::apply(const Tensor& x) const {
  check_head(*this);
  Tensor h = activate(add(matmul(x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x, w1), b1),
                      activation);
  Tensor y = add(matmul(h, w2), b2);
  return x.rank() == 1 ? reshape(y, {out_dim()}) : y;
}

void BranchConfig::validate() const {
  if (prototypes < 1) throw ConfigError("branch prototype count must be >= 1");
  if (hidden < 1) throw ConfigError("branch hidden width must be >= 1");
  if (embedding_dim < 1) throw ConfigError("branch embedding dim must be >= 1");
  if (!(ms_weight >= 0.0)) throw ConfigError("branch ms_weight must be non-negative");
}

Tensor correlation_map(const FeatureMap& fm, const PrototypeSet& ps) {
  check_dims(fm, ps);
  Tensor corr = matmul(fm.features, transpose(ps.prototypes));  // [HW, K]
  return reshape(transpose(corr), {ps.count(), fm.height, fm.width});
}

ResidualCode encode_residuals(const FeatureMap& fm, const PrototypeSet& ps) {
  check_dims(fm, ps);
  const std::size_t k = ps.count();
  Tensor weights = softplus(matmul(fm.features, transpose(ps.prototypes)));  // [HW, K]
  // sum_j w_kj x_j - (sum_j w_kj) c_k
  Tensor weighted = matmul(transpose(weights), fm.features);  // [K, L]
  Tensor mass = reshape(sum_axis(weights, 0), {k, 1});
  return ResidualCode{sub(weighted, mul(mass, ps.prototypes))};
}

Tensor embed(const ResidualCode& rc, const std::vector<EmbeddingHead>& heads,
             const BranchConfig& cfg) {
  check_head_count(heads, rc.count(), cfg);
  Tensor codes = reshape(rc.codes, {rc.count(), 1, rc.dim()});
  Tensor out = apply_heads(codes, heads);  // [K, 1, D]
  return reshape(mean_axis(out, 0), {out.dim(2)});
}

Tensor forward_branch(const FeatureMap& fm, const PrototypeSet& ps,
                      const std::vector<EmbeddingHead>& heads, const BranchConfig& cfg) {
  return embed(encode_residuals(fm, ps), heads, cfg);
}

Tensor encode_residuals_batch(const Tensor& features, const PrototypeSet& ps) {
  if (features.rank() != 3 || features.dim(2) != ps.dim()) {
    throw ShapeError("batched features " + shape_to_string(features.shape()) +
                     " do not match prototypes " + shape_to_string(ps.prototypes.shape()));
  }
  const std::size_t n = features.dim(0), k = ps.count(), l = ps.dim();
  Tensor proto_t = reshape(transpose(ps.prototypes), {1, l, k});
  Tensor weights = softplus(batched_matmul(features, proto_t));  // [N, HW, K]
  Tensor weighted = batched_matmul(transpose(weights), features);  // [N, K, L]
  Tensor mass = reshape(sum_axis(weights, 1), {n, k, 1});
  return sub(weighted, mul(mass, reshape(ps.prototypes, {1, k, l})));
}

Tensor embed_batch(const Tensor& codes, const std::vector<EmbeddingHead>& heads,
                   const BranchConfig& cfg) {
  if (codes.rank() != 3) throw ShapeError("embed_batch needs [N, K, L] codes");
  check_head_count(heads, codes.dim(1), cfg);
  Tensor per_code = permute(codes, {1, 0, 2});  // [K, N, L]
  return mean_axis(apply_heads(per_code, heads), 0);
}

Branch Branch::create(const BranchConfig& cfg, std::size_t feature_dim, Rng& rng) {
  cfg.validate();
  Branch b;
  b.config = cfg;
  b.prototypes = PrototypeSet::random(cfg.prototypes, feature_dim, rng);
  for (std::size_t i = 0; i < cfg.head_count(); ++i) {
    b.heads.push_back(EmbeddingHead::random(feature_dim, cfg.hidden, cfg.embedding_dim, rng));
  }
  return b;
}

Tensor Branch::forward(const FeatureMap& fm) const {
  return forward_branch(fm, prototypes, heads, config);
}

Tensor Branch::forward_batch(const Tensor& features) const {
  return embed_batch(encode_residuals_batch(features, prototypes), heads, config);
}

std::vector<Tensor> Branch::parameters() const {
  std::vector<Tensor> out{prototypes.prototypes};
  for (const EmbeddingHead& h : heads) {
    out.insert(out.end(), {h.w1, h.b1, h.w2, h.b2});
  }
  return out;
}

}  // namespace crt
