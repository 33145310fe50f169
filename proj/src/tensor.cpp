#include "crt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace crt {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, {0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_to_string(shape));
    }
  }
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericalError("tensor data must be finite");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), true);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return impl_->data[0];
}

std::span<double> Tensor::mutable_data() {
  if (impl_->tape_id != 0) {
    throw Error("mutable_data() is only available on leaf tensors");
  }
  return impl_->data;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// ---------------------------------------------------------------------------
// Gradients

bool Gradients::contains(const Tensor& leaf) const {
  return grads_.count(leaf.impl()) != 0;
}

std::vector<double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.impl());
  if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
std::atomic<std::uint64_t> g_next_tape_id{1};
thread_local Tape* t_active_tape = nullptr;
}  // namespace

Tape::Tape() : id_(g_next_tape_id++) {}

Tape::Scope::Scope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
Tape::Scope::~Scope() { t_active_tape = previous_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::clear() {
  nodes_.clear();
  leaf_nodes_.clear();
  id_ = g_next_tape_id++;
}

bool Tape::tracks(const Tensor& t) const {
  return t.requires_grad() || t.impl_->tape_id == id_;
}

std::size_t Tape::node_of(const Tensor& t) {
  if (t.impl_->tape_id == id_) return t.impl_->node;
  if (!t.requires_grad()) return npos;
  auto [it, inserted] = leaf_nodes_.try_emplace(t.impl(), nodes_.size());
  if (inserted) {
    Node leaf;
    leaf.size = t.size();
    leaf.leaf = t.impl_;
    nodes_.push_back(std::move(leaf));
  }
  return it->second;
}

Tensor Tape::record(Shape shape, std::vector<double> data,
                    std::span<const Tensor* const> inputs, BackwardFn fn) {
  Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor* input : inputs) node.inputs.push_back(node_of(*input));
  node.backward = std::move(fn);
  node.size = data.size();
  const std::size_t index = nodes_.size();
  nodes_.push_back(std::move(node));

  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->tape_id = id_;
  impl->node = index;
  return Tensor(std::move(impl));
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  Gradients result;
  if (loss.impl_->tape_id != id_) {
    if (loss.requires_grad()) result.grads_[loss.impl()] = {1.0};
    clear();
    return result;
  }

  std::vector<std::vector<double>> slots(nodes_.size());
  slots[loss.impl_->node] = {1.0};
  std::vector<std::vector<double>*> in_slots;
  for (std::size_t i = loss.impl_->node + 1; i-- > 0;) {
    if (slots[i].empty()) continue;
    Node& node = nodes_[i];
    if (node.leaf) {
      result.grads_[node.leaf.get()] = std::move(slots[i]);
      continue;
    }
    in_slots.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const std::size_t input = node.inputs[j];
      if (input == npos) continue;
      if (slots[input].empty()) slots[input].assign(nodes_[input].size, 0.0);
      in_slots[j] = &slots[input];
    }
    node.backward(slots[i], in_slots);
    slots[i] = {};
  }
  clear();
  return result;
}

Gradients backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw Error("backward() called without an active tape");
  return tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::span<const Tensor* const> inputs, BackwardFn fn) {
  check_finite(data, op);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    bool tracked = false;
    for (const Tensor* input : inputs) tracked = tracked || tape->tracks(*input);
    if (tracked) return tape->record(std::move(shape), std::move(data), inputs, std::move(fn));
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  return make_result(op, std::move(shape), std::move(data),
                     std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                     std::move(fn));
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

struct Broadcast {
  Shape shape;
  std::vector<std::size_t> a_index;  // empty when a maps 1:1
  std::vector<std::size_t> b_index;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast out;
  if (a == b) {
    out.shape = a;
    return out;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  out.shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_to_string(a) + " with " + shape_to_string(b));
    }
    out.shape[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  const std::size_t n = shape_size(out.shape);
  out.a_index.resize(n);
  out.b_index.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    out.a_index[flat] = ia;
    out.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out.shape[d]) break;
      ia -= sa[d] * counter[d];
      ib -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
  return out;
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Forward f,
                 GradA ga, GradB gb) {
  auto bc = std::make_shared<Broadcast>(broadcast(a.shape(), b.shape(), name));
  const std::size_t n = shape_size(bc->shape);
  const bool direct = bc->a_index.empty();
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = direct ? i : bc->a_index[i];
    const std::size_t ib = direct ? i : bc->b_index[i];
    out[i] = f(av[ia], bv[ib]);
  }
  Shape shape = bc->shape;
  return make_result(
      name, std::move(shape), std::move(out), {&a, &b},
      [bc, a, b, ga, gb, direct](const std::vector<double>& g,
                                 std::span<std::vector<double>* const> gin) {
        const auto& av = a.values();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ia = direct ? i : bc->a_index[i];
          const std::size_t ib = direct ? i : bc->b_index[i];
          if (gin[0]) (*gin[0])[ia] += g[i] * ga(av[ia], bv[ib]);
          if (gin[1]) (*gin[1])[ib] += g[i] * gb(av[ia], bv[ib]);
        }
      });
}

// Unary elementwise op; `deriv` receives (x, y).
template <typename Forward, typename Deriv>
Tensor unary_op(const char* name, const Tensor& t, Forward f, Deriv deriv) {
  std::vector<double> out(t.size());
  const auto& x = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(name, t.shape(), std::move(out), {&t},
                     [t, y, deriv](const std::vector<double>& g,
                                   std::span<std::vector<double>* const> gin) {
                       const auto& x = t.values();
                       auto& gx = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * deriv(x[i], (*y)[i]);
                       }
                     });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_deriv(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace

double softplus_value(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

// ---------------------------------------------------------------------------
// Linear algebra ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible extents " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {&a, &b},
                     [a, b, m, k, n](const std::vector<double>& g,
                                     std::span<std::vector<double>* const> gin) {
                       if (gin[0]) gemm_nt(g.data(), b.values().data(), gin[0]->data(), m, n, k);
                       if (gin[1]) gemm_tn(a.values().data(), g.data(), gin[1]->data(), m, k, n);
                     });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(2) != b.dim(1) ||
      (a.dim(0) != b.dim(0) && a.dim(0) != 1 && b.dim(0) != 1)) {
    throw ShapeError("batched_matmul: incompatible extents " +
                     shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  const std::size_t batch = std::max(a.dim(0), b.dim(0));
  const std::size_t m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const std::size_t a_step = a.dim(0) == 1 ? 0 : m * k;
  const std::size_t b_step = b.dim(0) == 1 ? 0 : k * n;
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(a.values().data() + i * a_step, b.values().data() + i * b_step,
            out.data() + i * m * n, m, k, n);
  }
  return make_result(
      "batched_matmul", {batch, m, n}, std::move(out), {&a, &b},
      [a, b, batch, m, k, n, a_step, b_step](const std::vector<double>& g,
                                              std::span<std::vector<double>* const> gin) {
        for (std::size_t i = 0; i < batch; ++i) {
          const double* gi = g.data() + i * m * n;
          if (gin[0]) {
            gemm_nt(gi, b.values().data() + i * b_step, gin[0]->data() + i * a_step, m, n, k);
          }
          if (gin[1]) {
            gemm_tn(a.values().data() + i * a_step, gi, gin[1]->data() + i * b_step, m, k, n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t rank = t.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw ShapeError("permute: axis count mismatch");
  for (std::size_t ax : axes) {
    if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis list");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = t.dim(axes[i]);

  std::vector<std::size_t> in_strides(rank);
  std::size_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = acc;
    acc *= t.dim(i);
  }
  // source[flat_out] = flat index into t
  auto source = std::make_shared<std::vector<std::size_t>>(t.size());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    (*source)[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += in_strides[axes[d]];
      if (counter[d] < out_shape[d]) break;
      src -= in_strides[axes[d]] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[(*source)[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {&t},
                     [source](const std::vector<double>& g,
                              std::span<std::vector<double>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[(*source)[i]] += g[i];
                     });
}

Tensor transpose(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[t.rank() - 1], axes[t.rank() - 2]);
  return permute(t, axes);
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_size(shape) != t.size()) {
    throw ShapeError("reshape: " + shape_to_string(t.shape()) + " -> " +
                     shape_to_string(shape));
  }
  return make_result("reshape", std::move(shape), t.values(), {&t},
                     [](const std::vector<double>& g,
                        std::span<std::vector<double>* const> gin) {
                       auto& gx = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors");
  const Shape& part_shape = parts.front().shape();
  for (const Tensor& p : parts) {
    if (p.shape() != part_shape) throw ShapeError("stack: shape mismatch");
  }
  const std::size_t part_size = parts.front().size();
  std::vector<double> out;
  out.reserve(part_size * parts.size());
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape{parts.size()};
  shape.insert(shape.end(), part_shape.begin(), part_shape.end());

  std::vector<const Tensor*> inputs;
  inputs.reserve(parts.size());
  for (const Tensor& p : parts) inputs.push_back(&p);
  return make_result("stack", std::move(shape), std::move(out), inputs,
                     [part_size](const std::vector<double>& g,
                                 std::span<std::vector<double>* const> gin) {
                       for (std::size_t p = 0; p < gin.size(); ++p) {
                         if (!gin[p]) continue;
                         auto& gp = *gin[p];
                         for (std::size_t i = 0; i < part_size; ++i) gp[i] += g[p * part_size + i];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& t, double factor) {
  return unary_op(
      "scale", t, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& t, double offset) {
  return unary_op(
      "add_scalar", t, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& t) {
  return unary_op(
      "exp", t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log1p(const Tensor& t) {
  return unary_op(
      "log1p", t, [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor abs(const Tensor& t) {
  return unary_op(
      "abs", t, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor softplus(const Tensor& t) {
  return unary_op("softplus", t, softplus_value,
                  [](double x, double) { return sigmoid(x); });
}

Tensor gelu(const Tensor& t) {
  return unary_op("gelu", t, gelu_value, [](double x, double) { return gelu_deriv(x); });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return make_result("sum", Shape{}, {acc}, {&t},
                     [](const std::vector<double>& g,
                        std::span<std::vector<double>* const> gin) {
                       for (double& v : *gin[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.size())); }

Tensor sum_axis(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("sum_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  const std::size_t n = t.dim(axis);
  std::vector<double> out(outer * inner, 0.0);
  const auto& x = t.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = x.data() + (o * n + j) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  Shape shape = t.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return make_result("sum_axis", std::move(shape), std::move(out), {&t},
                     [outer, n, inner](const std::vector<double>& g,
                                       std::span<std::vector<double>* const> gin) {
                       auto& gx = *gin[0];
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < n; ++j) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             gx[(o * n + j) * inner + i] += g[o * inner + i];
                           }
                         }
                       }
                     });
}

Tensor mean_axis(const Tensor& t, std::size_t axis) {
  return scale(sum_axis(t, axis), 1.0 / static_cast<double>(t.dim(axis)));
}

Tensor l2_normalize(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("l2_normalize needs rank >= 1");
  const std::size_t d = t.shape().back();
  const std::size_t rows = t.size() / d;
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(t.size());
  const auto& x = t.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += x[r * d + i] * x[r * d + i];
    const double norm = std::sqrt(sq);
    if (!(norm > kNormalizeEpsilon)) {
      throw DegenerateError("l2_normalize: vector " + std::to_string(r) +
                            " has near-zero norm");
    }
    (*norms)[r] = norm;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = x[r * d + i] / norm;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("l2_normalize", t.shape(), std::move(out), {&t},
                     [norms, y, d, rows](const std::vector<double>& g,
                                         std::span<std::vector<double>* const> gin) {
                       auto& gx = *gin[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t i = 0; i < d; ++i) dot += (*y)[r * d + i] * g[r * d + i];
                         for (std::size_t i = 0; i < d; ++i) {
                           gx[r * d + i] += (g[r * d + i] - (*y)[r * d + i] * dot) / (*norms)[r];
                         }
                       }
                     });
}

}  // namespace crt
