#pragma once

// Dense double-precision tensors with tape-based reverse-mode
// differentiation.
//
// Ops are free functions. When a Tape is active on the calling thread (see
// Tape::Scope) and at least one operand is tracked, the result is appended
// to the tape together with its backward rule. Without an active tape ops
// only compute values.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "crt/errors.hpp"

namespace crt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Set only on op results: the tape that produced the value and its node.
  std::uint64_t tape_id = 0;
  std::size_t node = 0;
};
}  // namespace detail

class Tensor {
 public:
  /// Rank-0 tensor holding 0.
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  /// Leaf tensor that gradients are computed for.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }

  /// In-place access for optimizer updates. Only valid on leaf parameters.
  std::span<double> mutable_data();

  /// Untracked copy of the values.
  Tensor detach() const;

  /// True when both handles refer to the same storage.
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  const detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradients of a scalar loss with respect to the leaf parameters that took
/// part in computing it.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const;
  /// Gradient for `leaf`; a zero vector when the leaf did not influence the
  /// loss.
  std::vector<double> of(const Tensor& leaf) const;
  std::size_t count() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
};

/// Called with the upstream gradient of the op output and one destination
/// slot per operand, or nullptr for operands that are not tracked.
using BackwardFn = std::function<void(const std::vector<double>& grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes `tape` the active tape of this thread until destruction.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse pass from a single-element loss. Clears the tape afterwards.
  Gradients backward(const Tensor& loss);

  void clear();

  // Op plumbing.
  bool tracks(const Tensor& t) const;
  Tensor record(Shape shape, std::vector<double> data,
                std::span<const Tensor* const> inputs, BackwardFn fn);

 private:
  struct Node {
    std::vector<std::size_t> inputs;  // npos for untracked operands
    BackwardFn backward;
    std::size_t size = 0;
    std::shared_ptr<detail::TensorImpl> leaf;  // set for leaf nodes only
  };
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t node_of(const Tensor& t);

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const detail::TensorImpl*, std::size_t> leaf_nodes_;
};

/// Convenience: backward on the thread's active tape.
Gradients backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops

/// 2-D matrix product [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// 3-D batched product [B,m,k] x [B,k,n]; either batch extent may be 1 and is
/// then broadcast.
Tensor batched_matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double offset);

Tensor exp(const Tensor& t);
Tensor log1p(const Tensor& t);
Tensor abs(const Tensor& t);
/// log(1 + exp(x)), stable for large |x|. Gradient is the logistic sigmoid.
Tensor softplus(const Tensor& t);
/// Tanh approximation 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
Tensor gelu(const Tensor& t);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
/// Reduces `axis` away.
Tensor sum_axis(const Tensor& t, std::size_t axis);
Tensor mean_axis(const Tensor& t, std::size_t axis);

/// Normalizes along the last axis. Rejects vectors with norm <= 1e-12.
Tensor l2_normalize(const Tensor& t);

inline constexpr double kNormalizeEpsilon = 1e-12;

// Scalar kernels shared with tests.
double softplus_value(double x);
double gelu_value(double x);

}  // namespace crt
