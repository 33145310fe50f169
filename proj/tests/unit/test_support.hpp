#pragma once

// Shared helpers for the unit tests: random tensors and a finite-difference
// gradient checker that is independent of the library's grad_check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crt/tensor.hpp"

namespace crt::testing {

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                                          double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor random_param(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::parameter(shape, uniform_values(shape_size(shape), rng, lo, hi));
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor(shape, uniform_values(shape_size(shape), rng, lo, hi));
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest relative error |a - n| / max(|a|, |n|, floor) between autodiff and
// central differences over every coordinate of every input.
inline double max_fd_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5,
                           double floor = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Gradients g = tape.backward(f(inputs));
    for (const Tensor& t : inputs) analytic.push_back(g.of(t));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t c = 0; c < inputs[i].size(); ++c) {
      std::vector<Tensor> plus, minus;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        std::vector<double> vp = inputs[j].values(), vm = inputs[j].values();
        if (j == i) {
          vp[c] += step;
          vm[c] -= step;
        }
        plus.emplace_back(inputs[j].shape(), std::move(vp));
        minus.emplace_back(inputs[j].shape(), std::move(vm));
      }
      const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * step);
      const double a = analytic[i][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Weighted sum that turns any tensor into a scalar with non-uniform upstream
// gradients.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, Tensor(t.shape(), uniform_values(t.size(), rng, 0.5, 1.5))));
}

}  // namespace crt::testing
