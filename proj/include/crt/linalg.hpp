#pragma once

#include <vector>

#include "crt/tensor.hpp"

namespace crt {

/// Singular values of a 2-D tensor, descending. One-sided Jacobi on the
/// side with fewer columns; values only, not differentiable.
std::vector<double> singular_values(const Tensor& m);

}  // namespace crt
