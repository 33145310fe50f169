#include "crt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace crt {

std::vector<double> singular_values(const Tensor& m) {
  if (m.rank() != 2) {
    throw ShapeError("singular_values needs a matrix, got " + shape_to_string(m.shape()));
  }
  for (double v : m.values()) {
    if (!std::isfinite(v)) throw NumericalError("singular_values: non-finite entry");
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  const bool flip = rows < cols;
  const std::size_t n = flip ? cols : rows;  // column length
  const std::size_t r = flip ? rows : cols;  // column count, min(rows, cols)

  // Column-major working copy so each column is contiguous.
  std::vector<double> a(n * r);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = m[i * cols + j];
      if (flip) {
        a[i * n + j] = v;
      } else {
        a[j * n + i] = v;
      }
    }
  }

  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < r; ++p) {
      double* cp = a.data() + p * n;
      for (std::size_t q = p + 1; q < r; ++q) {
        double* cq = a.data() + q * n;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::fabs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = cp[i], xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> values(r);
  for (std::size_t j = 0; j < r; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += a[j * n + i] * a[j * n + i];
    values[j] = std::sqrt(sq);
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

}  // namespace crt
