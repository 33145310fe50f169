#include "crt/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "crt/linalg.hpp"

namespace crt {

namespace {

void check_embeddings(const Tensor& e, const std::vector<int>& labels, const char* op) {
  if (e.rank() != 2) {
    throw ShapeError(std::string(op) + ": embeddings must be [n, d], got " +
                     shape_to_string(e.shape()));
  }
  if (labels.size() != e.dim(0)) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(e.dim(0)) + " embeddings");
  }
}

}  // namespace

Tensor normalize_rows(const Tensor& embeddings) {
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<double> out(embeddings.values());
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += out[i * d + j] * out[i * d + j];
    const double norm = std::sqrt(sq);
    if (!(norm > kNormalizeEpsilon)) {
      throw DegenerateError("embedding " + std::to_string(i) + " has near-zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norm;
  }
  return Tensor(embeddings.shape(), std::move(out));
}

RetrievalReport recall_at_k(const Tensor& embeddings, const std::vector<int>& labels,
                            const std::vector<std::size_t>& ks) {
  check_embeddings(embeddings, labels, "recall_at_k");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (n < 2) throw DegenerateError("recall_at_k needs at least two samples");
  for (std::size_t k : ks) {
    if (k < 1) throw ConfigError("recall cutoffs must be >= 1");
  }
  const Tensor unit = normalize_rows(embeddings);
  const auto& u = unit.values();

  // Rank of the first same-class neighbour per query; queries without one
  // never count as hits.
  constexpr std::size_t kNoPositive = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> first_hit(n, kNoPositive);
  std::vector<std::size_t> order(n - 1);
  std::vector<double> sims(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += u[q * d + c] * u[j * d + c];
      // Snapping to a 2^-36 grid keeps mathematically equal cosines tied
      // under round-off, so the index tie-break applies to them.
      sims[j] = std::ldexp(std::round(std::ldexp(dot, 36)), -36);
    }
    std::size_t pos = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q) order[pos++] = j;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return a < b;
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] == labels[q]) {
        first_hit[q] = r;
        break;
      }
    }
  }

  RetrievalReport report;
  report.ks = ks;
  for (std::size_t k : ks) {
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(),
                                    [k](std::size_t r) { return r != kNoPositive && r < k; });
    report.recalls.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  return report;
}

DensityReport embedding_space_density(const Tensor& embeddings, const std::vector<int>& labels) {
  check_embeddings(embeddings, labels, "embedding_space_density");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  const auto& e = embeddings.values();
  double intra = 0.0, inter = 0.0;
  std::size_t intra_pairs = 0, inter_pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = e[i * d + c] - e[j * d + c];
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      if (labels[i] == labels[j]) {
        intra += dist;
        ++intra_pairs;
      } else {
        inter += dist;
        ++inter_pairs;
      }
    }
  }
  if (intra_pairs == 0) throw DegenerateError("embedding_space_density: no same-class pairs");
  if (inter_pairs == 0) throw DegenerateError("embedding_space_density: no cross-class pairs");
  DensityReport r;
  r.d_intra = intra / static_cast<double>(intra_pairs);
  r.d_inter = inter / static_cast<double>(inter_pairs);
  r.density = r.d_inter > 0.0 ? r.d_intra / r.d_inter : 0.0;
  return r;
}

SpectralReport spectral_decay_from_values(std::vector<double> singular, std::size_t dim) {
  if (dim == 0) throw ShapeError("spectral_decay: zero dimension");
  if (singular.size() > dim) throw ShapeError("spectral_decay: more values than dimensions");
  singular.resize(dim, 0.0);
  double total = 0.0;
  for (double& s : singular) {
    if (!(s >= 0.0)) throw NumericalError("spectral_decay: negative or NaN singular value");
    s += kSpectrumSmoothing;
    total += s;
  }
  SpectralReport r;
  r.spectrum.reserve(dim);
  const double uniform = 1.0 / static_cast<double>(dim);
  for (double s : singular) {
    const double v = s / total;
    r.spectrum.push_back(v);
    r.rho += uniform * std::log(uniform / v);
  }
  // Rounding can push an exactly uniform spectrum a hair below zero.
  r.rho = std::max(r.rho, 0.0);
  return r;
}

SpectralReport spectral_decay(const Tensor& embeddings, bool center) {
  if (embeddings.rank() != 2) throw ShapeError("spectral_decay: embeddings must be [n, d]");
  const auto& e = embeddings.values();
  if (std::all_of(e.begin(), e.end(), [](double v) { return v == 0.0; })) {
    throw DegenerateError("spectral_decay: all-zero embedding matrix");
  }
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<double> m(e);
  if (center) {
    for (std::size_t c = 0; c < d; ++c) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += m[i * d + c];
      mu /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) m[i * d + c] -= mu;
    }
  }
  return spectral_decay_from_values(singular_values(Tensor({n, d}, std::move(m))), d);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string to_key_values(const RetrievalReport& r, const std::string& prefix) {
  std::ostringstream os;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    os << prefix << "recall_at_" << r.ks[i] << '=' << format_double(r.recalls[i]) << '\n';
  }
  return os.str();
}

std::string to_key_values(const DensityReport& r, const std::string& prefix) {
  std::ostringstream os;
  os << prefix << "d_intra=" << format_double(r.d_intra) << '\n'
     << prefix << "d_inter=" << format_double(r.d_inter) << '\n'
     << prefix << "density=" << format_double(r.density) << '\n';
  return os.str();
}

std::string to_key_values(const SpectralReport& r, const std::string& prefix) {
  std::ostringstream os;
  os << prefix << "spectral_decay=" << format_double(r.rho) << '\n';
  os << prefix << "spectrum=";
  for (std::size_t i = 0; i < r.spectrum.size(); ++i) {
    if (i) os << ',';
    os << format_double(r.spectrum[i]);
  }
  os << '\n';
  return os.str();
}

}  // namespace crt
