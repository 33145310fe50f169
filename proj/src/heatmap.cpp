#include "crt/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "crt/metrics.hpp"

namespace crt {

std::string heatmap_csv(const Tensor& corr, std::size_t k) {
  const std::size_t h = corr.dim(1), w = corr.dim(2);
  std::string out;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (c) out += ',';
      out += format_double(corr[(k * h + r) * w + c]);
    }
    out += '\n';
  }
  return out;
}

std::string heatmap_pgm(const Tensor& corr, std::size_t k) {
  const std::size_t h = corr.dim(1), w = corr.dim(2);
  const auto first = corr.values().begin() + static_cast<std::ptrdiff_t>(k * h * w);
  const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(h * w));
  const double min = *lo, range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = first[static_cast<std::ptrdiff_t>(i)];
    const long level = range > 0.0 ? std::lround(255.0 * (v - min) / range) : 128;
    out += static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0L, 255L)));
  }
  return out;
}

std::vector<std::string> export_heatmap(const FeatureMap& fm, const PrototypeSet& ps,
                                        const std::string& out_dir, const std::string& stem) {
  const Tensor corr = correlation_map(fm, ps);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  auto write = [](const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << content;
  };
  for (std::size_t k = 0; k < ps.count(); ++k) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_k%02zu", k);
    const std::string base = (std::filesystem::path(out_dir) / (stem + suffix)).string();
    write(base + ".csv", heatmap_csv(corr, k));
    write(base + ".pgm", heatmap_pgm(corr, k));
    paths.push_back(base + ".csv");
  }
  return paths;
}

}  // namespace crt
