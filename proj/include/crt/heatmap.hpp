#pragma once

#include <string>
#include <vector>

#include "crt/encoder.hpp"

namespace crt {

/// Writes, per prototype k, the H x W correlation grid of `fm` against the
/// prototypes as `<stem>_kNN.csv` and as an 8-bit grayscale `<stem>_kNN.pgm`
/// (min-max normalized per prototype, mid-gray when constant). Returns the
/// CSV paths.
std::vector<std::string> export_heatmap(const FeatureMap& fm, const PrototypeSet& ps,
                                        const std::string& out_dir,
                                        const std::string& stem = "heatmap");

/// One prototype's grid as CSV rows.
std::string heatmap_csv(const Tensor& corr, std::size_t k);
/// One prototype's grid as a binary PGM (P5) image.
std::string heatmap_pgm(const Tensor& corr, std::size_t k);

}  // namespace crt
