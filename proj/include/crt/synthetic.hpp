#pragma once

// Part-based synthetic feature maps standing in for backbone features of
// real images. Each class owns `part_count` part vectors; every sample places
// them at random grid cells over a background of Gaussian noise. Part cells
// carry the part vector exactly; only background cells are noisy.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crt/encoder.hpp"

namespace crt {

struct SyntheticSpec {
  std::size_t n_classes = 20;
  std::size_t samples_per_class = 30;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t dim = 32;
  double class_sep = 3.0;
  double noise_sigma = 0.5;
  std::size_t part_count = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  FeatureMap feature_map;
  int label = 0;
  /// 1 for grid cells holding a class part, row-major over the grid.
  std::vector<std::uint8_t> part_cells;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<int> labels() const;
  /// Sorted distinct class ids.
  std::vector<int> classes() const;
  /// [n, H*W, L] features of the selected samples.
  Tensor features(const std::vector<std::size_t>& indices) const;
  Tensor all_features() const;
};

struct Batch {
  std::vector<std::size_t> indices;  // into the source dataset
  std::vector<int> labels;
  Tensor features;  // [P*Q, H*W, L]

  std::size_t size() const { return indices.size(); }
};

// Fixed offsets added to the run seed so each consumer draws from its own
// stream.
inline constexpr std::uint64_t kDatasetStream = 0;
inline constexpr std::uint64_t kBatchStream = 1;
inline constexpr std::uint64_t kInitStream = 2;

// Part entries are N(0, (kPartNormFactor * class_sep)^2 / L).
inline constexpr double kPartNormFactor = 2.0;

Dataset generate_dataset(const SyntheticSpec& spec);

/// Classes sorted by id; the first round(fraction * n) go to training.
std::pair<Dataset, Dataset> split_classes(const Dataset& dataset, double train_fraction);

/// P distinct classes, Q distinct samples from each.
Batch sample_batch(const Dataset& train, std::size_t classes, std::size_t per_class, Rng& rng);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

std::vector<unsigned char> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const unsigned char> bytes);

}  // namespace crt
