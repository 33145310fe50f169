#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "crt/synthetic.hpp"

using namespace crt;

namespace {

SyntheticSpec small_spec(std::size_t classes, std::size_t per_class) {
  SyntheticSpec s;
  s.n_classes = classes;
  s.samples_per_class = per_class;
  return s;
}

std::vector<std::vector<double>> sorted_cells(const Sample& s) {
  const std::size_t l = s.feature_map.dim();
  std::vector<std::vector<double>> cells;
  for (std::size_t j = 0; j < s.feature_map.positions(); ++j) {
    const auto& v = s.feature_map.features.values();
    cells.emplace_back(v.begin() + static_cast<long>(j * l), v.begin() + static_cast<long>((j + 1) * l));
  }
  std::sort(cells.begin(), cells.end());
  return cells;
}

}  // namespace

TEST(GenerateDataset, CountContract) {
  const Dataset ds = generate_dataset(small_spec(4, 3));
  ASSERT_EQ(ds.samples.size(), 12u);
  std::map<int, int> counts;
  for (int y : ds.labels()) ++counts[y];
  EXPECT_EQ(counts, (std::map<int, int>{{0, 3}, {1, 3}, {2, 3}, {3, 3}}));
  for (const Sample& s : ds.samples) {
    EXPECT_EQ(s.feature_map.height, 4u);
    EXPECT_EQ(s.feature_map.dim(), 32u);
    EXPECT_EQ(std::count(s.part_cells.begin(), s.part_cells.end(), 1), 3);
  }
}

TEST(GenerateDataset, Deterministic) {
  const SyntheticSpec spec = small_spec(5, 4);
  EXPECT_EQ(encode_dataset(generate_dataset(spec)), encode_dataset(generate_dataset(spec)));
  SyntheticSpec other = spec;
  other.seed = 1;
  EXPECT_NE(encode_dataset(generate_dataset(spec)), encode_dataset(generate_dataset(other)));
}

TEST(GenerateDataset, NoiselessFullGridSamplesMatchPerClass) {
  SyntheticSpec spec = small_spec(3, 4);
  spec.noise_sigma = 0.0;
  spec.part_count = spec.height * spec.width;
  const Dataset ds = generate_dataset(spec);
  for (const Sample& a : ds.samples) {
    for (const Sample& b : ds.samples) {
      if (a.label == b.label) {
        EXPECT_EQ(sorted_cells(a), sorted_cells(b));
      } else {
        EXPECT_NE(sorted_cells(a), sorted_cells(b));
      }
    }
  }
}

TEST(GenerateDataset, PartCellsCarryPartsExactly) {
  const Dataset ds = generate_dataset(small_spec(2, 5));
  // The same class vectors appear at the masked cells of every sample.
  for (int label : {0, 1}) {
    std::set<std::vector<double>> parts;
    for (const Sample& s : ds.samples) {
      if (s.label != label) continue;
      const std::size_t l = s.feature_map.dim();
      for (std::size_t j = 0; j < s.part_cells.size(); ++j) {
        if (!s.part_cells[j]) continue;
        const auto& v = s.feature_map.features.values();
        parts.emplace(v.begin() + static_cast<long>(j * l), v.begin() + static_cast<long>((j + 1) * l));
      }
    }
    EXPECT_EQ(parts.size(), 3u);
  }
}

TEST(GenerateDataset, NearestCentroidSeparatesTrainClasses) {
  SyntheticSpec spec;
  spec.noise_sigma = 0.05;
  const Dataset ds = generate_dataset(spec);
  const std::size_t l = ds.dim, cells = ds.height * ds.width;
  auto pooled = [&](const Sample& s) {
    std::vector<double> m(l, 0.0);
    for (std::size_t j = 0; j < cells; ++j) {
      for (std::size_t i = 0; i < l; ++i) m[i] += s.feature_map.features[j * l + i] / static_cast<double>(cells);
    }
    return m;
  };
  std::map<int, std::vector<double>> centroid;
  std::map<int, int> count;
  for (const Sample& s : ds.samples) {
    auto& c = centroid[s.label];
    c.resize(l, 0.0);
    const auto m = pooled(s);
    for (std::size_t i = 0; i < l; ++i) c[i] += m[i];
    ++count[s.label];
  }
  for (auto& [label, c] : centroid) {
    for (double& v : c) v /= count[label];
  }
  std::size_t correct = 0;
  for (const Sample& s : ds.samples) {
    const auto m = pooled(s);
    int best = -1;
    double best_d = 1e300;
    for (const auto& [label, c] : centroid) {
      double d = 0.0;
      for (std::size_t i = 0; i < l; ++i) d += (m[i] - c[i]) * (m[i] - c[i]);
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    correct += best == s.label ? 1 : 0;
  }
  EXPECT_EQ(correct, ds.samples.size());
}

TEST(GenerateDataset, InvalidSpecsRejected) {
  SyntheticSpec s;
  s.part_count = 17;
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = SyntheticSpec{};
  s.class_sep = 0.0;
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = SyntheticSpec{};
  s.height = 0;
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = SyntheticSpec{};
  s.noise_sigma = -1.0;
  EXPECT_THROW(generate_dataset(s), ConfigError);
}

TEST(SplitClasses, DisjointAndComplete) {
  const Dataset ds = generate_dataset(small_spec(10, 3));
  const auto [train, test] = split_classes(ds, 0.5);
  EXPECT_EQ(train.classes(), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(test.classes(), (std::vector<int>{5, 6, 7, 8, 9}));
  EXPECT_EQ(train.samples.size() + test.samples.size(), ds.samples.size());
  std::vector<int> both;
  const auto a = train.classes(), b = test.classes();
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
}

TEST(SplitClasses, MinimumAndRejections) {
  const auto [train, test] = split_classes(generate_dataset(small_spec(2, 2)), 0.5);
  EXPECT_EQ(train.classes().size(), 1u);
  EXPECT_EQ(test.classes().size(), 1u);
  EXPECT_THROW(split_classes(generate_dataset(small_spec(1, 2)), 0.5), DegenerateError);
  EXPECT_THROW(split_classes(generate_dataset(small_spec(4, 2)), 0.05), ConfigError);
  EXPECT_THROW(split_classes(generate_dataset(small_spec(4, 2)), 0.95), ConfigError);
}

TEST(SampleBatch, ShapeAndComposition) {
  const Dataset ds = generate_dataset(small_spec(20, 6));
  Rng rng(3);
  const Batch b = sample_batch(ds, 16, 5, rng);
  EXPECT_EQ(b.size(), 80u);
  EXPECT_EQ(b.features.shape(), (Shape{80, 16, 32}));
  std::map<int, std::set<std::size_t>> per_class;
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(ds.samples[b.indices[i]].label, b.labels[i]);
    per_class[b.labels[i]].insert(b.indices[i]);
  }
  EXPECT_EQ(per_class.size(), 16u);
  for (const auto& [label, idx] : per_class) EXPECT_EQ(idx.size(), 5u);
}

TEST(SampleBatch, MinimalAndReproducible) {
  const Dataset ds = generate_dataset(small_spec(5, 3));
  Rng a(9), b(9);
  const Batch x = sample_batch(ds, 2, 1, a);
  EXPECT_EQ(x.size(), 2u);
  EXPECT_NE(x.labels[0], x.labels[1]);
  EXPECT_EQ(x.indices, sample_batch(ds, 2, 1, b).indices);
  Rng c(1);
  EXPECT_THROW(sample_batch(ds, 6, 1, c), DegenerateError);
  EXPECT_THROW(sample_batch(ds, 2, 4, c), DegenerateError);
  EXPECT_THROW(sample_batch(ds, 0, 1, c), ConfigError);
}

TEST(DatasetFile, RoundTripAndCorruption) {
  const Dataset ds = generate_dataset(small_spec(3, 2));
  const auto path = (std::filesystem::temp_directory_path() / "crt_dataset_roundtrip.bin").string();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  EXPECT_EQ(encode_dataset(back), encode_dataset(ds));
  EXPECT_EQ(back.labels(), ds.labels());
  std::filesystem::remove(path);

  auto bytes = encode_dataset(ds);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "CRTDATA");
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_dataset(truncated), IoError);
  EXPECT_THROW(load_dataset("/nonexistent/dataset.bin"), IoError);
}
