#include "crt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "crt/binary_io.hpp"

namespace crt {

void SyntheticSpec::validate() const {
  if (n_classes < 1 || samples_per_class < 1) {
    throw ConfigError("synthetic data needs at least one class and one sample per class");
  }
  if (height < 1 || width < 1 || dim < 1) throw ConfigError("synthetic extents must be positive");
  if (!(class_sep > 0.0)) throw ConfigError("class_sep must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (part_count < 1 || part_count > height * width) {
    throw ConfigError("part_count must lie in [1, H*W]");
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

std::vector<int> Dataset::classes() const {
  std::set<int> ids;
  for (const Sample& s : samples) ids.insert(s.label);
  return {ids.begin(), ids.end()};
}

Tensor Dataset::features(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ShapeError("no samples selected");
  const std::size_t per = height * width * dim;
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    const auto& v = samples.at(i).feature_map.features.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor({indices.size(), height * width, dim}, std::move(out));
}

Tensor Dataset::all_features() const {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return features(idx);
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed + kDatasetStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t cells = spec.height * spec.width;
  const std::size_t l = spec.dim;
  // Part vectors have expected norm about 2 * class_sep, independent of L.
  const double part_scale = kPartNormFactor * spec.class_sep / std::sqrt(static_cast<double>(l));

  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.dim = l;
  ds.samples.reserve(spec.n_classes * spec.samples_per_class);

  std::vector<std::vector<double>> parts(spec.part_count, std::vector<double>(l));
  std::vector<std::size_t> cell_order(cells);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (auto& part : parts) {
      for (double& v : part) v = part_scale * normal(rng);
    }
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      // Partial Fisher-Yates: the first part_count entries pick the cells.
      std::iota(cell_order.begin(), cell_order.end(), 0);
      for (std::size_t i = 0; i < spec.part_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cells - 1);
        std::swap(cell_order[i], cell_order[pick(rng)]);
      }
      std::vector<double> values(cells * l, 0.0);
      std::vector<std::uint8_t> mask(cells, 0);
      for (std::size_t i = 0; i < spec.part_count; ++i) {
        const std::size_t cell = cell_order[i];
        mask[cell] = 1;
        std::copy(parts[i].begin(), parts[i].end(), values.begin() + static_cast<std::ptrdiff_t>(cell * l));
      }
      if (spec.noise_sigma > 0.0) {
        for (std::size_t cell = 0; cell < cells; ++cell) {
          if (mask[cell]) continue;
          for (std::size_t j = 0; j < l; ++j) values[cell * l + j] += spec.noise_sigma * normal(rng);
        }
      }
      Sample sample;
      sample.feature_map = FeatureMap::from_values(spec.height, spec.width, l, std::move(values));
      sample.label = static_cast<int>(c);
      sample.part_cells = std::move(mask);
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_classes(const Dataset& dataset, double train_fraction) {
  const std::vector<int> ids = dataset.classes();
  if (ids.size() < 2) throw DegenerateError("split_classes needs at least two classes");
  const double wanted = std::round(train_fraction * static_cast<double>(ids.size()));
  if (!(wanted >= 1.0) || !(wanted <= static_cast<double>(ids.size() - 1))) {
    throw ConfigError("train fraction " + std::to_string(train_fraction) +
                      " leaves one side of the class split empty");
  }
  const std::set<int> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(wanted));
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->height = dataset.height;
    d->width = dataset.width;
    d->dim = dataset.dim;
  }
  for (const Sample& s : dataset.samples) {
    (train_ids.count(s.label) ? train : test).samples.push_back(s);
  }
  return {std::move(train), std::move(test)};
}

Batch sample_batch(const Dataset& train, std::size_t classes, std::size_t per_class, Rng& rng) {
  if (classes < 1 || per_class < 1) throw ConfigError("batch needs P >= 1 and Q >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.samples.size(); ++i) {
    by_class[train.samples[i].label].push_back(i);
  }
  std::vector<int> eligible;
  for (const auto& [id, idx] : by_class) {
    if (idx.size() >= per_class) eligible.push_back(id);
  }
  if (eligible.size() < classes) {
    throw DegenerateError("batch needs " + std::to_string(classes) + " classes with >= " +
                          std::to_string(per_class) + " samples, only " +
                          std::to_string(eligible.size()) + " available");
  }
  for (std::size_t i = 0; i < classes; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  Batch batch;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> pool = by_class[eligible[c]];
    for (std::size_t i = 0; i < per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      batch.indices.push_back(pool[i]);
      batch.labels.push_back(eligible[c]);
    }
  }
  batch.features = train.features(batch.indices);
  return batch;
}

// File layout, little-endian:
//   "CRTDATA\0"  u32 version  u32 H  u32 W  u32 L  u64 n
//   n*H*W*L f64 features, n i32 labels, n*H*W u8 part masks
namespace {
constexpr char kDatasetMagic[8] = {'C', 'R', 'T', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::vector<unsigned char> encode_dataset(const Dataset& dataset) {
  binary::Writer w;
  w.put_bytes(std::string_view(kDatasetMagic, sizeof(kDatasetMagic)));
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.dim));
  w.put<std::uint64_t>(dataset.samples.size());
  for (const Sample& s : dataset.samples) w.put_doubles(s.feature_map.features.data());
  for (const Sample& s : dataset.samples) w.put<std::int32_t>(s.label);
  for (const Sample& s : dataset.samples) {
    for (std::uint8_t m : s.part_cells) w.put<std::uint8_t>(m);
  }
  return w.bytes();
}

Dataset decode_dataset(std::span<const unsigned char> bytes) {
  binary::Reader r(bytes, "dataset");
  if (r.get_bytes(sizeof(kDatasetMagic)) != std::string(kDatasetMagic, sizeof(kDatasetMagic))) {
    throw IoError("dataset: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion) {
    throw IoError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.height = r.get<std::uint32_t>();
  ds.width = r.get<std::uint32_t>();
  ds.dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  const std::size_t cells = ds.height * ds.width;
  if (cells == 0 || ds.dim == 0) throw IoError("dataset: zero extents");
  if (r.remaining() != n * (cells * ds.dim * 8 + 4 + cells)) {
    throw IoError("dataset: payload size does not match header");
  }
  ds.samples.resize(n);
  for (Sample& s : ds.samples) {
    s.feature_map = FeatureMap::from_values(ds.height, ds.width, ds.dim, r.get_doubles(cells * ds.dim));
  }
  for (Sample& s : ds.samples) s.label = r.get<std::int32_t>();
  for (Sample& s : ds.samples) {
    s.part_cells.resize(cells);
    for (auto& m : s.part_cells) m = r.get<std::uint8_t>();
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  binary::write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(binary::read_file(path)); }

}  // namespace crt
