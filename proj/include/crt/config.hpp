#pragma once

// Flat typed key=value run configuration.
//
//   # comment
//   seed = 7
//   data.n_classes = 20
//   branch1.prototypes = 8
//
// Keys are grouped by dotted namespaces: data.*, train.*, model.*,
// branch1.*, branch2.*, loss.*, eval.*, output.*. Unknown keys and
// malformed values are errors that name the line and key.

#include <cstdint>
#include <string>
#include <vector>

#include "crt/encoder.hpp"
#include "crt/synthetic.hpp"
#include "crt/trainer.hpp"

namespace crt {

struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticSpec data;
  double train_fraction = 0.5;
  TrainConfig train;
  std::size_t branch_count = 2;
  bool share_head_weights = false;
  BranchConfig branch1{8, 32, 32, true, 1.0};
  BranchConfig branch2{12, 32, 64, true, 0.1};
  std::vector<std::size_t> ks{1, 2, 4, 8};
  std::string output_dir = "out";

  /// Applies one key=value assignment.
  void set(const std::string& key, const std::string& value);
  /// Every key in a fixed order; parsing the result reproduces this config.
  std::string to_text() const;

  /// Copies the seed into the data and training sections, syncs branch MS
  /// weights into the loss weights, and validates every section.
  void finalize();

  std::vector<BranchConfig> branch_configs() const;
  ModelState make_model() const;

  static std::vector<std::string> keys();
};

/// Parses config text; diagnostics carry `source` and the line number.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Layers assignments from text or a file over an existing config.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source);
void apply_config_file(RunConfig& cfg, const std::string& path);

}  // namespace crt
