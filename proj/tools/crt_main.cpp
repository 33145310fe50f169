// crt: command-line driver for data generation, training, evaluation and
// diagnostics.
//
//   crt gen-data  [--config F] [--set k=v]... [--seed N] [--out DIR]
//   crt train     [...] [--data dataset.bin]
//   crt eval      [...] --checkpoint ckpt.bin [--data dataset.bin]
//   crt gradcheck [...] [--checkpoint ckpt.bin] [--coords N]
//   crt analyze   [...] --embeddings embeddings.csv
//   crt heatmap   [...] [--checkpoint ckpt.bin] [--sample I] [--branch B]
//
// Exit codes: 0 success, 1 usage, 2 config or input files, 3 numerical
// failure (including a gradient check over tolerance).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crt/artifacts.hpp"
#include "crt/config.hpp"
#include "crt/errors.hpp"
#include "crt/heatmap.hpp"
#include "crt/synthetic.hpp"
#include "crt/trainer.hpp"

namespace fs = std::filesystem;
using namespace crt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

struct Paths {
  std::string data;
  std::string checkpoint;
  std::string embeddings;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "key=value config file");
  cmd->add_option("--set", common.overrides, "override one key (key=value), repeatable");
  cmd->add_option("--seed", common.seed, "run seed (falls back to CRT_SEED, then 0)");
  cmd->add_option("--out", common.out_dir, "output directory (overrides output.dir)");
}

// Precedence, lowest first: defaults, CRT_SEED, config file, --set, --seed, --out.
RunConfig resolve_config(const CommonOptions& common) {
  RunConfig cfg;
  if (const char* env = std::getenv("CRT_SEED")) cfg.set("seed", env);
  if (!common.config_path.empty()) apply_config_file(cfg, common.config_path);
  for (const std::string& o : common.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set '" + o + "': expected key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (common.seed) cfg.seed = *common.seed;
  if (!common.out_dir.empty()) cfg.output_dir = common.out_dir;
  cfg.finalize();
  return cfg;
}

std::string prepare_output(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir + ": " + ec.message());
  write_text_file((fs::path(cfg.output_dir) / "config.effective").string(), cfg.to_text());
  return cfg.output_dir;
}

std::string out_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// The full dataset, either loaded or generated from the config.
Dataset obtain_dataset(const RunConfig& cfg, const std::string& data_path) {
  if (data_path.empty()) return generate_dataset(cfg.data);
  return load_dataset(data_path);
}

Batch gradcheck_batch(const RunConfig& cfg, const Dataset& train) {
  Rng rng(cfg.seed + kBatchStream);
  return sample_batch(train, cfg.train.batch_classes, cfg.train.batch_per_class, rng);
}

int run_gen_data(const RunConfig& cfg) {
  const std::string dir = prepare_output(cfg);
  const Dataset ds = generate_dataset(cfg.data);
  const std::string path = out_path(dir, "dataset.bin");
  save_dataset(ds, path);
  std::cout << "wrote " << ds.samples.size() << " samples to " << path << '\n';
  return 0;
}

int run_train(const RunConfig& cfg, const Paths& paths) {
  const std::string dir = prepare_output(cfg);
  const auto [train_set, test_set] = split_classes(obtain_dataset(cfg, paths.data), cfg.train_fraction);
  Trainer trainer(cfg.make_model(), train_set, cfg.train);
  const std::vector<StepRecord> history = trainer.run();
  save_checkpoint(trainer.checkpoint(), out_path(dir, "checkpoint.bin"));
  write_text_file(out_path(dir, "loss_log.csv"), loss_log_csv(history));
  const std::vector<double> means = epoch_means(history, cfg.train.steps_per_epoch);
  if (!means.empty()) {
    std::cout << "epochs=" << means.size() << " first_epoch_loss=" << format_double(means.front())
              << " last_epoch_loss=" << format_double(means.back()) << '\n';
  }
  std::cout << "wrote " << out_path(dir, "checkpoint.bin") << '\n';
  return 0;
}

int run_eval(const RunConfig& cfg, const Paths& paths) {
  if (paths.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const std::string dir = prepare_output(cfg);
  const Checkpoint ckpt = load_checkpoint(paths.checkpoint);
  const auto [train_set, test_set] = split_classes(obtain_dataset(cfg, paths.data), cfg.train_fraction);
  const auto evals = evaluate(ckpt.model, test_set, cfg.ks, train_set.classes());
  write_text_file(out_path(dir, "report.txt"), evaluation_report(evals));
  const std::vector<Tensor> embeddings = embed_dataset(ckpt.model, test_set);
  write_text_file(out_path(dir, "embeddings.csv"), embeddings_csv(embeddings.front(), test_set.labels()));
  std::cout << evaluation_report(evals);
  return 0;
}

int run_gradcheck(const RunConfig& cfg, const Paths& paths, std::size_t coords) {
  const std::string dir = prepare_output(cfg);
  const ModelState model = paths.checkpoint.empty() ? cfg.make_model() : load_checkpoint(paths.checkpoint).model;
  const auto [train_set, test_set] = split_classes(obtain_dataset(cfg, paths.data), cfg.train_fraction);
  GradCheckOptions options;
  options.max_coords_per_group = coords;
  options.seed = cfg.seed;
  const GradCheckReport report = grad_check(model, gradcheck_batch(cfg, train_set), cfg.train.loss, options);
  write_text_file(out_path(dir, "gradcheck.txt"), report.to_text());
  std::cout << report.to_text();
  return report.passed ? 0 : kExitNumerical;
}

int run_analyze(const RunConfig& cfg, const Paths& paths) {
  if (paths.embeddings.empty()) throw ConfigError("analyze needs --embeddings");
  const std::string dir = prepare_output(cfg);
  const std::string text = analysis_report(load_embeddings_csv(paths.embeddings), cfg.ks);
  write_text_file(out_path(dir, "analysis.txt"), text);
  std::cout << text;
  return 0;
}

int run_heatmap(const RunConfig& cfg, const Paths& paths, std::size_t sample, std::size_t branch) {
  const std::string dir = prepare_output(cfg);
  const ModelState model = paths.checkpoint.empty() ? cfg.make_model() : load_checkpoint(paths.checkpoint).model;
  if (model.kind != ModelState::Kind::crt) throw ConfigError("heatmap needs a coded residual model");
  if (branch < 1 || branch > model.branches.size()) {
    throw ConfigError("--branch must lie in [1, " + std::to_string(model.branches.size()) + "]");
  }
  const auto [train_set, test_set] = split_classes(obtain_dataset(cfg, paths.data), cfg.train_fraction);
  if (sample >= test_set.samples.size()) {
    throw ConfigError("--sample " + std::to_string(sample) + " out of range, test set has " +
                      std::to_string(test_set.samples.size()) + " samples");
  }
  const Sample& s = test_set.samples[sample];
  const auto files = export_heatmap(s.feature_map, model.branches[branch - 1].prototypes, dir, "heatmap");
  std::string mask = "label=" + std::to_string(s.label) + "\npart_cells=";
  for (std::size_t i = 0; i < s.part_cells.size(); ++i) {
    if (i) mask += ',';
    mask += std::to_string(s.part_cells[i]);
  }
  write_text_file(out_path(dir, "heatmap_sample.txt"), mask + "\n");
  std::cout << "wrote " << files.size() << " heat maps to " << dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coded residual transform metric-learning engine"};
  app.require_subcommand(1);

  CommonOptions common;
  Paths paths;
  std::size_t coords = 32;
  std::size_t sample = 0;
  std::size_t branch = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic part-based dataset");
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint and loss log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out classes");
  auto* grad = app.add_subcommand("gradcheck", "compare autodiff with central finite differences");
  auto* analyze = app.add_subcommand("analyze", "density and spectral reports for an embedding dump");
  auto* heat = app.add_subcommand("heatmap", "export per-prototype correlation grids for one sample");
  for (auto* cmd : {gen, train, eval, grad, analyze, heat}) add_common(cmd, common);
  for (auto* cmd : {train, eval, grad, heat}) {
    cmd->add_option("--data", paths.data, "dataset file from gen-data (default: generate)");
  }
  eval->add_option("--checkpoint", paths.checkpoint, "checkpoint from train")->required();
  grad->add_option("--checkpoint", paths.checkpoint, "checkpoint (default: freshly initialized model)");
  heat->add_option("--checkpoint", paths.checkpoint, "checkpoint (default: freshly initialized model)");
  grad->add_option("--coords", coords, "coordinates sampled per parameter group, 0 for all");
  analyze->add_option("--embeddings", paths.embeddings, "embedding CSV from eval")->required();
  heat->add_option("--sample", sample, "index into the test split");
  heat->add_option("--branch", branch, "branch whose prototypes are used");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    const RunConfig cfg = resolve_config(common);
    if (*gen) return run_gen_data(cfg);
    if (*train) return run_train(cfg, paths);
    if (*eval) return run_eval(cfg, paths);
    if (*grad) return run_gradcheck(cfg, paths, coords);
    if (*analyze) return run_analyze(cfg, paths);
    if (*heat) return run_heatmap(cfg, paths, sample, branch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitUsage;
}
