// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   crt_acceptance <path-to-crt-executable>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "crt/artifacts.hpp"
#include "crt/config.hpp"
#include "oracles.hpp"

using namespace crt;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool rounds_to(double v, double want) { return std::round(v * 1e6) / 1e6 == want; }

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int passed = 0;
  for (int seed = 0; seed < 10; ++seed) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.finalize();
    const auto [train_set, test_set] = split_classes(generate_dataset(cfg.data), cfg.train_fraction);
    Rng rng(cfg.seed + kBatchStream);
    const Batch batch = sample_batch(train_set, cfg.train.batch_classes, cfg.train.batch_per_class, rng);
    GradCheckOptions opt;
    opt.max_coords_per_group = 20;
    opt.seed = cfg.seed;
    const GradCheckReport r = grad_check(cfg.make_model(), batch, cfg.train.loss, opt);
    worst = std::max(worst, r.max_relative_error);
    passed += r.passed && r.max_relative_error < 1e-4 ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {passed == 10 && secs < 120.0,
          "max relative error " + fmt("%.3g", worst) + " over 10 seeds, 20 coordinates per group, " +
              fmt("%.1f", secs) + " s"};
}

Outcome residual_oracle_equivalence() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> ext(1, 5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = ext(rng), w = ext(rng), l = ext(rng), k = ext(rng);
    const auto x = uniform(h * w * l, rng);
    const auto c = uniform(k * l, rng);
    const ResidualCode rc = encode_residuals(FeatureMap(h, w, Tensor({h * w, l}, x)), PrototypeSet(Tensor({k, l}, c)));
    worst = std::max(worst, max_abs_diff(rc.codes.values(), oracle::residual_oracle(x, h * w, c, k, l)));
  }
  return {worst <= 1e-10, "max abs deviation " + fmt("%.3g", worst) + " on 100 instances"};
}

Outcome loss_oracles() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> size(1, 10), cls(1, 4);
  const LossWeights w;
  double ms_worst = 0.0, div_worst = 0.0, con_worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng), d = size(rng);
    const auto e1 = uniform(n * d, rng), e2 = uniform(n * d, rng);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(cls(rng)) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = pick(rng);
    const auto s1 = oracle::cosine_oracle(e1, n, d), s2 = oracle::cosine_oracle(e2, n, d);
    const SimilarityMatrix m1 = similarity_matrix(Tensor({n, d}, e1)), m2 = similarity_matrix(Tensor({n, d}, e2));
    ms_worst = std::max(ms_worst, std::abs(ms_loss(m1, y, w).item() -
                                           oracle::ms_oracle(s1, y, w.alpha, w.beta, w.margin, w.mining_epsilon)));
    double con = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) con += std::abs(s1[i] - s2[i]);
    con /= static_cast<double>(n * n);
    con_worst = std::max(con_worst, std::abs(consistency_loss(m1, m2).item() - con));
    div_worst = std::max(div_worst, std::abs(diversity_loss(PrototypeSet(Tensor({n, d}, e1))).item() -
                                             oracle::diversity_oracle(e1, n, d)));
  }
  const double div_ex = diversity_loss(PrototypeSet(Tensor({2, 2}, {1, 0, 1, 1}))).item();
  const double ms_ex = ms_loss(SimilarityMatrix{Tensor({2, 2}, {1, 0.5, 0.5, 1})}, {0, 0}, w).item();
  const double con_ex = consistency_loss(SimilarityMatrix{Tensor({2, 2}, {1, 0, 0, 1})},
                                         SimilarityMatrix{Tensor({2, 2}, {1, 0.5, 0.5, 1})})
                            .item();
  const bool examples = rounds_to(div_ex, 0.707107) && rounds_to(ms_ex, 0.656631) && rounds_to(con_ex, 0.25);
  const double worst = std::max({ms_worst, div_worst, con_worst});
  return {worst <= 1e-10 && examples,
          "max deviation ms " + fmt("%.3g", ms_worst) + ", diversity " + fmt("%.3g", div_worst) + ", consistency " +
              fmt("%.3g", con_worst) + "; worked values " + fmt("%.6f", div_ex) + " " + fmt("%.6f", ms_ex) + " " +
              fmt("%.6f", con_ex)};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> size(2, 12), dims(2, 4);
  int recall_mismatch = 0;
  const std::vector<std::size_t> ks{1, 2, 4, 8};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng), d = dims(rng);
    auto e = uniform(n * d, rng);
    // Every other trial draws from a coarse grid so that ties occur.
    if (trial % 2) {
      for (double& v : e) v = std::round(v);
      for (std::size_t i = 0; i < n; ++i) e[i * d] = e[i * d] == 0.0 ? 1.0 : e[i * d];
    }
    std::uniform_int_distribution<int> pick(0, 2);
    std::vector<int> y(n);
    for (int& v : y) v = pick(rng);
    recall_mismatch += recall_at_k(Tensor({n, d}, e), y, ks).recalls == oracle::recall_oracle(e, n, d, y, ks) ? 0 : 1;
  }
  const double density = embedding_space_density(Tensor({4, 2}, {0, 0, 0, 2, 10, 0, 10, 2}), {0, 0, 1, 1}).density;
  const double decay = spectral_decay_from_values({3, 1}, 2).rho;
  const double uniform_decay = spectral_decay(Tensor({2, 2}, {1, 0, 0, 1}), false).rho;
  const bool ok = recall_mismatch == 0 && std::abs(density - 0.198039) <= 1e-6 && std::abs(decay - 0.143841) <= 1e-6 &&
                  std::abs(uniform_decay) <= 1e-12;
  return {ok, "recall mismatches " + std::to_string(recall_mismatch) + "/100, density " + fmt("%.6f", density) +
                  ", decay " + fmt("%.6f", decay) + ", uniform decay " + fmt("%.2g", uniform_decay)};
}

struct SeedRun {
  BranchEvaluation crt;
  BranchEvaluation baseline;
  double crt_diversity = 0.0;
  double ablated_diversity = 0.0;
  std::size_t samples_with_part_peak = 0;
  std::size_t test_samples = 0;
  std::size_t part_peaks = 0;  // (sample, prototype) pairs peaking on a part cell
  std::size_t peaks = 0;
  double part_fraction = 0.0;  // part cells per grid
};

// Single CRT branch (K=8, D=32) against the mean-pooled linear baseline with
// the same loss, batches and step budget.
std::vector<SeedRun> comparison_runs(double& seconds) {
  const auto t0 = Clock::now();
  std::vector<SeedRun> runs;
  for (int seed = 0; seed < kSeeds; ++seed) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.branch_count = 1;
    cfg.finalize();
    const auto [train_set, test_set] = split_classes(generate_dataset(cfg.data), cfg.train_fraction);
    SeedRun run;

    const ModelState crt_model = train(cfg.make_model(), train_set, cfg.train).model;
    run.crt = evaluate(crt_model, test_set, {1}, train_set.classes())[0];
    run.crt_diversity = diversity_loss(crt_model.branches[0].prototypes).item();

    const ModelState base = ModelState::create_baseline(cfg.data.dim, cfg.branch1.embedding_dim, cfg.seed);
    run.baseline = evaluate(train(base, train_set, cfg.train).model, test_set, {1}, train_set.classes())[0];

    TrainConfig ablated = cfg.train;
    ablated.loss.diversity_weight = 0.0;
    run.ablated_diversity =
        diversity_loss(train(cfg.make_model(), train_set, ablated).model.branches[0].prototypes).item();

    const PrototypeSet& ps = crt_model.branches[0].prototypes;
    run.test_samples = test_set.samples.size();
    for (const Sample& s : test_set.samples) {
      const Tensor corr = correlation_map(s.feature_map, ps);
      const std::size_t cells = s.feature_map.positions();
      bool any = false;
      for (std::size_t k = 0; k < ps.count(); ++k) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cells; ++j) {
          if (corr[k * cells + j] > corr[k * cells + best]) best = j;
        }
        const bool on_part = s.part_cells[best] != 0;
        any |= on_part;
        run.part_peaks += on_part ? 1 : 0;
        ++run.peaks;
      }
      run.samples_with_part_peak += any ? 1 : 0;
      run.part_fraction = static_cast<double>(cfg.data.part_count) / static_cast<double>(cells);
    }
    runs.push_back(run);
  }
  seconds = seconds_since(t0);
  return runs;
}

Outcome recall_vs_baseline(const std::vector<SeedRun>& runs, double seconds) {
  int wins = 0;
  std::string per_seed;
  for (const SeedRun& r : runs) {
    const double a = r.crt.retrieval.recalls[0], b = r.baseline.retrieval.recalls[0];
    wins += a > b ? 1 : 0;
    per_seed += " " + fmt("%.3f", a) + "/" + fmt("%.3f", b);
  }
  return {wins >= 4 && seconds < 600.0, "CRT beats baseline Recall@1 in " + std::to_string(wins) +
                                            "/5 seeds (crt/base:" + per_seed + "), " + fmt("%.1f", seconds) + " s"};
}

Outcome density_and_decay(const std::vector<SeedRun>& runs) {
  int both = 0, denser = 0, flatter = 0;
  std::string per_seed;
  for (const SeedRun& r : runs) {
    const bool d = r.crt.density.density > r.baseline.density.density;
    const bool s = r.crt.spectral.rho < r.baseline.spectral.rho;
    denser += d ? 1 : 0;
    flatter += s ? 1 : 0;
    both += d && s ? 1 : 0;
    per_seed += " " + fmt("%.3f", r.crt.density.density) + "/" + fmt("%.3f", r.baseline.density.density) + "," +
                fmt("%.3f", r.crt.spectral.rho) + "/" + fmt("%.3f", r.baseline.spectral.rho);
  }
  return {both >= 4, "higher density in " + std::to_string(denser) + "/5, lower decay in " + std::to_string(flatter) +
                         "/5, both in " + std::to_string(both) + "/5 (density crt/base, decay crt/base:" + per_seed +
                         ")"};
}

Outcome diversity_ablation(const std::vector<SeedRun>& runs) {
  int higher = 0;
  double with = 0.0, without = 0.0;
  for (const SeedRun& r : runs) {
    higher += r.ablated_diversity > r.crt_diversity ? 1 : 0;
    with += r.crt_diversity / kSeeds;
    without += r.ablated_diversity / kSeeds;
  }
  return {higher >= 3, "ablated run has higher mean |cos| in " + std::to_string(higher) + "/5 seeds (mean " +
                           fmt("%.4f", without) + " without the term, " + fmt("%.4f", with) + " with it)"};
}

Outcome heatmap_peaks(const std::vector<SeedRun>& runs) {
  int seeds_ok = 0;
  std::size_t part_peaks = 0, peaks = 0;
  double part_fraction = 0.0;
  std::string per_seed;
  for (const SeedRun& r : runs) {
    // A seed passes when most test samples have a prototype peaking on a part cell.
    seeds_ok += 2 * r.samples_with_part_peak > r.test_samples ? 1 : 0;
    per_seed += " " + std::to_string(r.samples_with_part_peak) + "/" + std::to_string(r.test_samples);
    part_peaks += r.part_peaks;
    peaks += r.peaks;
    part_fraction = r.part_fraction;
  }
  const double chance_any = 1.0 - std::pow(1.0 - part_fraction, 8.0);
  return {seeds_ok >= 4,
          std::to_string(seeds_ok) + "/5 seeds; samples with a part-cell peak:" + per_seed + "; per-prototype peaks on " +
              "part cells " + fmt("%.3f", static_cast<double>(part_peaks) / static_cast<double>(peaks)) +
              " (chance " + fmt("%.3f", part_fraction) + ", chance of any of 8 " + fmt("%.3f", chance_any) + ")"};
}

int run_command(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const std::string& exe) {
  const fs::path root = fs::temp_directory_path() / "crt_acceptance_determinism";
  fs::remove_all(root);
  std::vector<fs::path> dirs{root / "a", root / "b"};
  for (const fs::path& d : dirs) {
    if (run_command(exe + " train --seed 7 --out " + d.string()) != 0 ||
        run_command(exe + " eval --seed 7 --out " + d.string() + " --checkpoint " + (d / "checkpoint.bin").string()) !=
            0) {
      return {false, "command failed in " + d.string()};
    }
  }
  std::string detail;
  bool same = true;
  for (const char* f : {"loss_log.csv", "report.txt", "embeddings.csv", "checkpoint.bin"}) {
    const bool eq = read_text_file((dirs[0] / f).string()) == read_text_file((dirs[1] / f).string());
    same &= eq;
    detail += std::string(detail.empty() ? "" : ", ") + f + (eq ? " identical" : " differs");
  }
  fs::remove_all(root);
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <path-to-crt>\n", argv[0]);
    return 2;
  }
  const std::string exe = argv[1];
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("criterion %d %s: %s - %s\n", id, name, o.passed ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.passed ? 0 : 1;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what()};
    }
  };

  report(1, "gradient correctness", guarded(gradient_correctness));
  report(2, "residual code oracle", guarded(residual_oracle_equivalence));
  report(3, "loss oracles", guarded(loss_oracles));
  report(4, "metric oracles", guarded(metric_oracles));

  double seconds = 0.0;
  std::vector<SeedRun> runs;
  std::string error;
  try {
    runs = comparison_runs(seconds);
  } catch (const std::exception& e) {
    error = std::string("error: ") + e.what();
  }
  auto from_runs = [&](const std::function<Outcome()>& f) { return error.empty() ? guarded(f) : Outcome{false, error}; };
  report(5, "recall versus baseline", from_runs([&] { return recall_vs_baseline(runs, seconds); }));
  report(6, "density and spectral decay versus baseline", from_runs([&] { return density_and_decay(runs); }));
  report(7, "diversity ablation", from_runs([&] { return diversity_ablation(runs); }));
  report(8, "determinism", guarded([&] { return determinism(exe); }));
  report(9, "heat-map peaks on part cells", from_runs([&] { return heatmap_peaks(runs); }));

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
