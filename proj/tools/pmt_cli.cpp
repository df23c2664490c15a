// pmt: command-line front end for data generation, training, evaluation,
// ablations, comparisons, verification and report merging.
//
// Exit codes: 0 ok, 1 configuration error, 2 runtime abort, 3 verification
// failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/gradcore/kernels.hpp"
#include "pmt/harness/config.hpp"
#include "pmt/harness/runner.hpp"
#include "pmt/progressive/checkpoint.hpp"
#include "pmt/verify/verify.hpp"

namespace fs = std::filesystem;
using namespace pmt;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config JSON");
  cmd->add_option("--override", c.overrides, "dotted key=value, repeatable");
  cmd->add_option("--out", c.out, "output directory (default: config output_dir)");
  cmd->add_option("--seed", c.seeds, "seed(s), replacing the config's seed list");
}

harness::ExperimentConfig load(const Common& c) {
  harness::ExperimentConfig cfg = harness::load_config(c.config, c.overrides);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  return cfg;
}

fs::path out_dir(const Common& c, const harness::ExperimentConfig& cfg) {
  return c.out.empty() ? fs::path(cfg.output_dir) : fs::path(c.out);
}

int jobs_default() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

void print_run(const harness::RunResult& r) {
  fmt::print("{:<28} seed {:<4} dice {:.4f}  jaccard {:.4f}  hd95 {:.3f}  asd {:.3f}  ({:.1f} s)\n",
             r.spec.label, r.spec.seed, r.report.dice.mean, r.report.jaccard.mean,
             r.report.hd95.mean, r.report.asd.mean, r.seconds);
  std::fflush(stdout);
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load(c);
  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "data" : fs::path(c.out);
  const auto data = synthdata::generate(cfg.data);
  synthdata::write_dataset(data, dir);
  fmt::print("wrote {} samples ({}x{}) to {}\n", data.samples.size(), cfg.data.height,
             cfg.data.width, dir.string());
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, bool resume) {
  const auto cfg = load(c);
  const auto data = harness::prepare_data(cfg, data_dir);
  const fs::path out = out_dir(c, cfg);
  std::vector<harness::RunSpec> specs;
  for (std::uint64_t seed : cfg.seeds) {
    harness::RunSpec s;
    s.label = progressive::mode_name(cfg.trainer.mode);
    s.config = cfg;
    s.seed = seed;
    s.dir = out / "train" / s.label / fmt::format("seed_{}", seed);
    specs.push_back(s);
  }
  for (const auto& s : specs) print_run(harness::run_one(s, data, resume));
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_dir,
             const std::string& report_path) {
  auto cfg = load(c);
  const auto ck = progressive::read_checkpoint(checkpoint);
  const auto data = harness::prepare_data(cfg, data_dir);
  nlohmann::json echo = {{"checkpoint", checkpoint}, {"setup", ck.setup},
                         {"eval", segmetrics::to_json(cfg.eval)}};
  const auto report = segmetrics::evaluate_run(ck.pairs, data.dataset, data.split.test, cfg.eval, echo);
  const fs::path path = report_path.empty() ? fs::path(checkpoint).parent_path() / "eval_report.csv"
                                            : fs::path(report_path);
  report.write(path);
  fmt::print("dice {:.4f}  jaccard {:.4f}  hd95 {:.3f}  asd {:.3f}  ({} samples) -> {}\n",
             report.dice.mean, report.jaccard.mean, report.hd95.mean, report.asd.mean,
             report.samples.size(), path.string());
  return 0;
}

int run_grid(const std::vector<harness::RunSpec>& specs, const harness::ExperimentConfig& cfg,
             const std::string& data_dir, const fs::path& root, int jobs) {
  const auto data = harness::prepare_data(cfg, data_dir);
  const auto results = harness::run_all(specs, data, jobs, print_run);
  const auto rows = harness::summarize(results);
  fs::create_directories(root);
  write_text_file(root / "summary.csv", harness::summary_csv(rows));
  write_text_file(root / "summary.txt", harness::summary_table(rows));
  fmt::print("\n{}", harness::summary_table(rows));
  return 0;
}

int cmd_ablate(const Common& c, const std::string& grid, const std::string& data_dir, int jobs) {
  const auto cfg = load(c);
  const fs::path out = out_dir(c, cfg);
  const bool comp = grid == "components" || grid == "both";
  const bool lam = grid == "lambda" || grid == "both";
  return run_grid(harness::ablation_specs(cfg, out, comp, lam), cfg, data_dir, out / "ablate", jobs);
}

int cmd_compare(const Common& c, const std::string& data_dir, int jobs) {
  const auto cfg = load(c);
  const fs::path out = out_dir(c, cfg);
  return run_grid(harness::compare_specs(cfg, out), cfg, data_dir, out / "compare", jobs);
}

int cmd_verify(bool quick) {
  const auto results = verify::run_suite(quick);
  bool ok = true;
  for (const auto& r : results) {
    fmt::print("{} {:<34} {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
    ok = ok && r.passed;
  }
  fmt::print("{}: {} checks\n", ok ? "verify passed" : "verify FAILED", results.size());
  return ok ? 0 : kExitVerify;
}

int cmd_report(const std::string& results, bool curves) {
  const auto outcome = harness::report(results, curves);
  for (const auto& d : outcome.incomplete) fmt::print("incomplete run: {}\n", d);
  fmt::print("{}", harness::summary_table(outcome.rows));
  fmt::print("{} runs merged into {}\n", outcome.runs, (fs::path(results) / "summary.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive mean teachers: synthetic-data experiments"};
  app.require_subcommand(1);
  std::string backend;
  app.add_option("--backend", backend, "kernel backend: scalar or avx2 (default: best available)");

  Common gen, train, eval, ablate, compare;
  std::string data_dir, checkpoint, report_path, grid = "both", results_dir;
  bool resume = false, curves = false, quick = false;
  int jobs = jobs_default();

  auto* c_gen = app.add_subcommand("gen-data", "write a SEGV1 dataset");
  add_common(c_gen, gen);
  auto* c_train = app.add_subcommand("train", "train one configuration per seed");
  add_common(c_train, train);
  c_train->add_option("--data", data_dir, "SEGV1 dataset directory (default: generate)");
  c_train->add_flag("--resume", resume, "continue from an existing checkpoint.pmt");
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(c_eval, eval);
  c_eval->add_option("--checkpoint", checkpoint, "PMTCKPT1 file")->required();
  c_eval->add_option("--data", data_dir, "SEGV1 dataset directory (default: generate)");
  c_eval->add_option("--report", report_path, "report CSV path");
  auto* c_ablate = app.add_subcommand("ablate", "component toggles and lambda grid");
  add_common(c_ablate, ablate);
  c_ablate->add_option("--grid", grid, "components, lambda or both")
      ->check(CLI::IsMember({"components", "lambda", "both"}));
  c_ablate->add_option("--data", data_dir, "SEGV1 dataset directory");
  c_ablate->add_option("--jobs", jobs, "parallel runs");
  auto* c_compare = app.add_subcommand("compare", "pmt vs mt_baseline vs supervised_baseline");
  add_common(c_compare, compare);
  c_compare->add_option("--data", data_dir, "SEGV1 dataset directory");
  c_compare->add_option("--jobs", jobs, "parallel runs");
  auto* c_verify = app.add_subcommand("verify", "run the property and oracle suite");
  c_verify->add_flag("--quick", quick, "fewer random instances");
  auto* c_report = app.add_subcommand("report", "merge run directories into a summary");
  c_report->add_option("results", results_dir, "results directory")->required();
  c_report->add_flag("--curves", curves, "also write loss_curves.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (backend == "scalar") {
      kernels::set_backend(kernels::Backend::kScalar);
    } else if (backend == "avx2") {
      if (!kernels::avx2_available()) throw ConfigError("--backend avx2: not supported here");
      kernels::set_backend(kernels::Backend::kAvx2);
    } else if (!backend.empty()) {
      throw ConfigError("--backend must be scalar or avx2");
    }
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_train) return cmd_train(train, data_dir, resume);
    if (*c_eval) return cmd_eval(eval, checkpoint, data_dir, report_path);
    if (*c_ablate) return cmd_ablate(ablate, grid, data_dir, jobs);
    if (*c_compare) return cmd_compare(compare, data_dir, jobs);
    if (*c_verify) return cmd_verify(quick);
    if (*c_report) return cmd_report(results_dir, curves);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "aborted: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
