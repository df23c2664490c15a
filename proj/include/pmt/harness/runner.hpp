#pragma once

// Training/evaluation runs and the experiment grids built from them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pmt/harness/config.hpp"
#include "pmt/progressive/trainer.hpp"
#include "pmt/segmetrics/segmetrics.hpp"
#include "pmt/synthdata/synthdata.hpp"

namespace pmt::harness {

// Generated (or loaded) data plus its split, shared read-only by runs.
struct DataBundle {
  synthdata::Dataset dataset;
  synthdata::Split split;
};

// Generates from config.data, or reads a SEGV1 directory when `dir` is set.
DataBundle prepare_data(const ExperimentConfig& config, const std::filesystem::path& dir = {});

struct RunSpec {
  std::string label;  // group name in summaries, e.g. "pmt" or "lambda/20x10"
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::filesystem::path dir;  // empty = keep everything in memory
};

struct RunResult {
  RunSpec spec;
  segmetrics::MetricReport report;
  std::vector<progressive::HistoryRow> history;
  double seconds = 0;
};

// Trains one configuration and evaluates the averaged students on the test
// split. With a directory: writes config.json, run_info.json, history.csv,
// report.csv/.json and checkpoint.pmt (also every checkpoint_every
// iterations), and resumes from an existing checkpoint.pmt when `resume`.
RunResult run_one(const RunSpec& spec, const DataBundle& data, bool resume = false);

// Runs independent specs on `jobs` worker threads; results keep spec order.
std::vector<RunResult> run_all(const std::vector<RunSpec>& specs, const DataBundle& data,
                               int jobs, const std::function<void(const RunResult&)>& done = {});

// One spec per (mode, seed) for pmt, mt_baseline and supervised_baseline.
std::vector<RunSpec> compare_specs(const ExperimentConfig& base, const std::filesystem::path& out);

// The five component rows (PLF, DDA, MT toggles) and/or the 3x3 lambda grid.
struct AblationRow {
  std::string label;
  bool plf_on, dda_on, mt_on;
};
const std::vector<AblationRow>& component_rows();
inline constexpr double kLambda1Grid[] = {2.0, 20.0, 200.0};
inline constexpr double kLambda2Grid[] = {1.0, 10.0, 100.0};

std::vector<RunSpec> ablation_specs(const ExperimentConfig& base, const std::filesystem::path& out,
                                    bool components, bool lambdas);

// Mean and sample standard deviation of each metric's per-run mean, grouped
// by label.
struct SummaryRow {
  std::string group;
  std::string metric;
  double mean = 0;
  double std = 0;
  std::size_t n = 0;
};

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string summary_table(const std::vector<SummaryRow>& rows);

struct ReportOutcome {
  std::vector<SummaryRow> rows;
  std::vector<std::string> incomplete;  // run directories without a report
  std::size_t runs = 0;
};

// Scans `results` for run directories and writes summary.csv and
// summary.txt there (and loss_curves.csv when `curves`).
ReportOutcome report(const std::filesystem::path& results, bool curves);

}  // namespace pmt::harness
