// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   pmt_acceptance                  all criteria
//   pmt_acceptance --criterion 2 4  a subset
//   pmt_acceptance --out DIR        keep experiment run directories (6, 8)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pmt/harness/config.hpp"
#include "pmt/harness/runner.hpp"
#include "pmt/verify/verify.hpp"

using namespace pmt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Folds a list of checks into one outcome, naming the failures.
Outcome fold(const std::vector<verify::CheckResult>& checks, double seconds, double budget) {
  Outcome o{true, ""};
  std::vector<std::string> failed;
  for (const auto& c : checks) {
    if (!c.passed) {
      failed.push_back(c.name + " (" + c.detail + ")");
      o.passed = false;
    }
  }
  o.detail = fmt::format("{} checks, {} failed, {:.2f} s (budget {:.0f} s)", checks.size(),
                         failed.size(), seconds, budget);
  if (seconds >= budget) {
    o.passed = false;
    o.detail += " over budget";
  }
  for (const auto& f : failed) o.detail += "\n    " + f;
  return o;
}

template <typename F>
Outcome timed_checks(F&& make, double budget) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<verify::CheckResult> checks = make();
  return fold(checks, seconds_since(start), budget);
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double mean_dice(const std::vector<harness::SummaryRow>& rows, const std::string& group) {
  for (const auto& r : rows) {
    if (r.group == group && r.metric == "dice") return r.mean;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

void print_run(const harness::RunResult& r) {
  fmt::print("    {:<24} seed {}  dice {:.4f}  ({:.0f} s)\n", r.spec.label, r.spec.seed,
             r.report.dice.mean, r.seconds);
  std::fflush(stdout);
}

// Default experiment: 200 samples of 64x64, 10% labeled, 2000 iterations,
// seeds 0, 1, 2.
harness::ExperimentConfig experiment_config() {
  harness::ExperimentConfig c = harness::load_config({}, {});
  c.seeds = {0, 1, 2};
  return c;
}

Outcome criterion6(const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = experiment_config();
  const auto data = harness::prepare_data(cfg);
  const auto results = harness::run_all(harness::compare_specs(cfg, out), data, jobs(), print_run);
  const auto rows = harness::summarize(results);
  fmt::print("{}", harness::summary_table(rows));
  const double secs = seconds_since(start);
  const double pmt = mean_dice(rows, "pmt");
  const double mt = mean_dice(rows, "mt_baseline");
  const double sup = mean_dice(rows, "supervised_baseline");
  const bool gain = pmt >= sup + 0.02;
  const bool vs_mt = pmt >= mt - 0.005;
  const bool budget = secs <= 15 * 60;
  return {gain && vs_mt && budget,
          fmt::format("dice pmt {:.4f}, mt {:.4f}, supervised {:.4f}; gain over supervised {:+.4f} "
                      "(need >= +0.02: {}), vs mt {:+.4f} (need >= -0.005: {}); {:.0f} s on {} "
                      "thread(s) (budget 900 s: {})",
                      pmt, mt, sup, pmt - sup, gain ? "ok" : "no", pmt - mt, vs_mt ? "ok" : "no",
                      secs, jobs(), budget ? "ok" : "no")};
}

Outcome criterion8(const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = experiment_config();
  const auto data = harness::prepare_data(cfg);
  const auto results =
      harness::run_all(harness::ablation_specs(cfg, out, false, true), data, jobs(), print_run);
  const auto rows = harness::summarize(results);
  fmt::print("{}", harness::summary_table(rows));
  std::vector<std::pair<double, std::string>> cells;
  for (const auto& r : rows) {
    if (r.metric == "dice") cells.emplace_back(r.mean, r.group);
  }
  std::sort(cells.begin(), cells.end(), std::greater<>());
  int rank = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].second == "lambda/20x10") rank = static_cast<int>(i) + 1;
  }
  std::string order;
  for (const auto& [d, g] : cells) order += fmt::format(" {}={:.4f}", g.substr(7), d);
  return {rank >= 1 && rank <= 3 && cells.size() == 9,
          fmt::format("(20,10) ranks {} of {} by mean dice ({:.0f} s);{}", rank, cells.size(),
                      seconds_since(start), order)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  std::string out;
  app.add_option("--criterion", selected, "criteria to run (default: all)")
      ->check(CLI::Range(1, 8));
  app.add_option("--out", out, "directory for experiment run outputs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::function<Outcome()>> criteria = {
      {1, [] { return timed_checks([] { return verify::gradient_suite(20); }, 60); }},
      {2, [] { return timed_checks([] { return verify::schedule_suite(); }, 5); }},
      {3, [] { return timed_checks([] { return verify::closed_form_suite(); }, 60); }},
      {4, [] { return timed_checks([] { return std::vector{verify::metric_oracle(50)}; }, 10); }},
      {5, [] { return timed_checks([] { return verify::gating_suite(); }, 600); }},
      {6, [&] { return criterion6(out); }},
      {7, [] { return timed_checks([] { return verify::determinism_suite(); }, 600); }},
      {8, [&] { return criterion8(out); }},
  };

  bool all = true;
  for (int id : selected) {
    Outcome o;
    try {
      o = criteria.at(id)();
    } catch (const std::exception& e) {
      o = {false, std::string("aborted: ") + e.what()};
    }
    fmt::print("CRITERION {} {}: {}\n", id, o.passed ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
    all = all && o.passed;
  }
  return all ? 0 : 1;
}
