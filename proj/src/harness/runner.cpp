#include "pmt/harness/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"

namespace pmt::harness {
namespace fs = std::filesystem;
namespace {

constexpr const char* kMetrics[] = {"dice", "jaccard", "hd95", "asd"};

struct RunMeans {
  std::string label;
  double values[4];
};

std::vector<SummaryRow> summarize_means(const std::vector<RunMeans>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunMeans*>> groups;
  for (const auto& r : runs) {
    if (!groups.count(r.label)) order.push_back(r.label);
    groups[r.label].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& label : order) {
    for (int k = 0; k < 4; ++k) {
      std::vector<double> v;
      for (const RunMeans* r : groups[label]) v.push_back(r->values[k]);
      const auto a = segmetrics::aggregate(v);
      rows.push_back({label, kMetrics[k], a.mean, a.std, a.n});
    }
  }
  return rows;
}

std::string seed_dir(std::uint64_t seed) { return fmt::format("seed_{}", seed); }

double json_num(const nlohmann::json& j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

DataBundle prepare_data(const ExperimentConfig& config, const fs::path& dir) {
  DataBundle b;
  b.dataset = dir.empty() ? synthdata::generate(config.data) : synthdata::read_dataset(dir);
  b.split = synthdata::split(b.dataset, config.data.labeled_fraction, config.data.seed);
  return b;
}

RunResult run_one(const RunSpec& spec, const DataBundle& data, bool resume) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = spec.config;
  progressive::Trainer trainer(cfg.setup_for(spec.seed), data.dataset, data.split);
  const bool files = !spec.dir.empty();
  const fs::path ckpt = spec.dir / "checkpoint.pmt";
  nlohmann::json info = {{"label", spec.label},
                         {"mode", progressive::mode_name(cfg.trainer.mode)},
                         {"seed", spec.seed}};
  if (files) {
    fs::create_directories(spec.dir);
    ExperimentConfig effective = cfg;
    effective.seeds = {spec.seed};
    write_text_file(spec.dir / "config.json", to_json(effective).dump(2) + "\n");
    write_text_file(spec.dir / "run_info.json", info.dump(2) + "\n");
    if (resume && fs::exists(ckpt)) trainer.load_checkpoint(ckpt);
  }
  trainer.run([&](const progressive::Trainer& t) {
    if (files && cfg.checkpoint_every > 0 && t.iterations_done() % cfg.checkpoint_every == 0 &&
        !t.done()) {
      t.save_checkpoint(ckpt);
    }
  });

  RunResult r;
  r.spec = spec;
  r.history = trainer.state().history;
  nlohmann::json echo = info;
  echo["config"] = to_json(cfg);
  r.report = segmetrics::evaluate_run(trainer.state().pairs, data.dataset, data.split.test,
                                      cfg.eval, echo);
  if (files) {
    trainer.save_checkpoint(ckpt);
    write_text_file(spec.dir / "history.csv", progressive::history_csv(r.history));
    r.report.write(spec.dir / "report.csv");
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<RunResult> run_all(const std::vector<RunSpec>& specs, const DataBundle& data, int jobs,
                               const std::function<void(const RunResult&)>& done) {
  std::vector<RunResult> results(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        results[i] = run_one(specs[i], data);
        if (done) {
          std::lock_guard lock(report_mutex);
          done(results[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(specs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<RunSpec> compare_specs(const ExperimentConfig& base, const fs::path& out) {
  std::vector<RunSpec> specs;
  for (auto mode : {progressive::Mode::kPmt, progressive::Mode::kMtBaseline,
                    progressive::Mode::kSupervisedBaseline}) {
    for (std::uint64_t seed : base.seeds) {
      RunSpec s;
      s.label = progressive::mode_name(mode);
      s.config = base;
      s.config.trainer.mode = mode;
      s.seed = seed;
      if (!out.empty()) s.dir = out / "compare" / s.label / seed_dir(seed);
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

const std::vector<AblationRow>& component_rows() {
  static const std::vector<AblationRow> rows = {
      {"none", false, false, false},
      {"PLF", true, false, false},
      {"DDA", false, true, false},
      {"PLF+DDA", true, true, false},
      {"PLF+DDA+MT", true, true, true},
  };
  return rows;
}

std::vector<RunSpec> ablation_specs(const ExperimentConfig& base, const fs::path& out,
                                    bool components, bool lambdas) {
  std::vector<RunSpec> specs;
  auto add = [&](const std::string& label, ExperimentConfig c) {
    c.trainer.mode = progressive::Mode::kPmt;
    for (std::uint64_t seed : base.seeds) {
      RunSpec s;
      s.label = label;
      s.config = c;
      s.seed = seed;
      if (!out.empty()) s.dir = out / "ablate" / label / seed_dir(seed);
      specs.push_back(s);
    }
  };
  if (components) {
    for (const auto& row : component_rows()) {
      ExperimentConfig c = base;
      c.trainer.plf_on = row.plf_on;
      c.trainer.dda_on = row.dda_on;
      c.trainer.mt_on = row.mt_on;
      add("components/" + row.label, c);
    }
  }
  if (lambdas) {
    for (double l1 : kLambda1Grid) {
      for (double l2 : kLambda2Grid) {
        ExperimentConfig c = base;
        c.weights.lambda1_hat = l1;
        c.weights.lambda2_hat = l2;
        add(fmt::format("lambda/{:g}x{:g}", l1, l2), c);
      }
    }
  }
  return specs;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs) {
  std::vector<RunMeans> means;
  for (const auto& r : runs) {
    means.push_back({r.spec.label,
                     {r.report.dice.mean, r.report.jaccard.mean, r.report.hd95.mean,
                      r.report.asd.mean}});
  }
  return summarize_means(means);
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "group,metric,mean,std,n\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{}\n", r.group, r.metric, r.mean, r.std, r.n);
  }
  return out;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::vector<std::string> groups;
  for (const auto& r : rows) {
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  }
  std::size_t width = 5;
  for (const auto& g : groups) width = std::max(width, g.size());
  std::string out = fmt::format("{:<{}}  {:>17}  {:>17}  {:>17}  {:>17}  {:>4}\n", "group", width,
                                "dice", "jaccard", "hd95", "asd", "runs");
  for (const auto& g : groups) {
    out += fmt::format("{:<{}}", g, width);
    std::size_t n = 0;
    for (const char* metric : kMetrics) {
      for (const auto& r : rows) {
        if (r.group == g && r.metric == metric) {
          out += fmt::format("  {:>17}", fmt::format("{:.4f} ± {:.4f}", r.mean, r.std));
          n = std::max(n, r.n);
        }
      }
    }
    out += fmt::format("  {:>4}\n", n);
  }
  return out;
}

ReportOutcome report(const fs::path& results, bool curves) {
  ReportOutcome outcome;
  std::vector<RunMeans> means;
  std::string curve_csv = "run,iter,model,l_ce,l_dice,l_total\n";
  std::vector<fs::path> dirs;
  if (fs::exists(results)) {
    for (const auto& e : fs::recursive_directory_iterator(results)) {
      if (e.is_regular_file() && e.path().filename() == "run_info.json") {
        dirs.push_back(e.path().parent_path());
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const fs::path rep = dir / "report.json";
    if (!fs::exists(rep)) {
      outcome.incomplete.push_back(dir.string());
      continue;
    }
    try {
      const auto info = nlohmann::json::parse(read_text_file(dir / "run_info.json"));
      const auto j = nlohmann::json::parse(read_text_file(rep));
      const auto& agg = j.at("aggregate");
      RunMeans m{info.at("label").get<std::string>(), {}};
      for (int k = 0; k < 4; ++k) m.values[k] = json_num(agg.at(kMetrics[k]).at("mean"));
      means.push_back(m);
      ++outcome.runs;
      if (curves && fs::exists(dir / "history.csv")) {
        const std::string run = fs::relative(dir, results).generic_string();
        const std::string text = read_text_file(dir / "history.csv");
        std::size_t pos = text.find('\n');
        while (pos != std::string::npos && pos + 1 < text.size()) {
          const std::size_t end = text.find('\n', pos + 1);
          const std::string line = text.substr(pos + 1, end - pos - 1);
          std::vector<std::string> cols;
          std::size_t a = 0;
          for (std::size_t b; (b = line.find(',', a)) != std::string::npos; a = b + 1) {
            cols.push_back(line.substr(a, b - a));
          }
          cols.push_back(line.substr(a));
          if (cols.size() == 13) {
            curve_csv += fmt::format("{},{},{},{},{},{}\n", run, cols[0], cols[1], cols[5],
                                     cols[6], cols[10]);
          }
          pos = end;
        }
      }
    } catch (const std::exception& e) {
      outcome.incomplete.push_back(dir.string() + " (" + e.what() + ")");
    }
  }
  outcome.rows = summarize_means(means);
  fs::create_directories(results);
  write_text_file(results / "summary.csv", summary_csv(outcome.rows));
  write_text_file(results / "summary.txt", summary_table(outcome.rows));
  if (curves) write_text_file(results / "loss_curves.csv", curve_csv);
  return outcome;
}

}  // namespace pmt::harness
