#pragma once

// Property and oracle checks shared by `pmt verify`, the acceptance binary
// and the unit tests. Each check returns a result instead of throwing, so a
// suite can report every failure in one pass.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmt/gradcore/tensor.hpp"
#include "pmt/progressive/trainer.hpp"
#include "pmt/synthdata/synthdata.hpp"

namespace pmt::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double value = 0;  // headline number (max error, count, ...)
};

// ---- finite differences ----------------------------------------------------

// Relative error used by every gradient check: |a - n| / max(|a|, |n|, 1e-3).
double relative_error(double analytic, double numeric);

using GradFn = std::function<TensorD(const std::vector<TensorD>&)>;

struct GradCase {
  std::string name;
  std::vector<TensorD> inputs;  // every input is differentiated
  GradFn fn;
};

// Compares backward() against central differences (step h) of
// L = sum(fn(inputs) * R) for a fixed random R. Returns the max relative
// error over all input elements.
double gradient_error(const GradCase& c, std::uint64_t seed, double h = 1e-5);

// Random instance `instance` of the named op; the names are gradient_ops().
GradCase make_op_case(const std::string& op, std::uint64_t instance);
const std::vector<std::string>& gradient_ops();

// Tiny network + full supervised/alignment/consistency loss, differentiated
// with respect to every parameter.
GradCase make_composite_case(std::uint64_t instance);

// ---- individual checks -----------------------------------------------------

// Every op over `instances` random cases (max rel err < 1e-4, step 1e-5),
// then the composite (< 1e-3, step 1e-6).
std::vector<CheckResult> gradient_suite(int instances);

// Schedule simulation for one (n, B): contiguous per-model consumption,
// replayed batches equal the stream, buffer bounded, end-of-round gaps equal
// B/(n-1), over at least `rounds` rounds.
CheckResult schedule_simulation(int n_models, int buffer_len, long rounds);
std::vector<CheckResult> schedule_suite();

std::vector<CheckResult> closed_form_suite();

// Fast HD95/ASD against the all-pairs oracle and Dice/Jaccard against
// counting on `pairs` random 16x16 mask pairs.
CheckResult metric_oracle(int pairs, std::uint64_t seed = 7);

// Small but complete configuration used by the training-based checks.
struct MiniRun {
  progressive::TrainerSetup setup;
  synthdata::Dataset data;
  synthdata::Split split;
};
MiniRun mini_run(long t_max = 60);

// Every plf_pass = 0 row of a full run has zero lambda1/beta contribution,
// and each ablation toggle removes exactly its own term.
std::vector<CheckResult> gating_suite();

// Same config+seed twice gives identical history/report bytes; a run resumed
// from a mid-run checkpoint equals the continuous run bitwise.
std::vector<CheckResult> determinism_suite();

// Everything above. `quick` lowers the random instance counts.
std::vector<CheckResult> run_suite(bool quick = false);

}  // namespace pmt::verify
