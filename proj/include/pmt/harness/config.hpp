#pragma once

// Experiment configuration: one JSON document with the sections
// data, model, trainer, weights, eval, seeds, output_dir.
//
// Loading starts from the defaults, overlays the file, then applies
// --override key=value pairs. Unknown keys anywhere are rejected, and every
// error message names the offending dotted key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmt/losses/losses.hpp"
#include "pmt/progressive/trainer.hpp"
#include "pmt/segmetrics/segmetrics.hpp"
#include "pmt/synthdata/synthdata.hpp"

namespace pmt::harness {

struct ExperimentConfig {
  synthdata::DataGenConfig data;
  progressive::ModelSection model;
  progressive::TrainerConfig trainer;
  losses::LossWeights weights;
  segmetrics::EvalConfig eval;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs";
  long checkpoint_every = 0;  // iterations between checkpoints, 0 = final only

  // Per-section checks plus cross-field consistency.
  void validate() const;
  progressive::TrainerSetup setup_for(std::uint64_t seed) const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);

// `key=value` with a dotted key that must already exist in `doc`. The value
// is parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Defaults, then the file (if non-empty), then the overrides.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);

}  // namespace pmt::harness
