#include "pmt/harness/config.hpp"

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/core/json_fields.hpp"

namespace pmt::harness {

void ExperimentConfig::validate() const {
  model.net.validate();
  if (!(model.ema_alpha >= 0.0 && model.ema_alpha <= 1.0)) {
    throw ConfigError("model.ema_alpha must be in [0, 1]");
  }
  data.validate(model.net.downsample_factor());
  trainer.validate();
  losses::LossWeights w = weights;
  w.t_max = trainer.t_max;
  w.validate();
  eval.validate();
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  // labeled count >= 1; split() reports the exact numbers
  synthdata::split(static_cast<std::size_t>(data.count), data.labeled_fraction, data.seed);
  const std::size_t factor = model.net.downsample_factor();
  if (eval.sliding) {
    const int wh = eval.window_h ? eval.window_h : data.height;
    const int ww = eval.window_w ? eval.window_w : data.width;
    if (wh > data.height || ww > data.width) throw ConfigError("eval.window_h/window_w exceed the image");
    if (wh % factor || ww % factor) {
      throw ConfigError(fmt::format("eval window {}x{} not divisible by {}", wh, ww, factor));
    }
  }
}

progressive::TrainerSetup ExperimentConfig::setup_for(std::uint64_t seed) const {
  progressive::TrainerSetup s;
  s.config = trainer;
  s.config.seed = seed;
  s.weights = weights;
  s.weights.t_max = trainer.t_max;
  s.net = model.net;
  s.ema_alpha = model.ema_alpha;
  return s;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"data", synthdata::to_json(c.data)},
          {"model", progressive::to_json(c.model)},
          {"trainer", progressive::to_json(c.trainer)},
          {"weights", progressive::to_json(c.weights)},
          {"eval", segmetrics::to_json(c.eval)},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"checkpoint_every", c.checkpoint_every}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  JsonFields f(j, "");
  if (f.has("data")) c.data = synthdata::data_config_from_json(f.raw("data"));
  if (f.has("model")) c.model = progressive::model_config_from_json(f.raw("model"));
  if (f.has("trainer")) c.trainer = progressive::trainer_config_from_json(f.raw("trainer"));
  if (f.has("weights")) c.weights = progressive::weights_from_json(f.raw("weights"));
  if (f.has("eval")) c.eval = segmetrics::eval_config_from_json(f.raw("eval"));
  if (f.has("seeds")) {
    const auto& s = f.raw("seeds");
    if (!s.is_array()) throw ConfigError("seeds must be an array of non-negative integers");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError("seeds must be an array of non-negative integers");
      }
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  f.get("output_dir", c.output_dir);
  f.get("checkpoint_every", c.checkpoint_every);
  f.finish();
  c.weights.t_max = c.trainer.t_max;
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown key " + key);
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  // a bare word meant as a string for a string field
  if (node->is_string() && !value.is_string()) value = text;
  *node = value;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(ExperimentConfig{});
  if (!path.empty()) {
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    // Validate the file's own keys first so errors name the user's key.
    config_from_json(file);
    doc.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig c = config_from_json(doc);
  c.validate();
  return c;
}

}  // namespace pmt::harness
