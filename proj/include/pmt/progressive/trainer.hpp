#pragma once

// Progressive mean-teacher training and its baselines.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmt/core/random.hpp"
#include "pmt/gradcore/sgd.hpp"
#include "pmt/losses/losses.hpp"
#include "pmt/progressive/schedule.hpp"
#include "pmt/segnet/model_pair.hpp"
#include "pmt/synthdata/synthdata.hpp"

namespace pmt::progressive {

enum class Mode { kPmt, kMtBaseline, kSupervisedBaseline };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);  // "pmt", "mt_baseline", "supervised_baseline"

struct TrainerConfig {
  int n_models = 2;
  int buffer_len_B = 20;
  long t_max = 2000;
  int batch_size = 4;
  int labeled_per_batch = 2;
  double lr0 = 0.01;
  long lr_decay_every = 0;  // 0 = t_max * 2500 / 6000
  double lr_decay_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  Mode mode = Mode::kPmt;
  bool plf_on = true;
  bool dda_on = true;
  bool mt_on = true;
  double teacher_noise_sigma = 0.0;
  long phase_lead = 0;  // 0 = buffer_len_B / (n_models - 1)
  double grad_clip = 5.0;  // max global gradient norm per step, 0 = off

  void validate() const;
  long decay_every() const;
  long lead() const;
  // Models actually trained: n_models in pmt mode, 1 for the baselines.
  int models() const;
};

double lr_at(long iters, const TrainerConfig& config);

// 1 iff the peer's Dice loss on the labeled half is not worse than the
// CPM's (ties pass).
int plf_check(double cpm_dice_loss, double peer_dice_loss);
int plf_check(const Tensor& cpm_pred_l, const Tensor& peer_pred_l, const Tensor& gt_l);

struct HistoryRow {
  long iter = 0;   // global row index
  int model = 0;
  long round = 0;  // phase index
  long model_iter = 0;  // that model's counter before the update
  double lr = 0;
  losses::LossBreakdown loss;
  bool operator==(const HistoryRow& o) const;
};

inline constexpr const char* kHistoryHeader =
    "iter,model,round,plf_pass,lr,l_ce,l_dice,l_aln,l_u,l_t,l_total,lambda1,lambda2";

std::string history_csv(const std::vector<HistoryRow>& rows);

struct TrainerState {
  std::vector<segnet::ModelPair> pairs;
  std::vector<SgdState> sgd;
  Scheduler schedule{1, 1, 1};
  Rng rng;
  std::vector<HistoryRow> history;

  const std::vector<long>& iters() const { return schedule.iters(); }
  long round() const { return schedule.round(); }
};

// Everything a training iteration reads besides the state.
struct TrainerSetup {
  TrainerConfig config;
  losses::LossWeights weights;  // t_max is taken from config
  segnet::SegNetConfig net;
  double ema_alpha = 0.99;
};

class Trainer {
 public:
  // `data` must outlive the trainer.
  Trainer(TrainerSetup setup, const synthdata::Dataset& data, const synthdata::Split& split);

  bool done() const { return state_.schedule.done(); }
  // One iteration of the current phase (starting one if needed).
  const HistoryRow& step();
  // Steps until done. `on_iteration` runs after every step.
  void run(const std::function<void(const Trainer&)>& on_iteration = {});

  const TrainerState& state() const { return state_; }
  TrainerState& mutable_state() { return state_; }
  const TrainerSetup& setup() const { return setup_; }
  const BatchStream& stream() const { return stream_; }
  long iterations_done() const { return static_cast<long>(state_.history.size()); }

  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores pairs, optimizer, counters, buffer window, RNG and history.
  // The checkpoint's trainer config must equal this trainer's.
  void load_checkpoint(const std::filesystem::path& path);

  // Per-iteration composition; exposed so tests can drive single batches.
  HistoryRow train_iteration(int model, const Batch& batch);

 private:
  Tensor stack(const std::vector<std::size_t>& ids, bool masks) const;

  TrainerSetup setup_;
  const synthdata::Dataset* data_;
  BatchStream stream_;
  TrainerState state_;
};

// JSON sections. Readers reject unknown keys and keep defaults for missing
// ones. LossWeights::t_max is not serialized; it follows trainer.t_max.
struct ModelSection {
  segnet::SegNetConfig net;
  double ema_alpha = 0.99;
};

nlohmann::json to_json(const TrainerConfig& c);
TrainerConfig trainer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelSection& m);
ModelSection model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const losses::LossWeights& w);
losses::LossWeights weights_from_json(const nlohmann::json& j);
nlohmann::json setup_to_json(const TrainerSetup& s);
TrainerSetup setup_from_json(const nlohmann::json& j);

}  // namespace pmt::progressive
