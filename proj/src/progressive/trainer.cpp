#include "pmt/progressive/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/core/json_fields.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/progressive/checkpoint.hpp"

namespace pmt::progressive {
namespace {

constexpr std::uint64_t kInitKey = 0x9a17;
constexpr std::uint64_t kNoiseKey = 0x7e4c4e5;

std::string g(double v) { return fmt::format("{:.10g}", v); }

void put_row(ByteWriter& out, const HistoryRow& r) {
  out.put_i64(r.iter);
  out.put_u32(static_cast<std::uint32_t>(r.model));
  out.put_i64(r.round);
  out.put_i64(r.model_iter);
  out.put_f64(r.lr);
  const auto& b = r.loss;
  for (double v : {b.l_ce, b.l_dice, b.l_aln, b.l_u, b.l_t, b.l_s, b.l_total, b.lambda1_t,
                   b.lambda2_t}) {
    out.put_f64(v);
  }
  out.put_u8(static_cast<std::uint8_t>(b.plf_pass));
}

HistoryRow get_row(ByteReader& in) {
  HistoryRow r;
  r.iter = in.get_i64();
  r.model = static_cast<int>(in.get_u32());
  r.round = in.get_i64();
  r.model_iter = in.get_i64();
  r.lr = in.get_f64();
  auto& b = r.loss;
  for (double* v : {&b.l_ce, &b.l_dice, &b.l_aln, &b.l_u, &b.l_t, &b.l_s, &b.l_total,
                    &b.lambda1_t, &b.lambda2_t}) {
    *v = in.get_f64();
  }
  b.plf_pass = in.get_u8();
  return r;
}

}  // namespace

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kPmt: return "pmt";
    case Mode::kMtBaseline: return "mt_baseline";
    case Mode::kSupervisedBaseline: return "supervised_baseline";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "pmt") return Mode::kPmt;
  if (s == "mt_baseline") return Mode::kMtBaseline;
  if (s == "supervised_baseline") return Mode::kSupervisedBaseline;
  throw ConfigError("trainer.mode must be pmt, mt_baseline or supervised_baseline, got '" + s + "'");
}

void TrainerConfig::validate() const {
  if (t_max < 1) throw ConfigError("trainer.t_max must be >= 1");
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (labeled_per_batch < 1 || labeled_per_batch > batch_size) {
    throw ConfigError("trainer.labeled_per_batch must be in [1, trainer.batch_size]");
  }
  if (!(lr0 > 0)) throw ConfigError("trainer.lr0 must be > 0");
  if (lr_decay_every < 0) throw ConfigError("trainer.lr_decay_every must be >= 0");
  if (!(lr_decay_factor >= 1)) throw ConfigError("trainer.lr_decay_factor must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("trainer.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("trainer.weight_decay must be >= 0");
  if (!(teacher_noise_sigma >= 0)) throw ConfigError("trainer.teacher_noise_sigma must be >= 0");
  if (phase_lead < 0) throw ConfigError("trainer.phase_lead must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("trainer.grad_clip must be >= 0");
  if (mode == Mode::kPmt) {
    if (n_models < 2) throw ConfigError("trainer.n_models must be >= 2 in pmt mode");
    if (buffer_len_B < 1) throw ConfigError("trainer.buffer_len_B must be >= 1");
    if (buffer_len_B % n_models != 0) {
      throw ConfigError(fmt::format("trainer.buffer_len_B ({}) must be divisible by trainer.n_models ({})",
                                    buffer_len_B, n_models));
    }
    if (phase_lead == 0 && buffer_len_B % (n_models - 1) != 0) {
      throw ConfigError(fmt::format("trainer.buffer_len_B ({}) must be divisible by n_models - 1 ({})",
                                    buffer_len_B, n_models - 1));
    }
  } else if (n_models < 1) {
    throw ConfigError("trainer.n_models must be >= 1");
  }
}

long TrainerConfig::decay_every() const {
  if (lr_decay_every > 0) return lr_decay_every;
  return std::max(1L, t_max * 2500 / 6000);
}

long TrainerConfig::lead() const {
  if (phase_lead > 0) return phase_lead;
  return buffer_len_B / std::max(1, n_models - 1);
}

int TrainerConfig::models() const { return mode == Mode::kPmt ? n_models : 1; }

double lr_at(long iters, const TrainerConfig& c) {
  if (iters < 0) throw Error("lr_at: negative iteration count");
  const long steps = iters / c.decay_every();
  return c.lr0 / std::pow(c.lr_decay_factor, static_cast<double>(steps));
}

int plf_check(double cpm_dice_loss, double peer_dice_loss) {
  return peer_dice_loss <= cpm_dice_loss ? 1 : 0;
}

int plf_check(const Tensor& cpm_pred_l, const Tensor& peer_pred_l, const Tensor& gt_l) {
  NoGradGuard no_grad;
  return plf_check(static_cast<double>(losses::dice_loss(cpm_pred_l, gt_l).item()),
                   static_cast<double>(losses::dice_loss(peer_pred_l, gt_l).item()));
}

bool HistoryRow::operator==(const HistoryRow& o) const {
  const auto& a = loss;
  const auto& b = o.loss;
  return iter == o.iter && model == o.model && round == o.round && model_iter == o.model_iter &&
         lr == o.lr && a.l_ce == b.l_ce && a.l_dice == b.l_dice && a.l_aln == b.l_aln &&
         a.l_u == b.l_u && a.l_t == b.l_t && a.l_s == b.l_s && a.l_total == b.l_total &&
         a.plf_pass == b.plf_pass && a.lambda1_t == b.lambda1_t && a.lambda2_t == b.lambda2_t;
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = kHistoryHeader;
  out += '\n';
  for (const auto& r : rows) {
    const auto& b = r.loss;
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.iter, r.model, r.round,
                       b.plf_pass, g(r.lr), g(b.l_ce), g(b.l_dice), g(b.l_aln), g(b.l_u),
                       g(b.l_t), g(b.l_total), g(b.lambda1_t), g(b.lambda2_t));
  }
  return out;
}

Trainer::Trainer(TrainerSetup setup, const synthdata::Dataset& data, const synthdata::Split& split)
    : setup_(std::move(setup)),
      data_(&data),
      stream_(split.labeled, split.unlabeled, setup_.config.labeled_per_batch,
              setup_.config.batch_size - setup_.config.labeled_per_batch, setup_.config.seed) {
  const TrainerConfig& c = setup_.config;
  c.validate();
  setup_.weights.t_max = c.t_max;
  setup_.weights.validate();
  setup_.net.validate();
  if (data.samples.empty()) throw ConfigError("training needs a non-empty dataset");
  const std::size_t factor = setup_.net.downsample_factor();
  if (data.samples[0].height % factor || data.samples[0].width % factor) {
    throw ConfigError(fmt::format("data dims {}x{} not divisible by the network factor {}",
                                  data.samples[0].height, data.samples[0].width, factor));
  }
  for (int m = 0; m < c.models(); ++m) {
    state_.pairs.push_back(segnet::ModelPair::create(
        setup_.net, mix_seed(c.seed, kInitKey + static_cast<std::uint64_t>(m)), m,
        setup_.ema_alpha));
    SgdState sgd;
    sgd.learning_rate = c.lr0;
    sgd.momentum = c.momentum;
    sgd.weight_decay = c.weight_decay;
    sgd.init(state_.pairs.back().student);
    state_.sgd.push_back(std::move(sgd));
  }
  state_.schedule = Scheduler(c.models(), c.mode == Mode::kPmt ? c.lead() : c.t_max, c.t_max);
  state_.rng = Rng(mix_seed(c.seed, kNoiseKey));
}

Tensor Trainer::stack(const std::vector<std::size_t>& ids, bool masks) const {
  const auto& first = data_->samples.at(ids.at(0));
  const std::size_t h = first.height, w = first.width;
  std::vector<float> v;
  v.reserve(ids.size() * h * w);
  for (std::size_t id : ids) {
    const auto& s = data_->samples.at(id);
    if (masks) {
      for (auto m : s.mask) v.push_back(static_cast<float>(m));
    } else {
      v.insert(v.end(), s.image.begin(), s.image.end());
    }
  }
  return Tensor(Shape{ids.size(), 1, h, w}, std::move(v));
}

HistoryRow Trainer::train_iteration(int m, const Batch& batch) {
  const TrainerConfig& c = setup_.config;
  const losses::LossWeights& w = setup_.weights;
  segnet::ModelPair& pair = state_.pairs.at(m);
  const long t = state_.schedule.iters().at(m);
  const bool progressive = c.mode == Mode::kPmt;
  const bool supervised = c.mode == Mode::kSupervisedBaseline;
  const bool teacher = c.mt_on && !supervised;
  const bool use_unlabeled = !supervised && !batch.unlabeled.empty();

  losses::LossTensors<float> lt;
  losses::LossParts parts;
  int plf = 0;
  try {
    const Tensor xl = stack(batch.labeled, false);
    const Tensor yl = stack(batch.labeled, true);
    const std::size_t nl = batch.labeled.size();
    Tensor xu, x = xl;
    if (use_unlabeled) {
      xu = stack(batch.unlabeled, false);
      x = concat(std::vector<Tensor>{xl, xu}, 0);
    }
    const Tensor out = segnet::forward(pair, segnet::Branch::kStudent, x, true);
    const Tensor pl = use_unlabeled ? slice(out, 0, 0, nl) : out;
    const Tensor pu = use_unlabeled ? slice(out, 0, nl, x.dim(0)) : Tensor();

    lt.ce = losses::ce_loss(pl, yl);
    lt.dice = losses::dice_loss(pl, yl);
    parts.ce = lt.ce.item();
    parts.dice = lt.dice.item();

    if (progressive) {
      // Frozen peers: no graph, no parameter change during the phase.
      std::vector<Tensor> peer_l, peer_u;
      std::vector<double> peer_loss;
      int best = -1;
      for (int p = 0; p < static_cast<int>(state_.pairs.size()); ++p) {
        if (p == m) continue;
        const Tensor po = segnet::forward(state_.pairs[p], segnet::Branch::kStudent, x, false);
        NoGradGuard no_grad;
        peer_l.push_back(use_unlabeled ? slice(po, 0, 0, nl) : po);
        if (use_unlabeled) peer_u.push_back(slice(po, 0, nl, x.dim(0)));
        peer_loss.push_back(losses::dice_loss(peer_l.back(), yl).item());
        if (best < 0 || peer_loss.back() < peer_loss[best]) best = static_cast<int>(peer_loss.size()) - 1;
      }
      plf = c.plf_on ? plf_check(parts.dice, peer_loss[best]) : 1;
      if (c.dda_on) {
        std::vector<Tensor> maps{pl.detach()};
        maps.insert(maps.end(), peer_l.begin(), peer_l.end());
        const Tensor m_diff = losses::dda_mask<float>(maps);
        lt.aln = losses::dda_align_loss(pl, yl, m_diff);
        parts.aln = lt.aln.item();
      }
      if (use_unlabeled) {
        lt.u = losses::unsup_loss(pu, peer_u[best], w.temperature);
        parts.u = lt.u.item();
      }
    }

    if (teacher && use_unlabeled) {
      Tensor tin = xu;
      if (c.teacher_noise_sigma > 0) {
        std::vector<float> v(xu.data().begin(), xu.data().end());
        for (float& e : v) e += static_cast<float>(c.teacher_noise_sigma * normal01(state_.rng));
        tin = Tensor(xu.shape(), std::move(v));
      }
      const Tensor tu = segnet::forward(pair, segnet::Branch::kTeacher, tin, false);
      lt.t = losses::teacher_consistency(pu, tu, w.temperature);
      parts.t = lt.t.item();
    }

    const losses::TermSwitches on{progressive && c.dda_on, progressive, teacher};
    HistoryRow row;
    row.model = m;
    row.round = state_.schedule.round();
    row.model_iter = t;
    row.iter = static_cast<long>(state_.history.size());
    row.lr = lr_at(t, c);
    row.loss = losses::assemble_total(parts, w, t, plf, on);
    if (!std::isfinite(row.loss.l_total)) throw NumericError("non-finite total loss");

    const Tensor total = losses::total_loss(lt, row.loss, w.beta, on);
    pair.student.zero_grad();
    total.backward();
    if (c.grad_clip > 0) clip_grad_norm(pair.student, c.grad_clip);
    state_.sgd[m].learning_rate = row.lr;
    sgd_step(pair.student, state_.sgd[m]);
    if (teacher) segnet::ema_update(pair);
    return row;
  } catch (const NumericError& e) {
    throw NumericError(fmt::format(
        "training aborted: model {} iteration {} (stream index {}): {} "
        "[l_ce={} l_dice={} l_aln={} l_u={} l_t={} plf={}]",
        m, t, batch.stream_index, e.what(), parts.ce, parts.dice, parts.aln, parts.u, parts.t, plf));
  }
}

const HistoryRow& Trainer::step() {
  Scheduler& s = state_.schedule;
  if (s.done()) throw Error("training already finished");
  s.begin_phase();
  const int m = s.active();
  const Batch batch = s.fetch(stream_);
  HistoryRow row = train_iteration(m, batch);
  s.advance();
  state_.history.push_back(row);
  return state_.history.back();
}

void Trainer::run(const std::function<void(const Trainer&)>& on_iteration) {
  while (!done()) {
    step();
    if (on_iteration) on_iteration(*this);
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  ByteWriter out;
  const auto snap = state_.schedule.snapshot();
  out.put_u32(static_cast<std::uint32_t>(snap.iters.size()));
  for (long v : snap.iters) out.put_i64(v);
  out.put_i64(snap.head);
  out.put_i64(snap.round);
  out.put_i64(snap.active);
  out.put_i64(snap.phase_end);
  out.put_i64(snap.buffer_front);
  out.put_u8(snap.truncated ? 1 : 0);
  for (const auto& sgd : state_.sgd) {
    out.put_u32(static_cast<std::uint32_t>(sgd.velocity.size()));
    for (const auto& v : sgd.velocity) {
      out.put_u32(static_cast<std::uint32_t>(v.size()));
      out.put_f32_array(v);
    }
  }
  std::ostringstream rng;
  rng << state_.rng;
  out.put_string(rng.str());
  out.put_u64(state_.history.size());
  for (const auto& r : state_.history) put_row(out, r);
  write_checkpoint(path, state_.pairs, setup_to_json(setup_), out.bytes());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  CheckpointContents ck = read_checkpoint(path);
  const std::string what = path.string();
  if (ck.setup != setup_to_json(setup_)) {
    throw ConfigError(what + ": checkpoint was written with a different configuration");
  }
  if (ck.pairs.size() != state_.pairs.size()) throw FormatError(what + ": pair count differs");
  ByteReader in(ck.state, what);
  Scheduler::Snapshot snap;
  snap.iters.resize(in.get_u32());
  for (long& v : snap.iters) v = in.get_i64();
  snap.head = in.get_i64();
  snap.round = in.get_i64();
  snap.active = static_cast<int>(in.get_i64());
  snap.phase_end = in.get_i64();
  snap.buffer_front = in.get_i64();
  snap.truncated = in.get_u8() != 0;
  std::vector<SgdState> sgd = state_.sgd;
  for (std::size_t m = 0; m < sgd.size(); ++m) {
    const auto& params = ck.pairs[m].student;
    const std::uint32_t count = in.get_u32();
    if (count != 0 && count != params.size()) throw FormatError(what + ": velocity layout differs");
    sgd[m].velocity.assign(count, {});
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t n = in.get_u32();
      if (n != params[i].second.numel()) throw FormatError(what + ": velocity size differs");
      sgd[m].velocity[i].resize(n);
      in.get_f32_array(sgd[m].velocity[i]);
    }
  }
  std::istringstream rng_text(in.get_string());
  Rng rng;
  rng_text >> rng;
  if (rng_text.fail()) throw FormatError(what + ": bad RNG state");
  const std::uint64_t rows = in.get_u64();
  if (rows > in.remaining()) throw FormatError(what + ": truncated history");
  std::vector<HistoryRow> history;
  history.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) history.push_back(get_row(in));
  if (!in.at_end()) throw FormatError(what + ": trailing trainer-state bytes");

  state_.schedule.restore(snap, stream_);
  state_.pairs = std::move(ck.pairs);
  state_.sgd = std::move(sgd);
  state_.rng = rng;
  state_.history = std::move(history);
}

nlohmann::json to_json(const TrainerConfig& c) {
  return {{"n_models", c.n_models},
          {"buffer_len_B", c.buffer_len_B},
          {"t_max", c.t_max},
          {"batch_size", c.batch_size},
          {"labeled_per_batch", c.labeled_per_batch},
          {"lr0", c.lr0},
          {"lr_decay_every", c.lr_decay_every},
          {"lr_decay_factor", c.lr_decay_factor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"mode", mode_name(c.mode)},
          {"plf_on", c.plf_on},
          {"dda_on", c.dda_on},
          {"mt_on", c.mt_on},
          {"teacher_noise_sigma", c.teacher_noise_sigma},
          {"phase_lead", c.phase_lead},
          {"grad_clip", c.grad_clip}};
}

TrainerConfig trainer_config_from_json(const nlohmann::json& j) {
  TrainerConfig c;
  JsonFields f(j, "trainer");
  f.get("n_models", c.n_models);
  f.get("buffer_len_B", c.buffer_len_B);
  f.get("t_max", c.t_max);
  f.get("batch_size", c.batch_size);
  f.get("labeled_per_batch", c.labeled_per_batch);
  f.get("lr0", c.lr0);
  f.get("lr_decay_every", c.lr_decay_every);
  f.get("lr_decay_factor", c.lr_decay_factor);
  f.get("momentum", c.momentum);
  f.get("weight_decay", c.weight_decay);
  f.get("seed", c.seed);
  std::string mode = mode_name(c.mode);
  f.get("mode", mode);
  c.mode = parse_mode(mode);
  f.get("plf_on", c.plf_on);
  f.get("dda_on", c.dda_on);
  f.get("mt_on", c.mt_on);
  f.get("teacher_noise_sigma", c.teacher_noise_sigma);
  f.get("phase_lead", c.phase_lead);
  f.get("grad_clip", c.grad_clip);
  f.finish();
  return c;
}

nlohmann::json to_json(const ModelSection& m) {
  return {{"in_channels", m.net.in_channels},
          {"base_filters", m.net.base_filters},
          {"depth", m.net.depth},
          {"out_channels", m.net.out_channels},
          {"ema_alpha", m.ema_alpha}};
}

ModelSection model_config_from_json(const nlohmann::json& j) {
  ModelSection m;
  JsonFields f(j, "model");
  f.get("in_channels", m.net.in_channels);
  f.get("base_filters", m.net.base_filters);
  f.get("depth", m.net.depth);
  f.get("out_channels", m.net.out_channels);
  f.get("ema_alpha", m.ema_alpha);
  f.finish();
  return m;
}

nlohmann::json to_json(const losses::LossWeights& w) {
  return {{"lambda1_hat", w.lambda1_hat},
          {"lambda2_hat", w.lambda2_hat},
          {"beta", w.beta},
          {"temperature", w.temperature}};
}

losses::LossWeights weights_from_json(const nlohmann::json& j) {
  losses::LossWeights w;
  JsonFields f(j, "weights");
  f.get("lambda1_hat", w.lambda1_hat);
  f.get("lambda2_hat", w.lambda2_hat);
  f.get("beta", w.beta);
  f.get("temperature", w.temperature);
  f.finish();
  return w;
}

nlohmann::json setup_to_json(const TrainerSetup& s) {
  return {{"trainer", to_json(s.config)},
          {"weights", to_json(s.weights)},
          {"model", to_json(ModelSection{s.net, s.ema_alpha})}};
}

TrainerSetup setup_from_json(const nlohmann::json& j) {
  TrainerSetup s;
  JsonFields f(j, "");
  if (f.has("trainer")) s.config = trainer_config_from_json(f.raw("trainer"));
  if (f.has("weights")) s.weights = weights_from_json(f.raw("weights"));
  if (f.has("model")) {
    const ModelSection m = model_config_from_json(f.raw("model"));
    s.net = m.net;
    s.ema_alpha = m.ema_alpha;
  }
  f.finish();
  s.weights.t_max = s.config.t_max;
  return s;
}

}  // namespace pmt::progressive
