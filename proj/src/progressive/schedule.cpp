#include "pmt/progressive/schedule.hpp"

#include <algorithm>
#include <functional>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "pmt/core/error.hpp"
#include "pmt/core/random.hpp"

namespace pmt::progressive {
namespace {

constexpr std::uint64_t kLabeledKey = 0x1abe1ed;
constexpr std::uint64_t kUnlabeledKey = 0x0d1abe1;

std::string counters(std::span<const long> iters) {
  return fmt::format("({})", fmt::join(iters, ","));
}

}  // namespace

BatchStream::BatchStream(std::vector<std::size_t> labeled_pool,
                         std::vector<std::size_t> unlabeled_pool, int labeled_per_batch,
                         int unlabeled_per_batch, std::uint64_t seed)
    : labeled_(std::move(labeled_pool)),
      unlabeled_(std::move(unlabeled_pool)),
      lpb_(labeled_per_batch),
      upb_(unlabeled_per_batch),
      seed_(seed) {
  if (labeled_.empty()) throw ConfigError("batch stream needs at least one labeled sample");
  if (lpb_ < 1 || upb_ < 0) throw ConfigError("batch stream: bad per-batch counts");
  if (unlabeled_.empty()) unlabeled_ = labeled_;
}

std::size_t BatchStream::pick(const std::vector<std::size_t>& pool, std::uint64_t key,
                              long slot) const {
  const auto n = static_cast<long>(pool.size());
  const long epoch = slot / n;
  std::vector<std::size_t> perm = pool;
  Rng rng(mix_seed(seed_, key ^ (static_cast<std::uint64_t>(epoch) << 20)));
  shuffle(perm, rng);
  return perm[slot % n];
}

Batch BatchStream::at(long index) const {
  if (index < 0) throw Error("negative stream index");
  Batch b;
  b.stream_index = index;
  for (int j = 0; j < lpb_; ++j) b.labeled.push_back(pick(labeled_, kLabeledKey, index * lpb_ + j));
  for (int j = 0; j < upb_; ++j) {
    b.unlabeled.push_back(pick(unlabeled_, kUnlabeledKey, index * upb_ + j));
  }
  return b;
}

int next_cpm(std::span<const long> iters) {
  if (iters.empty()) throw Error("next_cpm: no models");
  return static_cast<int>(std::min_element(iters.begin(), iters.end()) - iters.begin());
}

Scheduler::Scheduler(int n_models, long lead, long t_max)
    : iters_(static_cast<std::size_t>(n_models), 0), lead_(lead), t_max_(t_max) {
  if (n_models < 1) throw ConfigError("scheduler needs at least one model");
  if (lead < 1) throw ConfigError("phase lead must be >= 1");
  if (t_max < 1) throw ConfigError("trainer.t_max must be >= 1");
}

bool Scheduler::done() const {
  return *std::min_element(iters_.begin(), iters_.end()) >= t_max_;
}

std::size_t Scheduler::capacity() const {
  return static_cast<std::size_t>(lead_) * iters_.size();
}

void Scheduler::begin_phase() {
  if (in_phase() || done()) return;
  active_ = next_cpm(iters_);
  const long target = *std::max_element(iters_.begin(), iters_.end()) + lead_;
  truncated_ = target > t_max_;
  phase_end_ = std::min(target, t_max_);
}

const Batch& Scheduler::fetch(const BatchStream& stream) {
  if (!in_phase()) throw InvariantError("fetch outside a phase");
  const long idx = iters_[active_];
  if (idx < buffer_front_) {
    throw InvariantError(fmt::format("buffer underflow: index {} below window start {}", idx,
                                     buffer_front_));
  }
  if (idx == head_) {
    buffer_.push_back(stream.at(head_));
    ++head_;
    if (buffer_.size() > capacity()) {
      throw InvariantError(fmt::format("buffer holds {} batches, capacity {}", buffer_.size(),
                                       capacity()));
    }
  } else if (idx > head_) {
    throw InvariantError(fmt::format("model {} skipped stream index {}", active_, head_));
  }
  const Batch& b = buffer_[static_cast<std::size_t>(idx - buffer_front_)];
  if (b.stream_index != idx) throw InvariantError("buffer out of order");
  return b;
}

bool Scheduler::advance() {
  if (!in_phase()) throw InvariantError("advance outside a phase");
  if (iters_[active_] >= head_) throw InvariantError("advance before fetch");
  ++iters_[active_];
  if (iters_[active_] < phase_end_) return false;
  end_phase();
  return true;
}

void Scheduler::end_phase() {
  ++round_;
  active_ = -1;
  const long lo = *std::min_element(iters_.begin(), iters_.end());
  while (buffer_front_ < lo && !buffer_.empty()) {
    buffer_.pop_front();
    ++buffer_front_;
  }
  if (!truncated_ && round_ >= n_models() - 1 && !gaps_equal(iters_, lead_)) {
    throw InvariantError(fmt::format("iteration gap broken after phase {}: counters {}, lead {}",
                                     round_, counters(iters_), lead_));
  }
}

bool Scheduler::gaps_equal(std::span<const long> iters, long lead) {
  std::vector<long> s(iters.begin(), iters.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] - s[i + 1] != lead) return false;
  }
  return true;
}

Scheduler::Snapshot Scheduler::snapshot() const {
  return {iters_, head_, round_, active_, phase_end_, buffer_front_, truncated_};
}

void Scheduler::restore(const Snapshot& s, const BatchStream& stream) {
  if (s.iters.size() != iters_.size()) throw FormatError("scheduler snapshot: model count differs");
  if (s.buffer_front > s.head || s.head < 0) throw FormatError("scheduler snapshot: bad window");
  iters_ = s.iters;
  head_ = s.head;
  round_ = s.round;
  active_ = s.active;
  phase_end_ = s.phase_end;
  buffer_front_ = s.buffer_front;
  truncated_ = s.truncated;
  buffer_.clear();
  for (long i = buffer_front_; i < head_; ++i) buffer_.push_back(stream.at(i));
}

}  // namespace pmt::progressive
