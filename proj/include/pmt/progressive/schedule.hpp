#pragma once

// Batch stream, replay buffer and phase scheduling for progressive training.
//
// The stream is an infinite, deterministic sequence of batches addressed by
// absolute index. Each model keeps a counter I_m of consumed batches and
// always consumes indices in order, so its history is the prefix [0, I_m).
// The buffer is the window [min I, head) of materialized batches; a lagging
// model replays exactly the batches its leader trained on.

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

namespace pmt::progressive {

struct Batch {
  long stream_index = 0;
  std::vector<std::size_t> labeled;    // dataset positions
  std::vector<std::size_t> unlabeled;  // dataset positions
  bool operator==(const Batch&) const = default;
};

// Draws batches from epoch-wise permutations of the labeled and unlabeled
// pools. Batch k takes labeled slots [k*L, (k+1)*L) and unlabeled slots
// [k*U, (k+1)*U) of the concatenated epoch permutations, so any index can be
// materialized on its own. An empty unlabeled pool falls back to the labeled
// images.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> labeled_pool, std::vector<std::size_t> unlabeled_pool,
              int labeled_per_batch, int unlabeled_per_batch, std::uint64_t seed);

  Batch at(long index) const;

  int labeled_per_batch() const { return lpb_; }
  int unlabeled_per_batch() const { return upb_; }

 private:
  std::size_t pick(const std::vector<std::size_t>& pool, std::uint64_t key, long slot) const;

  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> unlabeled_;
  int lpb_;
  int upb_;
  std::uint64_t seed_;
};

// Index of the model with the fewest consumed batches; ties go to the lowest
// index.
int next_cpm(std::span<const long> iters);

// Phase bookkeeping. A phase trains the current progressive model (CPM)
// until it leads the most advanced model by `lead` batches (truncated at
// t_max). At every completed, untruncated phase boundary after the first
// n-1 phases the sorted counters are spaced exactly `lead` apart.
class Scheduler {
 public:
  Scheduler(int n_models, long lead, long t_max);

  int n_models() const { return static_cast<int>(iters_.size()); }
  long lead() const { return lead_; }
  long t_max() const { return t_max_; }
  const std::vector<long>& iters() const { return iters_; }
  long head() const { return head_; }
  long round() const { return round_; }
  bool done() const;

  bool in_phase() const { return active_ >= 0; }
  int active() const { return active_; }
  long phase_end() const { return phase_end_; }

  // Picks the CPM and its target; no-op when a phase is already running.
  void begin_phase();
  // Batch for the active model's next index, pulled from the stream and
  // appended to the buffer when it is fresh.
  const Batch& fetch(const BatchStream& stream);
  // Marks the fetched batch consumed; closes the phase at its target.
  // Returns true when a phase ended.
  bool advance();

  std::size_t buffer_size() const { return buffer_.size(); }
  long buffer_front() const { return buffer_front_; }
  // Upper bound on the buffer length: n_models * lead.
  std::size_t capacity() const;

  // Sorted-gap check used at phase boundaries; exposed for tests.
  static bool gaps_equal(std::span<const long> iters, long lead);

  struct Snapshot {
    std::vector<long> iters;
    long head = 0;
    long round = 0;
    int active = -1;
    long phase_end = 0;
    long buffer_front = 0;
    bool truncated = false;
  };
  Snapshot snapshot() const;
  // Rebuilds the buffer window [buffer_front, head) from the stream.
  void restore(const Snapshot& s, const BatchStream& stream);

 private:
  void end_phase();

  std::vector<long> iters_;
  long lead_;
  long t_max_;
  long head_ = 0;
  long round_ = 0;
  int active_ = -1;
  long phase_end_ = 0;
  bool truncated_ = false;
  std::deque<Batch> buffer_;
  long buffer_front_ = 0;
};

}  // namespace pmt::progressive
