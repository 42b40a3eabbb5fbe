#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtmarl/common/error.hpp"

namespace mtmarl::replay {

// One agent's <o, a, r, o', terminal> record.
struct ExperienceTuple {
  std::vector<float> obs;
  int action = 0;
  float reward = 0.0f;
  std::vector<float> next_obs;
  bool terminal = false;
};

// One sampled trace: stored-episode slot and start timestep, which may be
// negative (down to -tracelength + 1).
struct TraceStart {
  std::size_t episode = 0;
  std::int64_t start = 0;
  friend bool operator==(const TraceStart&, const TraceStart&) = default;
};

struct SampleIndexPlan {
  std::vector<TraceStart> traces;
  std::size_t tracelength = 0;
  // Closed-episode count of the memory the plan was made for, when known.
  std::optional<std::uint64_t> generation;

  friend bool operator==(const SampleIndexPlan& a, const SampleIndexPlan& b) {
    return a.traces == b.traces && a.tracelength == b.tracelength;
  }
};

// Minibatch of fixed-length traces. Slot (b, t) lives at b * tracelength + t.
// Valid experiences form a prefix of each trace; padding slots hold a
// default-constructed experience and mask 0.
template <typename Experience>
struct TraceBatch {
  std::size_t batch = 0;
  std::size_t tracelength = 0;
  std::vector<Experience> slots;
  std::vector<std::uint8_t> mask;

  const Experience& at(std::size_t b, std::size_t t) const { return slots[b * tracelength + t]; }
  bool valid(std::size_t b, std::size_t t) const { return mask[b * tracelength + t] != 0; }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

// Draws `batch` (episode, t0) pairs: episodes uniformly with replacement,
// t0 uniformly from {-tracelength+1, ..., H_e} where H_e = length - 1.
// A pure function of its arguments; agents sharing (stream_seed, iteration)
// and episode lengths obtain identical plans. Returns nullopt when no
// episodes are stored.
std::optional<SampleIndexPlan> plan_indices(std::uint64_t stream_seed, std::uint64_t iteration,
                                            std::span<const std::size_t> episode_lengths,
                                            std::size_t batch, std::size_t tracelength);

// FIFO queue of closed episodes plus one open episode buffer.
template <typename Experience>
class EpisodicMemory {
 public:
  explicit EpisodicMemory(std::size_t capacity = 500) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be >= 1");
  }

  void begin_episode() {
    if (open_) throw StateError("begin_episode called while an episode is open");
    open_.emplace();
  }

  void append(Experience exp) {
    if (!open_) throw StateError("append called outside an open episode");
    open_->push_back(std::move(exp));
  }

  void end_episode() {
    if (!open_) throw StateError("end_episode called without an open episode");
    if (open_->empty()) throw StateError("cannot store an empty episode");
    if (episodes_.size() == capacity_) episodes_.pop_front();
    episodes_.push_back(std::move(*open_));
    open_.reset();
    ++generation_;
  }

  // Drops the open episode without storing it.
  void abandon_episode() { open_.reset(); }

  bool in_episode() const { return open_.has_value(); }
  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t generation() const { return generation_; }

  const std::vector<Experience>& episode(std::size_t slot) const { return episodes_.at(slot); }
  // Index of the last experience in a stored episode.
  std::size_t final_index(std::size_t slot) const { return episodes_.at(slot).size() - 1; }

  std::vector<std::size_t> episode_lengths() const {
    std::vector<std::size_t> lengths;
    lengths.reserve(episodes_.size());
    for (const auto& e : episodes_) lengths.push_back(e.size());
    return lengths;
  }

  std::size_t experience_count() const {
    std::size_t n = 0;
    for (const auto& e : episodes_) n += e.size();
    return n;
  }

  // plan_indices over this memory, stamped with the current generation.
  std::optional<SampleIndexPlan> plan(std::uint64_t stream_seed, std::uint64_t iteration,
                                      std::size_t batch, std::size_t tracelength) const {
    const auto lengths = episode_lengths();
    auto out = plan_indices(stream_seed, iteration, lengths, batch, tracelength);
    if (out) out->generation = generation_;
    return out;
  }

  void clear() {
    episodes_.clear();
    open_.reset();
  }

 private:
  std::size_t capacity_;
  std::deque<std::vector<Experience>> episodes_;
  std::optional<std::vector<Experience>> open_;
  std::uint64_t generation_ = 0;
};

using Cert = EpisodicMemory<ExperienceTuple>;

// Materializes the traces of `plan`: experiences max(t0,0)..min(t0+tau-1,H_e)
// packed into the slot prefix, zero-padded suffix. Throws StateError for a
// plan made against a different memory generation and DimensionError for an
// out-of-range index.
template <typename Experience>
TraceBatch<Experience> extract_traces(const EpisodicMemory<Experience>& memory,
                                      const SampleIndexPlan& plan) {
  if (plan.generation && *plan.generation != memory.generation())
    throw StateError("stale sample plan: memory changed since the plan was drawn");
  const std::size_t tau = plan.tracelength;
  if (tau == 0) throw DimensionError("tracelength must be >= 1");

  TraceBatch<Experience> out;
  out.batch = plan.traces.size();
  out.tracelength = tau;
  out.slots.resize(out.batch * tau);
  out.mask.assign(out.batch * tau, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const TraceStart& ts = plan.traces[b];
    if (ts.episode >= memory.size()) throw DimensionError("plan references a missing episode slot");
    const auto& episode = memory.episode(ts.episode);
    const auto last = static_cast<std::int64_t>(episode.size()) - 1;
    const auto t0 = ts.start;
    if (t0 < -static_cast<std::int64_t>(tau) + 1 || t0 > last)
      throw DimensionError("plan start timestep outside {-tau+1, ..., H_e}");
    const std::int64_t begin = std::max<std::int64_t>(t0, 0);
    const std::int64_t end = std::min<std::int64_t>(t0 + static_cast<std::int64_t>(tau) - 1, last);
    std::size_t slot = b * tau;
    for (std::int64_t t = begin; t <= end; ++t, ++slot) {
      out.slots[slot] = episode[static_cast<std::size_t>(t)];
      out.mask[slot] = 1;
    }
  }
  return out;
}

}  // namespace mtmarl::replay
