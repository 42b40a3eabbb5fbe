#include "mtmarl/replay/cert.hpp"

#include <random>

#include "mtmarl/common/seed.hpp"

namespace mtmarl::replay {

std::optional<SampleIndexPlan> plan_indices(std::uint64_t stream_seed, std::uint64_t iteration,
                                            std::span<const std::size_t> episode_lengths,
                                            std::size_t batch, std::size_t tracelength) {
  if (batch == 0) throw ConfigError("minibatch size must be >= 1");
  if (tracelength == 0) throw ConfigError("tracelength must be >= 1");
  if (episode_lengths.empty()) return std::nullopt;
  for (std::size_t len : episode_lengths)
    if (len == 0) throw DimensionError("stored episodes must hold at least one experience");

  Rng rng(derive_seed(stream_seed, iteration));
  std::uniform_int_distribution<std::size_t> pick_episode(0, episode_lengths.size() - 1);
  const auto tau = static_cast<std::int64_t>(tracelength);

  SampleIndexPlan plan;
  plan.tracelength = tracelength;
  plan.traces.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t slot = pick_episode(rng);
    const auto last = static_cast<std::int64_t>(episode_lengths[slot]) - 1;
    std::uniform_int_distribution<std::int64_t> pick_start(-tau + 1, last);
    plan.traces.push_back({slot, pick_start(rng)});
  }
  return plan;
}

}  // namespace mtmarl::replay
