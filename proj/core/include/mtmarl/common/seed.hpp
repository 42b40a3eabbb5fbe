#pragma once

#include <cstdint>
#include <random>

namespace mtmarl {

// Named sub-streams derived from a master seed. The numeric values are part
// of the reproducibility contract; do not renumber.
enum class SeedPurpose : std::uint64_t {
  kTask = 1,
  kInit = 2,
  kEnv = 3,
  kExploration = 4,
  kSampling = 5,
  kFlicker = 6,
  kEval = 7,
  kCollect = 8,
  kDistill = 9,
};

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based seed splitting: a pure function of its arguments, so any
// component can recompute its seed without shared mutable state.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key) {
  return mix64(parent ^ mix64(key + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, SeedPurpose purpose) {
  return derive_seed(parent, static_cast<std::uint64_t>(purpose));
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key,
                                    Keys... rest) {
  return derive_seed(derive_seed(parent, key), static_cast<std::uint64_t>(rest)...);
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t parent, SeedPurpose purpose,
                                    std::uint64_t key, Keys... rest) {
  return derive_seed(derive_seed(parent, purpose), key,
                     static_cast<std::uint64_t>(rest)...);
}

using Rng = std::mt19937_64;

}  // namespace mtmarl
