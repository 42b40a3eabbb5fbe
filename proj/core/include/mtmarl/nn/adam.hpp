#pragma once

#include <cstdint>
#include <vector>

#include "mtmarl/nn/network.hpp"

namespace mtmarl::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators for one ParameterSet.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const NetworkSpec& spec, AdamConfig cfg)
      : config(cfg),
        first_moment(spec.parameter_count(), T(0)),
        second_moment(spec.parameter_count(), T(0)) {}
};

// In-place bias-corrected Adam update. Throws DimensionError on shape
// mismatch between params, grads and moments.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const GradientSet<T>& grads);

}  // namespace mtmarl::nn
