#include "mtmarl/nn/adam.hpp"

#include <cmath>

#include "mtmarl/common/error.hpp"

namespace mtmarl::nn {

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const GradientSet<T>& grads) {
  if (!params.shape_matches(grads)) throw DimensionError("gradient shape does not match parameters");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw DimensionError("optimizer state shape does not match parameters");

  ++state.step;
  const AdamConfig& cfg = state.config;
  const T beta1 = static_cast<T>(cfg.beta1);
  const T beta2 = static_cast<T>(cfg.beta2);
  const T correction1 =
      static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T correction2 =
      static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);

  auto theta = params.flat();
  const auto g = grads.flat();
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    m[k] = beta1 * m[k] + (T(1) - beta1) * g[k];
    v[k] = beta2 * v[k] + (T(1) - beta2) * g[k] * g[k];
    const T m_hat = m[k] / correction1;
    const T v_hat = v[k] / correction2;
    theta[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template void adam_step<float>(ParameterSet<float>&, AdamState<float>&, const GradientSet<float>&);
template void adam_step<double>(ParameterSet<double>&, AdamState<double>&,
                                const GradientSet<double>&);

}  // namespace mtmarl::nn
