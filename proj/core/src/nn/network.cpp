#include "mtmarl/nn/network.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mtmarl/common/error.hpp"

namespace mtmarl::nn {

namespace {

template <typename T>
Matrix<T> relu(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& z) {
  using S = typename Derived::Scalar;
  return (S(1) / (S(1) + (-z.array()).exp())).matrix();
}

template <typename T>
Matrix<T> affine(const ConstRowMajorMap<T>& w, const ConstVectorMap<T>& b,
                 const Matrix<T>& x) {
  Matrix<T> y = w * x;
  y.colwise() += b;
  return y;
}

std::size_t dense_count(const NetworkSpec& spec) {
  return spec.mlp_pre.size() + spec.mlp_post.size() + 1;
}

template <typename T>
void check_input(const NetworkSpec& spec, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != spec.input_dim) {
    std::ostringstream msg;
    msg << "observation has " << rows << " entries, network expects "
        << spec.input_dim;
    throw DimensionError(msg.str());
  }
}

template <typename T>
void check_hidden(const NetworkSpec& spec, const HiddenState<T>& hidden,
                  Eigen::Index batch) {
  if (static_cast<std::size_t>(hidden.h.rows()) != spec.lstm_cells ||
      static_cast<std::size_t>(hidden.c.rows()) != spec.lstm_cells ||
      hidden.h.cols() != batch || hidden.c.cols() != batch) {
    throw DimensionError("hidden state shape does not match network/batch");
  }
}

// Shared forward kernel; fills `cache` when non-null.
template <typename T>
Matrix<T> step_kernel(const ParameterSet<T>& params, const Matrix<T>& obs,
                      HiddenState<T>& hidden, StepCache<T>* cache) {
  const NetworkSpec& spec = params.spec();
  const std::size_t n_pre = spec.mlp_pre.size();
  const std::size_t n_dense = dense_count(spec);
  const Eigen::Index h_dim = static_cast<Eigen::Index>(spec.lstm_cells);

  if (cache) {
    cache->dense_in.resize(n_dense);
    cache->h_prev = hidden.h;
    cache->c_prev = hidden.c;
  }

  Matrix<T> x = obs;
  for (std::size_t k = 0; k < n_pre; ++k) {
    Matrix<T> y = relu<T>(affine<T>(params.dense_weight(k), params.dense_bias(k), x));
    if (cache) cache->dense_in[k] = std::move(x);
    x = std::move(y);
  }

  Matrix<T> z = params.lstm_input_weight() * x;
  z.noalias() += params.lstm_recurrent_weight() * hidden.h;
  z.colwise() += params.lstm_bias();

  Matrix<T> gates(z.rows(), z.cols());
  const Matrix<T>& zc = z;
  gates.topRows(h_dim) = sigmoid(zc.topRows(h_dim));
  gates.middleRows(h_dim, h_dim) = sigmoid(zc.middleRows(h_dim, h_dim));
  gates.middleRows(2 * h_dim, h_dim) =
      zc.middleRows(2 * h_dim, h_dim).array().tanh().matrix();
  gates.bottomRows(h_dim) = sigmoid(zc.bottomRows(h_dim));

  const auto i_gate = gates.topRows(h_dim).array();
  const auto f_gate = gates.middleRows(h_dim, h_dim).array();
  const auto g_gate = gates.middleRows(2 * h_dim, h_dim).array();
  const auto o_gate = gates.bottomRows(h_dim).array();

  Matrix<T> c = (f_gate * hidden.c.array() + i_gate * g_gate).matrix();
  Matrix<T> tanh_c = c.array().tanh().matrix();
  Matrix<T> h = (o_gate * tanh_c.array()).matrix();

  if (cache) {
    cache->lstm_in = std::move(x);
    cache->gates = gates;
    cache->tanh_c = tanh_c;
  }
  hidden.c = std::move(c);
  hidden.h = h;

  Matrix<T> a = std::move(h);
  for (std::size_t layer = n_pre; layer < n_dense; ++layer) {
    Matrix<T> y = affine<T>(params.dense_weight(layer), params.dense_bias(layer), a);
    if (layer + 1 < n_dense) y = relu<T>(y);
    if (cache) cache->dense_in[layer] = std::move(a);
    a = std::move(y);
  }
  return a;
}

}  // namespace

void NetworkSpec::validate() const {
  auto fail = [](const std::string& what) {
    throw ConfigError("invalid network spec: " + what + " must be >= 1");
  };
  if (input_dim == 0) fail("input_dim");
  if (lstm_cells == 0) fail("lstm_cells");
  if (output_dim == 0) fail("output_dim");
  for (std::size_t w : mlp_pre)
    if (w == 0) fail("mlp_pre width");
  for (std::size_t w : mlp_post)
    if (w == 0) fail("mlp_post width");
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& block : parameter_layout(*this)) total += block.size();
  return total;
}

std::vector<ParameterBlock> parameter_layout(const NetworkSpec& spec) {
  spec.validate();
  std::vector<ParameterBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  auto add_dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    add(name + ".W", out, in);
    add(name + ".b", out, 1);
  };

  std::size_t width = spec.input_dim;
  for (std::size_t k = 0; k < spec.mlp_pre.size(); ++k) {
    add_dense("pre" + std::to_string(k), width, spec.mlp_pre[k]);
    width = spec.mlp_pre[k];
  }
  add("lstm.Wx", 4 * spec.lstm_cells, width);
  add("lstm.Wh", 4 * spec.lstm_cells, spec.lstm_cells);
  add("lstm.b", 4 * spec.lstm_cells, 1);
  width = spec.lstm_cells;
  for (std::size_t k = 0; k < spec.mlp_post.size(); ++k) {
    add_dense("post" + std::to_string(k), width, spec.mlp_post[k]);
    width = spec.mlp_post[k];
  }
  add_dense("out", width, spec.output_dim);
  return blocks;
}

template <typename T>
ParameterSet<T>::ParameterSet(NetworkSpec spec)
    : spec_(std::move(spec)), layout_(parameter_layout(spec_)) {
  values_.assign(layout_.back().offset + layout_.back().size(), T(0));
}

template <typename T>
ParameterSet<T>::ParameterSet(NetworkSpec spec, std::vector<T> flat)
    : spec_(std::move(spec)), layout_(parameter_layout(spec_)), values_(std::move(flat)) {
  const std::size_t expected = layout_.back().offset + layout_.back().size();
  if (values_.size() != expected) {
    throw DimensionError("flat parameter vector has " + std::to_string(values_.size()) +
                         " entries, spec requires " + std::to_string(expected));
  }
}

template <typename T>
const ParameterBlock& ParameterSet<T>::dense_block(std::size_t layer, bool bias) const {
  const std::size_t n_pre = spec_.mlp_pre.size();
  if (layer >= dense_count(spec_)) throw DimensionError("dense layer index out of range");
  const std::size_t index =
      layer < n_pre ? 2 * layer : 2 * n_pre + 3 + 2 * (layer - n_pre);
  return layout_[index + (bias ? 1 : 0)];
}

template <typename T>
RowMajorMap<T> ParameterSet<T>::dense_weight(std::size_t layer) {
  const auto& b = dense_block(layer, false);
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
ConstRowMajorMap<T> ParameterSet<T>::dense_weight(std::size_t layer) const {
  const auto& b = dense_block(layer, false);
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
VectorMap<T> ParameterSet<T>::dense_bias(std::size_t layer) {
  const auto& b = dense_block(layer, true);
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows)};
}

template <typename T>
ConstVectorMap<T> ParameterSet<T>::dense_bias(std::size_t layer) const {
  const auto& b = dense_block(layer, true);
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows)};
}

template <typename T>
RowMajorMap<T> ParameterSet<T>::lstm_input_weight() {
  const auto& b = layout_[lstm_block_index()];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
ConstRowMajorMap<T> ParameterSet<T>::lstm_input_weight() const {
  const auto& b = layout_[lstm_block_index()];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
RowMajorMap<T> ParameterSet<T>::lstm_recurrent_weight() {
  const auto& b = layout_[lstm_block_index() + 1];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
ConstRowMajorMap<T> ParameterSet<T>::lstm_recurrent_weight() const {
  const auto& b = layout_[lstm_block_index() + 1];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
          static_cast<Eigen::Index>(b.cols)};
}

template <typename T>
VectorMap<T> ParameterSet<T>::lstm_bias() {
  const auto& b = layout_[lstm_block_index() + 2];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows)};
}

template <typename T>
ConstVectorMap<T> ParameterSet<T>::lstm_bias() const {
  const auto& b = layout_[lstm_block_index() + 2];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.rows)};
}

template <typename T>
void ParameterSet<T>::set_zero() {
  std::fill(values_.begin(), values_.end(), T(0));
}

template <typename T>
ParameterSet<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  ParameterSet<T> params(spec);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](auto&& weight, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < weight.rows(); ++r)
      for (Eigen::Index c = 0; c < weight.cols(); ++c)
        weight(r, c) = static_cast<T>(dist(rng));
  };

  const std::size_t n_pre = spec.mlp_pre.size();
  for (std::size_t k = 0; k < n_pre; ++k) {
    auto w = params.dense_weight(k);
    fill_uniform(w, static_cast<std::size_t>(w.cols()));
  }
  {
    auto wx = params.lstm_input_weight();
    auto wh = params.lstm_recurrent_weight();
    const std::size_t fan_in = static_cast<std::size_t>(wx.cols() + wh.cols());
    fill_uniform(wx, fan_in);
    fill_uniform(wh, fan_in);
    const auto h = static_cast<Eigen::Index>(spec.lstm_cells);
    params.lstm_bias().segment(h, h).setConstant(T(1));
  }
  for (std::size_t layer = n_pre; layer < dense_count(spec); ++layer) {
    auto w = params.dense_weight(layer);
    fill_uniform(w, static_cast<std::size_t>(w.cols()));
  }
  return params;
}

template <typename T>
StepOutput<T> forward_step(const ParameterSet<T>& params, std::span<const T> obs,
                           const HiddenState<T>& hidden) {
  const NetworkSpec& spec = params.spec();
  check_input<T>(spec, static_cast<Eigen::Index>(obs.size()));
  check_hidden(spec, hidden, 1);
  Matrix<T> x = Eigen::Map<const Matrix<T>>(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
  StepOutput<T> out{Vector<T>(), hidden};
  out.q = step_kernel<T>(params, x, out.hidden, nullptr);
  return out;
}

template <typename T>
Matrix<T> forward_batch_step(const ParameterSet<T>& params, const Matrix<T>& obs,
                             HiddenState<T>& hidden) {
  check_input<T>(params.spec(), obs.rows());
  check_hidden(params.spec(), hidden, obs.cols());
  return step_kernel<T>(params, obs, hidden, nullptr);
}

template <typename T>
SequenceOutput<T> forward_sequence(const ParameterSet<T>& params,
                                   std::span<const Matrix<T>> inputs,
                                   const HiddenState<T>& initial) {
  const NetworkSpec& spec = params.spec();
  if (inputs.empty()) throw DimensionError("forward_sequence needs a nonempty sequence");
  const Eigen::Index batch = inputs.front().cols();
  check_hidden(spec, initial, batch);

  SequenceOutput<T> out;
  out.cache.spec = spec;
  out.cache.batch = static_cast<std::size_t>(batch);
  out.cache.steps.resize(inputs.size());
  out.q.reserve(inputs.size());
  out.hidden.reserve(inputs.size());

  HiddenState<T> hidden = initial;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    check_input<T>(spec, inputs[t].rows());
    if (inputs[t].cols() != batch) throw DimensionError("batch width changes along sequence");
    out.q.push_back(step_kernel<T>(params, inputs[t], hidden, &out.cache.steps[t]));
    out.hidden.push_back(hidden);
  }
  return out;
}

template <typename T>
SequenceOutput<T> forward_sequence(const ParameterSet<T>& params,
                                   const std::vector<std::vector<T>>& obs_seq,
                                   const HiddenState<T>& initial) {
  std::vector<Matrix<T>> inputs;
  inputs.reserve(obs_seq.size());
  for (const auto& obs : obs_seq) {
    inputs.push_back(Eigen::Map<const Matrix<T>>(obs.data(),
                                                 static_cast<Eigen::Index>(obs.size()), 1));
  }
  return forward_sequence<T>(params, std::span<const Matrix<T>>(inputs), initial);
}

template <typename T>
GradientSet<T> backward_sequence(const ParameterSet<T>& params,
                                 const SequenceCache<T>& cache,
                                 std::span<const Matrix<T>> dq,
                                 std::span<const std::uint8_t> mask) {
  const NetworkSpec& spec = params.spec();
  if (!(cache.spec == spec)) throw DimensionError("cache was produced by a different network spec");
  const std::size_t steps = cache.steps.size();
  const auto batch = static_cast<Eigen::Index>(cache.batch);
  if (dq.size() != steps) throw DimensionError("dL/dq sequence length does not match cache");
  if (mask.size() != steps * cache.batch) throw DimensionError("mask size does not match cache");

  const std::size_t n_pre = spec.mlp_pre.size();
  const std::size_t n_dense = dense_count(spec);
  const auto h_dim = static_cast<Eigen::Index>(spec.lstm_cells);

  GradientSet<T> grads(spec);
  Matrix<T> dh_carry = Matrix<T>::Zero(h_dim, batch);
  Matrix<T> dc_carry = Matrix<T>::Zero(h_dim, batch);

  for (std::size_t t = steps; t-- > 0;) {
    const StepCache<T>& step = cache.steps[t];
    if (dq[t].rows() != static_cast<Eigen::Index>(spec.output_dim) || dq[t].cols() != batch)
      throw DimensionError("dL/dq entry has wrong shape");

    Matrix<T> dy = dq[t];
    for (Eigen::Index b = 0; b < batch; ++b)
      if (!mask[t * cache.batch + static_cast<std::size_t>(b)]) dy.col(b).setZero();

    Matrix<T> dh;
    for (std::size_t layer = n_dense; layer-- > n_pre;) {
      const Matrix<T>& a_in = step.dense_in[layer];
      grads.dense_weight(layer).noalias() += dy * a_in.transpose();
      grads.dense_bias(layer) += dy.rowwise().sum();
      Matrix<T> da = params.dense_weight(layer).transpose() * dy;
      if (layer > n_pre) {
        dy = (da.array() * (a_in.array() > T(0)).template cast<T>()).matrix();
      } else {
        dh = std::move(da);
      }
    }
    dh += dh_carry;

    const auto i_gate = step.gates.topRows(h_dim).array();
    const auto f_gate = step.gates.middleRows(h_dim, h_dim).array();
    const auto g_gate = step.gates.middleRows(2 * h_dim, h_dim).array();
    const auto o_gate = step.gates.bottomRows(h_dim).array();
    const auto tanh_c = step.tanh_c.array();

    Matrix<T> dc = (dh.array() * o_gate * (T(1) - tanh_c.square()) + dc_carry.array()).matrix();
    Matrix<T> dz(4 * h_dim, batch);
    dz.topRows(h_dim) = (dc.array() * g_gate * i_gate * (T(1) - i_gate)).matrix();
    dz.middleRows(h_dim, h_dim) =
        (dc.array() * step.c_prev.array() * f_gate * (T(1) - f_gate)).matrix();
    dz.middleRows(2 * h_dim, h_dim) = (dc.array() * i_gate * (T(1) - g_gate.square())).matrix();
    dz.bottomRows(h_dim) = (dh.array() * tanh_c * o_gate * (T(1) - o_gate)).matrix();
    dc_carry = (dc.array() * f_gate).matrix();

    grads.lstm_input_weight().noalias() += dz * step.lstm_in.transpose();
    grads.lstm_recurrent_weight().noalias() += dz * step.h_prev.transpose();
    grads.lstm_bias() += dz.rowwise().sum();
    dh_carry.noalias() = params.lstm_recurrent_weight().transpose() * dz;

    if (n_pre == 0) continue;
    Matrix<T> dx = params.lstm_input_weight().transpose() * dz;
    for (std::size_t layer = n_pre; layer-- > 0;) {
      const Matrix<T>& out = layer + 1 < n_pre ? step.dense_in[layer + 1] : step.lstm_in;
      Matrix<T> dpre = (dx.array() * (out.array() > T(0)).template cast<T>()).matrix();
      grads.dense_weight(layer).noalias() += dpre * step.dense_in[layer].transpose();
      grads.dense_bias(layer) += dpre.rowwise().sum();
      if (layer > 0) dx = params.dense_weight(layer).transpose() * dpre;
    }
  }
  return grads;
}

#define MTMARL_INSTANTIATE_NETWORK(T)                                                    \
  template class ParameterSet<T>;                                                        \
  template ParameterSet<T> build_network<T>(const NetworkSpec&, std::uint64_t);          \
  template StepOutput<T> forward_step<T>(const ParameterSet<T>&, std::span<const T>,     \
                                         const HiddenState<T>&);                         \
  template Matrix<T> forward_batch_step<T>(const ParameterSet<T>&, const Matrix<T>&,     \
                                           HiddenState<T>&);                             \
  template SequenceOutput<T> forward_sequence<T>(                                        \
      const ParameterSet<T>&, std::span<const Matrix<T>>, const HiddenState<T>&);        \
  template SequenceOutput<T> forward_sequence<T>(                                        \
      const ParameterSet<T>&, const std::vector<std::vector<T>>&, const HiddenState<T>&); \
  template GradientSet<T> backward_sequence<T>(const ParameterSet<T>&,                   \
                                               const SequenceCache<T>&,                  \
                                               std::span<const Matrix<T>>,               \
                                               std::span<const std::uint8_t>);

MTMARL_INSTANTIATE_NETWORK(float)
MTMARL_INSTANTIATE_NETWORK(double)

#undef MTMARL_INSTANTIATE_NETWORK

}  // namespace mtmarl::nn
