#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mtmarl::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMajorMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VectorMap = Eigen::Map<Vector<T>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Vector<T>>;

// Architecture of a recurrent Q-network:
//   input -> [dense+ReLU]* -> LSTM -> [dense+ReLU]* -> dense (linear) -> q
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> mlp_pre{32, 32};
  std::size_t lstm_cells = 64;
  std::vector<std::size_t> mlp_post{32, 32};
  std::size_t output_dim = 5;

  // Throws ConfigError when any width is zero.
  void validate() const;
  std::size_t parameter_count() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// One named block of the flat parameter vector. Weight blocks are stored
// row-major with shape [rows x cols] = [fan_out x fan_in]; bias blocks have
// cols == 1.
struct ParameterBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
};

// Flatten order:
//   pre{k}.W, pre{k}.b          for each pre-LSTM dense layer
//   lstm.Wx [4H x in], lstm.Wh [4H x H], lstm.b [4H]   gate rows: i, f, g, o
//   post{k}.W, post{k}.b        for each post-LSTM dense layer
//   out.W, out.b
std::vector<ParameterBlock> parameter_layout(const NetworkSpec& spec);

// Weights of one network (or, with identical shape, a gradient of them).
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  // Zero-filled parameters for `spec`.
  explicit ParameterSet(NetworkSpec spec);
  ParameterSet(NetworkSpec spec, std::vector<T> flat);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }

  std::span<T> flat() { return values_; }
  std::span<const T> flat() const { return values_; }
  std::vector<T> flatten() const { return values_; }

  const std::vector<ParameterBlock>& layout() const { return layout_; }

  // Dense layer k over the whole stack (pre layers, then post, then output).
  RowMajorMap<T> dense_weight(std::size_t layer);
  ConstRowMajorMap<T> dense_weight(std::size_t layer) const;
  VectorMap<T> dense_bias(std::size_t layer);
  ConstVectorMap<T> dense_bias(std::size_t layer) const;

  RowMajorMap<T> lstm_input_weight();
  ConstRowMajorMap<T> lstm_input_weight() const;
  RowMajorMap<T> lstm_recurrent_weight();
  ConstRowMajorMap<T> lstm_recurrent_weight() const;
  VectorMap<T> lstm_bias();
  ConstVectorMap<T> lstm_bias() const;

  void set_zero();
  bool shape_matches(const ParameterSet& other) const {
    return spec_ == other.spec_;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    return ParameterSet<U>(spec_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  const ParameterBlock& dense_block(std::size_t layer, bool bias) const;
  std::size_t lstm_block_index() const { return 2 * spec_.mlp_pre.size(); }

  NetworkSpec spec_;
  std::vector<ParameterBlock> layout_;
  std::vector<T> values_;
};

// dL/dtheta, shape-congruent with the ParameterSet it was computed for.
template <typename T>
using GradientSet = ParameterSet<T>;

// LSTM state for a batch of independent sequences, one column each.
template <typename T>
struct HiddenState {
  Matrix<T> h;
  Matrix<T> c;

  static HiddenState zeros(const NetworkSpec& spec, std::size_t batch = 1) {
    return {Matrix<T>::Zero(spec.lstm_cells, batch),
            Matrix<T>::Zero(spec.lstm_cells, batch)};
  }
  std::size_t batch() const { return static_cast<std::size_t>(h.cols()); }
};

// Activations retained by forward_sequence for backward_sequence.
template <typename T>
struct StepCache {
  // dense_in[k] is the input to dense layer k (pre layers, then post, then
  // output). The input of post layer 0 is the LSTM output h.
  std::vector<Matrix<T>> dense_in;
  Matrix<T> lstm_in;
  Matrix<T> gates;  // 4H x B, after nonlinearity (i, f, g, o)
  Matrix<T> h_prev;
  Matrix<T> c_prev;
  Matrix<T> tanh_c;
};

template <typename T>
struct SequenceCache {
  NetworkSpec spec;
  std::size_t batch = 0;
  std::vector<StepCache<T>> steps;
};

template <typename T>
struct SequenceOutput {
  std::vector<Matrix<T>> q;             // per step: output_dim x B
  std::vector<HiddenState<T>> hidden;   // per step: state after that step
  SequenceCache<T> cache;
};

template <typename T>
struct StepOutput {
  Vector<T> q;
  HiddenState<T> hidden;
};

// Deterministic in (spec, seed). Weights uniform in +-1/sqrt(fan_in), biases
// zero except the LSTM forget gate, which starts at 1.
template <typename T>
ParameterSet<T> build_network(const NetworkSpec& spec, std::uint64_t seed);

// One step for a single sequence. Throws DimensionError on size mismatch.
template <typename T>
StepOutput<T> forward_step(const ParameterSet<T>& params, std::span<const T> obs,
                           const HiddenState<T>& hidden);

// Batched step: obs is input_dim x B, hidden has B columns. Returns q as
// output_dim x B and updates `hidden` in place.
template <typename T>
Matrix<T> forward_batch_step(const ParameterSet<T>& params, const Matrix<T>& obs,
                             HiddenState<T>& hidden);

// Runs a batch of sequences. inputs[t] is input_dim x B. Padding steps are
// evaluated like any other; masking belongs to the loss.
template <typename T>
SequenceOutput<T> forward_sequence(const ParameterSet<T>& params,
                                   std::span<const Matrix<T>> inputs,
                                   const HiddenState<T>& initial);

// Single-sequence convenience form.
template <typename T>
SequenceOutput<T> forward_sequence(const ParameterSet<T>& params,
                                   const std::vector<std::vector<T>>& obs_seq,
                                   const HiddenState<T>& initial);

// Backpropagation through time over the full cached sequence.
// dq[t] is output_dim x B; mask holds T*B entries indexed t*B + b. A column
// whose mask entry is 0 contributes nothing to the gradient.
template <typename T>
GradientSet<T> backward_sequence(const ParameterSet<T>& params,
                                 const SequenceCache<T>& cache,
                                 std::span<const Matrix<T>> dq,
                                 std::span<const std::uint8_t> mask);

// Deep copy for the target network.
template <typename T>
ParameterSet<T> sync_target(const ParameterSet<T>& params) {
  return params;
}

}  // namespace mtmarl::nn
