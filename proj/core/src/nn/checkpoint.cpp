#include "mtmarl/nn/checkpoint.hpp"

#include <string>

#include "mtmarl/common/error.hpp"

namespace mtmarl::nn {

namespace {

constexpr std::string_view kMagic = "MTQNCKPT";

void write_widths(ByteWriter& out, const std::vector<std::size_t>& widths) {
  out.put<std::uint64_t>(widths.size());
  for (std::size_t w : widths) out.put<std::uint64_t>(w);
}

std::vector<std::size_t> read_widths(ByteReader& in, std::string_view what) {
  const auto count = in.get<std::uint64_t>(what);
  if (count > 1024) throw DecodeError(std::string(what) + ": implausible layer count");
  std::vector<std::size_t> widths;
  for (std::uint64_t k = 0; k < count; ++k)
    widths.push_back(static_cast<std::size_t>(in.get<std::uint64_t>(what)));
  return widths;
}

void check_field(std::size_t got, std::size_t want, const char* field) {
  if (got != want) {
    throw DecodeError(std::string("checkpoint mismatch in ") + field + ": payload has " +
                      std::to_string(got) + ", expected " + std::to_string(want));
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(const ParameterSet<float>& params) {
  const NetworkSpec& spec = params.spec();
  ByteWriter out;
  out.put_magic(kMagic);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint32_t>(sizeof(float));
  out.put<std::uint64_t>(spec.input_dim);
  write_widths(out, spec.mlp_pre);
  out.put<std::uint64_t>(spec.lstm_cells);
  write_widths(out, spec.mlp_post);
  out.put<std::uint64_t>(spec.output_dim);
  out.put<std::uint64_t>(params.size());
  out.put_array<float>(params.flat());
  return out.release();
}

ParameterSet<float> deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(kMagic, "checkpoint header");
  const auto version = in.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion)
    throw DecodeError("unsupported checkpoint version " + std::to_string(version));
  const auto width = in.get<std::uint32_t>("scalar width");
  if (width != sizeof(float)) throw DecodeError("unsupported scalar width " + std::to_string(width));

  NetworkSpec spec;
  spec.input_dim = static_cast<std::size_t>(in.get<std::uint64_t>("input_dim"));
  spec.mlp_pre = read_widths(in, "mlp_pre");
  spec.lstm_cells = static_cast<std::size_t>(in.get<std::uint64_t>("lstm_cells"));
  spec.mlp_post = read_widths(in, "mlp_post");
  spec.output_dim = static_cast<std::size_t>(in.get<std::uint64_t>("output_dim"));
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw DecodeError(std::string("checkpoint carries an invalid spec: ") + e.what());
  }

  const auto count = static_cast<std::size_t>(in.get<std::uint64_t>("parameter count"));
  check_field(count, spec.parameter_count(), "parameter count");
  auto values = in.get_array<float>(count, "parameters");
  if (!in.done()) throw DecodeError("checkpoint has trailing bytes");
  return ParameterSet<float>(std::move(spec), std::move(values));
}

ParameterSet<float> deserialize(std::span<const std::uint8_t> bytes, const NetworkSpec& expected) {
  ParameterSet<float> params = deserialize(bytes);
  const NetworkSpec& got = params.spec();
  check_field(got.input_dim, expected.input_dim, "input_dim");
  check_field(got.mlp_pre.size(), expected.mlp_pre.size(), "mlp_pre depth");
  for (std::size_t k = 0; k < got.mlp_pre.size(); ++k)
    check_field(got.mlp_pre[k], expected.mlp_pre[k], "mlp_pre width");
  check_field(got.lstm_cells, expected.lstm_cells, "lstm_cells");
  check_field(got.mlp_post.size(), expected.mlp_post.size(), "mlp_post depth");
  for (std::size_t k = 0; k < got.mlp_post.size(); ++k)
    check_field(got.mlp_post[k], expected.mlp_post[k], "mlp_post width");
  check_field(got.output_dim, expected.output_dim, "output_dim");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params) {
  write_file_bytes(path, serialize(params));
}

ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

ParameterSet<float> load_checkpoint(const std::filesystem::path& path, const NetworkSpec& expected) {
  return deserialize(read_file_bytes(path), expected);
}

void write_adam_state(ByteWriter& out, const AdamState<float>& state) {
  out.put<double>(state.config.learning_rate);
  out.put<double>(state.config.beta1);
  out.put<double>(state.config.beta2);
  out.put<double>(state.config.epsilon);
  out.put<std::uint64_t>(state.step);
  out.put<std::uint64_t>(state.first_moment.size());
  out.put_array<float>(state.first_moment);
  out.put_array<float>(state.second_moment);
}

AdamState<float> read_adam_state(ByteReader& in, const NetworkSpec& spec) {
  AdamState<float> state;
  state.config.learning_rate = in.get<double>("adam learning rate");
  state.config.beta1 = in.get<double>("adam beta1");
  state.config.beta2 = in.get<double>("adam beta2");
  state.config.epsilon = in.get<double>("adam epsilon");
  state.step = in.get<std::uint64_t>("adam step");
  const auto count = static_cast<std::size_t>(in.get<std::uint64_t>("adam moment size"));
  check_field(count, spec.parameter_count(), "adam moment size");
  state.first_moment = in.get_array<float>(count, "adam first moment");
  state.second_moment = in.get_array<float>(count, "adam second moment");
  return state;
}

}  // namespace mtmarl::nn
