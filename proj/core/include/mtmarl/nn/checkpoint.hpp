#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mtmarl/common/binary_io.hpp"
#include "mtmarl/nn/adam.hpp"
#include "mtmarl/nn/network.hpp"

namespace mtmarl::nn {

// Checkpoint container, version 1. All integers little-endian.
//
//   offset  type        field
//   0       char[8]     magic "MTQNCKPT"
//   8       u32         format version (1)
//   12      u32         scalar width in bytes (4: float32)
//   16      u64         input_dim
//           u64         number of pre-LSTM dense layers, then one u64 width each
//           u64         lstm_cells
//           u64         number of post-LSTM dense layers, then one u64 width each
//           u64         output_dim
//           u64         parameter count P
//           f32[P]      parameters in parameter_layout() order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const ParameterSet<float>& params);

// Reads the architecture from the payload.
ParameterSet<float> deserialize(std::span<const std::uint8_t> bytes);
// Additionally checks the payload against `expected`; a mismatch throws
// DecodeError naming the field.
ParameterSet<float> deserialize(std::span<const std::uint8_t> bytes, const NetworkSpec& expected);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params);
ParameterSet<float> load_checkpoint(const std::filesystem::path& path);
ParameterSet<float> load_checkpoint(const std::filesystem::path& path, const NetworkSpec& expected);

// Optimizer moments, appended to resumable training state.
void write_adam_state(mtmarl::ByteWriter& out, const AdamState<float>& state);
AdamState<float> read_adam_state(mtmarl::ByteReader& in, const NetworkSpec& spec);

}  // namespace mtmarl::nn
