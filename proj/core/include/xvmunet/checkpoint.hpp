#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "xvmunet/params.hpp"

namespace xvmunet::io {

inline constexpr char kCheckpointMagic[4] = {'X', 'V', 'M', 'U'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "XVMU" | u16 version | u32 config length | config bytes (UTF-8)
//   | u32 tensor count | per tensor: u32 name length | name | u32 rank
//   | u32 extents[rank] | f32 values[numel]
// Values are stored as 32-bit floats (round to nearest).
struct Checkpoint {
  std::string config_text;
  ParamStore weights;
};

std::string encode_checkpoint(const std::string& config_text, const ParamStore& weights);
// DataError on bad magic, version mismatch, truncation or non-finite values.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamStore& weights);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every value to the nearest 32-bit float, i.e. what a save/load cycle keeps.
ParamStore round_to_f32(const ParamStore& weights);

}  // namespace xvmunet::io
