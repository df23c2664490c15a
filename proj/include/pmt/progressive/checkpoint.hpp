#pragma once

// PMTCKPT1 checkpoint files.
//
//   "PMTCKPT1"  u32 version  u32 pair_count
//   per pair:   u32 pair_id  f64 ema_alpha  student block  teacher block
//   block:      u32 count, then per tensor
//               u32 name_len, name, u32 rank, u32 dims[rank], f32 data (LE)
//   trainer:    u32 setup_len, setup JSON, u32 state_len, state bytes
//   u32 CRC-32 (zlib polynomial) of every preceding byte
//
// The state bytes are owned by the trainer (counters, optimizer, RNG,
// history); this layer only frames them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmt/segnet/model_pair.hpp"

namespace pmt::progressive {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents {
  std::vector<segnet::ModelPair> pairs;  // config filled from setup["model"] when present
  nlohmann::json setup;
  std::vector<std::uint8_t> state;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const segnet::ModelPair> pairs,
                                            const nlohmann::json& setup,
                                            std::span<const std::uint8_t> state);
CheckpointContents decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what);

void write_checkpoint(const std::filesystem::path& path, std::span<const segnet::ModelPair> pairs,
                      const nlohmann::json& setup, std::span<const std::uint8_t> state);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace pmt::progressive
