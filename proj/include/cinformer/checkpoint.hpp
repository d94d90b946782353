#pragma once

// Binary checkpoint: "CINT", u32 version, u32 entry count, then entries of
//   u16 name length, name bytes, u8 rank, u32 extents[rank], u8 dtype, payload
// with everything little-endian. dtype 0 is f32, 1 raw UTF-8 bytes, 2 u64.

#include <cstdint>
#include <string>
#include <vector>

#include "cinformer/train.hpp"

namespace cinformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryType : std::uint8_t { kF32 = 0, kUtf8 = 1, kU64 = 2 };

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> extents;
  EntryType type = EntryType::kF32;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

struct TrainingState {
  Config config;
  ParamStore<float> params;
  AdamWState optimizer;
  float best_miou = -1.0f;
};

/// Parameters in path order, then "__adam_m__.<path>" / "__adam_v__.<path>"
/// moments, "__step__", "__best_miou__" and the trailing "__config__" JSON.
std::vector<CheckpointEntry> checkpoint_entries(const TrainingState& state);
TrainingState state_from_entries(const std::vector<CheckpointEntry>& entries);

/// Temp file + rename.
void save_checkpoint(const std::string& path, const TrainingState& state);
TrainingState load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cinformer
