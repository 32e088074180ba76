#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wavesplit/model.hpp"

namespace wavesplit {

// Checkpoint file: magic "WSPL", format version u32, then a count-prefixed
// list of (name, shape, float32 little-endian payload) entries covering every
// parameter tensor and the embedding table.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

void save_checkpoint(const std::filesystem::path& path, const WavesplitModel& model);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

// Restores parameters into an existing model; every entry must match an
// existing parameter in name and shape.
void load_checkpoint(const std::filesystem::path& path, WavesplitModel& model);

// Rebuilds the architecture from the parameter names and shapes alone, then
// loads the values. Dilation schedules are implied by layer position.
WavesplitModel model_from_checkpoint(const std::filesystem::path& path);

}  // namespace wavesplit
