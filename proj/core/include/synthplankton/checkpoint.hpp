#pragma once

#include <filesystem>

#include "synthplankton/trainer.hpp"

namespace synthplankton {

/// Checkpoint layout: one JSON header line (format, version, specs, config,
/// iteration, clock, metric history, optimizer steps, tensor table and a
/// payload checksum) followed by the tensors as little-endian float64.
inline constexpr int kCheckpointVersion = 1;

/// Writes to a temporary sibling and renames, so a failed write never
/// replaces an existing checkpoint.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config);

struct LoadedCheckpoint {
  TrainState state;
  TrainConfig config;
};

/// Throws "checkpoint format" / "checkpoint corrupt" on malformed files.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace synthplankton
