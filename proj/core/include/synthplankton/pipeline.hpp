#pragma once

#include <filesystem>
#include <optional>

#include "synthplankton/config.hpp"
#include "synthplankton/report.hpp"

namespace synthplankton {

/// Builds the training set: toy images when `data_dir` is empty, otherwise the
/// directory's images, cropped / flipped / resized when settings.prepare.
ImageSet prepare_dataset(const DataSettings& settings, const std::optional<std::filesystem::path>& data_dir);

/// Crop, optional random expansion, flip and resize as configured.
ImageSet prepare_images(const ImageSet& raw, const DataSettings& settings);

struct RunOptions {
  std::optional<std::filesystem::path> data_dir;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> resume_from;
  bool debug_checks = false;
};

/// prepare -> train -> evaluate -> audit, everything under run_dir:
///   config.json, data_manifest.json, history.csv, report.json,
///   checkpoints/, samples/ (plus samples/final/), audit/.
/// The config is validated before anything is written. SYNTHPLANKTON_SEED,
/// when set, replaces every seed.
RunReport run_experiment(ExperimentConfig config, const RunOptions& options);

}  // namespace synthplankton
