#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "synthplankton/architectures.hpp"
#include "synthplankton/audit.hpp"
#include "synthplankton/error.hpp"
#include "synthplankton/image.hpp"
#include "synthplankton/trainer.hpp"

namespace synthplankton {

inline constexpr int kConfigVersion = 1;

/// Rejected configuration. what() starts with the offending field path,
/// e.g. "train.iterations: must be >= 1 (got 0)".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class CropMode { center, random };

/// How a raw image directory becomes a training set. Without a data
/// directory the pipeline generates `toy_count` synthetic images instead.
struct DataSettings {
  /// Apply crop/flip/resize to the directory given at run time; when false
  /// the directory is taken as already prepared.
  bool prepare = false;
  Resolution crop{32, 32};
  CropMode crop_mode = CropMode::center;
  int crops_per_image = 10;  // random mode only
  bool hflip = true;
  std::optional<Resolution> resize;
  std::uint64_t seed = 0;
  std::size_t toy_count = 512;

  /// Size of the prepared images.
  Resolution output_resolution() const { return resize ? *resize : crop; }
  bool operator==(const DataSettings&) const = default;
};

struct AuditSettings {
  bool enabled = true;
  /// Generated images to audit.
  int n_generated = 16;
  AuditOptions options;
  bool operator==(const AuditSettings& o) const;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string name = "experiment";
  GeneratorSpec gen_spec;
  DiscriminatorSpec disc_spec;
  DataSettings data;
  TrainConfig train;
  EvalSettings metrics;
  AuditSettings audit;

  /// Every cross-field check runs here; throws ConfigError.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataSettings& d);
void from_json(const nlohmann::json& j, DataSettings& d);
void to_json(nlohmann::json& j, const AuditSettings& a);
void from_json(const nlohmann::json& j, AuditSettings& a);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Throws ConfigError on unknown versions or malformed fields.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& config);
/// Parses and validates.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Replaces every seed in the config with `seed` and turns on deterministic
/// history output.
void apply_seed_override(ExperimentConfig& config, std::uint64_t seed);

}  // namespace synthplankton
