#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "synthplankton/image.hpp"

namespace synthplankton {

enum class ExtractorKind { pretrained_embedding, seeded_random_projection };

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& text);

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::seeded_random_projection;
  int output_dim = 64;
  /// Square input size images are area-resized to before embedding.
  int input_resolution = 32;
  /// ONNX (or any OpenCV-dnn readable) model; pretrained_embedding only.
  std::optional<std::filesystem::path> model_source;
  std::optional<std::uint64_t> seed;

  bool operator==(const ExtractorConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExtractorConfig& c);
void from_json(const nlohmann::json& j, ExtractorConfig& c);

/// Maps an image to a fixed-length vector. Immutable after construction; the
/// pretrained backend serializes access to its network internally, so
/// concurrent embed() calls are safe.
class FeatureExtractor {
 public:
  /// Throws "extractor unavailable" when the model cannot be loaded.
  static FeatureExtractor create(const ExtractorConfig& config);

  FeatureExtractor(FeatureExtractor&&) noexcept;
  FeatureExtractor& operator=(FeatureExtractor&&) noexcept;
  ~FeatureExtractor();

  const ExtractorConfig& config() const { return config_; }
  int output_dim() const { return config_.output_dim; }
  /// Hex digest over kind, dimensions, seed and (for pretrained) model bytes.
  const std::string& fingerprint() const { return fingerprint_; }

  /// Throws "feature overflow: <source>" on non-finite activations.
  std::vector<double> embed(const ImageRecord& image) const;

  /// Random projection only: the response to an all-zero image, i.e. the
  /// squashed bias term.
  std::vector<double> bias_response() const;

 private:
  struct Backend;
  FeatureExtractor(ExtractorConfig config, std::unique_ptr<Backend> backend, std::string fingerprint);

  ExtractorConfig config_;
  std::unique_ptr<Backend> backend_;
  std::string fingerprint_;
};

/// N x d feature matrix (float32, the cache's storage precision) plus the
/// fingerprint of the extractor that produced it.
struct FeatureSet {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vectors;
  std::string extractor_fingerprint;
  std::string source_manifest;

  std::size_t size() const { return static_cast<std::size_t>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// One row per image in manifest order.
FeatureSet extract_features(const ImageSet& images, const FeatureExtractor& extractor,
                            const std::string& source_manifest = {});

/// Feature cache format: one JSON header line
///   {"format":"featcache","version":1,"n":N,"d":d,"fingerprint":...,"checksum":...}
/// followed by N*d little-endian float32 values, row-major.
inline constexpr int kFeatureCacheVersion = 1;

void cache_features(const FeatureSet& features, const std::filesystem::path& path);
/// Throws "untrusted cache" on missing/altered fingerprint, "cache format" on
/// version mismatch or truncation.
FeatureSet load_features(const std::filesystem::path& path);

}  // namespace synthplankton
