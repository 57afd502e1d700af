#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "synthplankton/features.hpp"
#include "synthplankton/image.hpp"

namespace synthplankton {

enum class NeighborSpace { pixel, feature };

struct Neighbor {
  std::size_t index = 0;  // position in the corpus
  std::string record_id;  // corpus source_path
  double distance = 0.0;
  bool operator==(const Neighbor&) const = default;
};

/// Root-mean-square difference over all pixels and channels. Sizes must match.
double rms_pixel_distance(const ImageRecord& a, const ImageRecord& b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Exhaustive search over a fixed corpus. Corpus features are embedded once
/// when an extractor is supplied.
class NeighborIndex {
 public:
  NeighborIndex(const ImageSet& corpus, const FeatureExtractor* extractor);

  const ImageSet& corpus() const { return *corpus_; }
  const Eigen::MatrixXd& features() const { return features_; }

  /// Top min(k, |corpus|) by (distance, index). Throws "k" for k < 1 and
  /// "extractor required" for feature search without an extractor. Pixel
  /// queries of another size are area-resized to the corpus resolution.
  std::vector<Neighbor> query(const ImageRecord& image, NeighborSpace space, int k) const;
  std::vector<Neighbor> query_features(std::span<const double> features, int k) const;

 private:
  const ImageSet* corpus_;
  const FeatureExtractor* extractor_;
  Eigen::MatrixXd features_;  // one row per corpus record
};

std::vector<Neighbor> nearest_neighbors(const ImageRecord& query, const ImageSet& corpus, NeighborSpace space, int k,
                                        const FeatureExtractor* extractor = nullptr);

struct NeighborReport {
  std::string query_id;
  std::vector<Neighbor> pixel_neighbors;
  std::vector<Neighbor> feature_neighbors;
  bool memorization_flag = false;
};

struct AuditOptions {
  int k = 3;
  double tau_pix = 0.02;
  /// Defaults to the `tau_feat_quantile` of real-real feature distances over
  /// `tau_feat_pairs` seeded random pairs.
  std::optional<double> tau_feat;
  double tau_feat_quantile = 0.01;
  std::size_t tau_feat_pairs = 10000;
  std::uint64_t seed = 0;
};

/// Linear-interpolated quantile of pairwise distances between distinct
/// records, over `pairs` seeded random pairs (0 for fewer than two rows).
double feature_distance_quantile(const Eigen::MatrixXd& features, double q, std::size_t pairs, std::uint64_t seed);

struct AuditResult {
  std::vector<NeighborReport> reports;
  double tau_pix = 0.0;
  double tau_feat = 0.0;
  int k = 0;
  std::string extractor_fingerprint;

  std::size_t flagged() const;
  /// reports.json contents.
  nlohmann::json to_json() const;
};

/// One report per generated image, in order. With `out_dir`, writes
/// reports.json and panels/query_%04d.png: the query framed in green on top,
/// pixel-space neighbors in the middle row, feature-space neighbors below.
AuditResult audit_run(const ImageSet& generated, const ImageSet& real, const FeatureExtractor& extractor,
                      const AuditOptions& options = {},
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace synthplankton
