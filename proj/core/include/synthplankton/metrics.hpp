#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "synthplankton/features.hpp"
#include "synthplankton/image.hpp"

namespace synthplankton {

/// Gaussian fit of a feature set: mean and unbiased (N-1) covariance.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t n = 0;
  /// Empty when built from raw matrices; otherwise must match to compare.
  std::string fingerprint;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Throws "insufficient samples" for fewer than two rows.
FeatureStats compute_stats(const Eigen::Ref<const Eigen::MatrixXd>& rows);
FeatureStats compute_stats(const FeatureSet& features);

/// Fréchet distance between two Gaussian fits:
///   |m_a - m_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})
/// The trace of the square root is taken from the eigenvalues of the
/// symmetric product C_a^{1/2} C_b C_a^{1/2}, averaged with the swapped form
/// so fid(a, b) == fid(b, a) bit-for-bit.
double fid(const FeatureStats& a, const FeatureStats& b);

enum class KidEstimator { biased, unbiased };
std::string to_string(KidEstimator e);
KidEstimator parse_kid_estimator(const std::string& text);

struct KidOptions {
  KidEstimator estimator = KidEstimator::unbiased;
  std::size_t subset_size = 100;
  std::size_t n_subsets = 100;
  std::uint64_t seed = 0;

  bool operator==(const KidOptions&) const = default;
};

void to_json(nlohmann::json& j, const KidOptions& o);
void from_json(const nlohmann::json& j, KidOptions& o);

/// Polynomial kernel (u.v / d + 1)^3.
double kid_kernel(std::span<const double> u, std::span<const double> v);

/// Squared MMD under kid_kernel, averaged over seeded subsets. A subset that
/// spans a whole set uses it in original order.
double kid(const FeatureSet& real, const FeatureSet& fake, const KidOptions& options);
double kid(const Eigen::Ref<const Eigen::MatrixXd>& real, const Eigen::Ref<const Eigen::MatrixXd>& fake,
           const KidOptions& options);

inline constexpr double kModeCollapseThreshold = 0.01;

/// Mean over pixel positions/channels of the population standard deviation
/// across the batch. Throws "insufficient batch" for fewer than two images.
double diversity_score(const ImageSet& images);
double diversity_score(const PixelBatch& batch);

inline bool flags_mode_collapse(double diversity, double threshold = kModeCollapseThreshold) {
  return diversity < threshold;
}

struct MetricReport {
  double fid = 0.0;
  double kid = 0.0;
  KidEstimator kid_estimator = KidEstimator::unbiased;
  std::optional<double> diversity;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::string extractor_fingerprint;

  nlohmann::json to_json() const;
};

/// FID + KID between two cached feature sets (fingerprints must match).
MetricReport evaluate(const FeatureSet& real, const FeatureSet& fake, const KidOptions& kid_options);

}  // namespace synthplankton
