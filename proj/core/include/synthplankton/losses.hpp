#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace synthplankton {

/// Log arguments are clamped from below at this value.
inline constexpr double kLogClamp = 1e-7;

enum class GeneratorLoss {
  /// -mean log D(G(z)); the default.
  non_saturating,
  /// mean log(1 - D(G(z))), the min-max objective taken literally.
  literal,
};

struct GanLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

/// d_loss = -mean log D(x) - mean log(1 - D(G(z))), g_loss per `form`.
/// Throws "non-finite scores at iteration N" on NaN/inf input.
GanLosses gan_losses(std::span<const double> real_scores, std::span<const double> fake_scores,
                     GeneratorLoss form = GeneratorLoss::non_saturating, std::int64_t iteration = -1);

/// The generator half of gan_losses alone.
double generator_loss(std::span<const double> fake_scores, GeneratorLoss form = GeneratorLoss::non_saturating,
                      std::int64_t iteration = -1);

/// Real and fake scores of one discriminator D_i.
struct ScorePair {
  std::vector<double> real;
  std::vector<double> fake;
};

/// Sum over discriminators of gan_losses. Throws "no discriminators" when empty.
GanLosses projected_losses(std::span<const ScorePair> per_discriminator, GeneratorLoss form = GeneratorLoss::non_saturating,
                           std::int64_t iteration = -1);

/// Partial derivatives of d_loss with respect to each real / fake score.
std::vector<double> d_loss_grad_real(std::span<const double> real_scores);
std::vector<double> d_loss_grad_fake(std::span<const double> fake_scores);
/// Partial derivative of g_loss with respect to each fake score.
std::vector<double> g_loss_grad(std::span<const double> fake_scores, GeneratorLoss form = GeneratorLoss::non_saturating);

}  // namespace synthplankton
