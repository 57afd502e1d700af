#include "synthplankton/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "synthplankton/error.hpp"

namespace synthplankton {

namespace {

void check_finite(std::span<const double> scores, std::int64_t iteration) {
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw Error(iteration >= 0 ? "non-finite scores at iteration " + std::to_string(iteration)
                                 : std::string("non-finite scores"));
    }
  }
}

double mean_log(std::span<const double> values, bool complement) {
  if (values.empty()) throw Error("gan losses: empty score batch");
  double acc = 0.0;
  for (double s : values) acc += std::log(std::max(complement ? 1.0 - s : s, kLogClamp));
  return acc / static_cast<double>(values.size());
}

}  // namespace

GanLosses gan_losses(std::span<const double> real_scores, std::span<const double> fake_scores, GeneratorLoss form,
                     std::int64_t iteration) {
  check_finite(real_scores, iteration);
  check_finite(fake_scores, iteration);
  GanLosses l;
  l.d_loss = -mean_log(real_scores, false) - mean_log(fake_scores, true);
  l.g_loss = form == GeneratorLoss::non_saturating ? -mean_log(fake_scores, false) : mean_log(fake_scores, true);
  return l;
}

double generator_loss(std::span<const double> fake_scores, GeneratorLoss form, std::int64_t iteration) {
  check_finite(fake_scores, iteration);
  return form == GeneratorLoss::non_saturating ? -mean_log(fake_scores, false) : mean_log(fake_scores, true);
}

GanLosses projected_losses(std::span<const ScorePair> per_discriminator, GeneratorLoss form, std::int64_t iteration) {
  if (per_discriminator.empty()) throw Error("no discriminators");
  GanLosses total;
  for (const auto& pair : per_discriminator) {
    const GanLosses l = gan_losses(pair.real, pair.fake, form, iteration);
    total.d_loss += l.d_loss;
    total.g_loss += l.g_loss;
  }
  return total;
}

std::vector<double> d_loss_grad_real(std::span<const double> real_scores) {
  const double n = static_cast<double>(real_scores.size());
  std::vector<double> g(real_scores.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = real_scores[i] > kLogClamp ? -1.0 / (n * real_scores[i]) : 0.0;
  return g;
}

std::vector<double> d_loss_grad_fake(std::span<const double> fake_scores) {
  const double n = static_cast<double>(fake_scores.size());
  std::vector<double> g(fake_scores.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double c = 1.0 - fake_scores[i];
    g[i] = c > kLogClamp ? 1.0 / (n * c) : 0.0;
  }
  return g;
}

std::vector<double> g_loss_grad(std::span<const double> fake_scores, GeneratorLoss form) {
  const double n = static_cast<double>(fake_scores.size());
  std::vector<double> g(fake_scores.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (form == GeneratorLoss::non_saturating) {
      g[i] = fake_scores[i] > kLogClamp ? -1.0 / (n * fake_scores[i]) : 0.0;
    } else {
      const double c = 1.0 - fake_scores[i];
      g[i] = c > kLogClamp ? -1.0 / (n * c) : 0.0;
    }
  }
  return g;
}

}  // namespace synthplankton
