#include "synthplankton/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

FeatureStats compute_stats(const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  if (rows.rows() < 2) throw Error("insufficient samples: need at least 2 feature vectors");
  FeatureStats s;
  s.n = static_cast<std::size_t>(rows.rows());
  s.mean = rows.colwise().mean().transpose();
  Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  s.cov = 0.5 * (cov + cov.transpose());
  return s;
}

FeatureStats compute_stats(const FeatureSet& features) {
  FeatureStats s = compute_stats(features.vectors.cast<double>());
  s.fingerprint = features.extractor_fingerprint;
  return s;
}

namespace {

double eigen_tolerance(const Eigen::VectorXd& evals) {
  return 1e-6 * std::max(1.0, evals.cwiseAbs().maxCoeff());
}

Eigen::VectorXd clamped_eigenvalues(const Eigen::MatrixXd& sym, Eigen::MatrixXd* vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw Error("fid: sqrtm failed (eigendecomposition did not converge)");
  Eigen::VectorXd evals = solver.eigenvalues();
  const double tol = eigen_tolerance(evals);
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    if (evals[i] < -tol) throw Error("fid: sqrtm failed (matrix not positive semidefinite)");
    evals[i] = std::max(evals[i], 0.0);
  }
  if (vectors) *vectors = solver.eigenvectors();
  return evals;
}

// Tr((A B)^{1/2}) through the similar symmetric matrix A^{1/2} B A^{1/2}.
double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd vecs;
  Eigen::VectorXd evals = clamped_eigenvalues(a, &vecs);
  Eigen::MatrixXd sqrt_a = vecs * evals.cwiseSqrt().asDiagonal() * vecs.transpose();
  Eigen::MatrixXd m = sqrt_a * b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  return clamped_eigenvalues(m, nullptr).cwiseSqrt().sum();
}

}  // namespace

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim())
    throw Error("incompatible stats: dimension mismatch");
  if (!a.fingerprint.empty() && !b.fingerprint.empty() && a.fingerprint != b.fingerprint)
    throw Error("incompatible stats: extractor fingerprints differ");
  if (!a.cov.allFinite() || !b.cov.allFinite() || !a.mean.allFinite() || !b.mean.allFinite())
    throw Error("fid: sqrtm failed (non-finite statistics)");

  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double trace_term = a.cov.trace() + b.cov.trace();
  const double cross = 0.5 * (trace_sqrt_product(a.cov, b.cov) + trace_sqrt_product(b.cov, a.cov));
  const double d = mean_term + trace_term - 2.0 * cross;
  if (d < 0.0) {
    const double tol = 1e-6 * std::max(1.0, trace_term);
    if (d < -tol) throw Error("fid: sqrtm failed (negative distance " + std::to_string(d) + ")");
    return 0.0;
  }
  return d;
}

std::string to_string(KidEstimator e) { return e == KidEstimator::biased ? "biased" : "unbiased"; }

KidEstimator parse_kid_estimator(const std::string& text) {
  if (text == "biased") return KidEstimator::biased;
  if (text == "unbiased") return KidEstimator::unbiased;
  throw Error("unknown kid estimator '" + text + "'");
}

void to_json(nlohmann::json& j, const KidOptions& o) {
  j = {{"estimator", to_string(o.estimator)},
       {"subset_size", o.subset_size},
       {"n_subsets", o.n_subsets},
       {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, KidOptions& o) {
  KidOptions d;
  o.estimator = parse_kid_estimator(j.value("estimator", to_string(d.estimator)));
  o.subset_size = j.value("subset_size", d.subset_size);
  o.n_subsets = j.value("n_subsets", d.n_subsets);
  o.seed = j.value("seed", d.seed);
}

double kid_kernel(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw Error("kid kernel: dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  const double base = dot / static_cast<double>(u.size()) + 1.0;
  return base * base * base;
}

namespace {

std::vector<Eigen::Index> pick_subset(Eigen::Index n, std::size_t k, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (k == idx.size()) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  Eigen::MatrixXd k = ((x * y.transpose()) * inv_d).array() + 1.0;
  return k.array().cube();
}

}  // namespace

double kid(const Eigen::Ref<const Eigen::MatrixXd>& real, const Eigen::Ref<const Eigen::MatrixXd>& fake,
           const KidOptions& options) {
  if (real.rows() == 0 || fake.rows() == 0) throw Error("kid: empty feature set");
  if (real.cols() != fake.cols()) throw Error("incompatible stats: dimension mismatch");
  const std::size_t m = options.subset_size;
  if (m == 0) throw Error("kid: subset size must be positive");
  if (m > static_cast<std::size_t>(std::min(real.rows(), fake.rows())))
    throw Error("kid: subset exceeds set (" + std::to_string(m) + ")");
  if (options.estimator == KidEstimator::unbiased && m < 2) throw Error("kid: unbiased estimator needs >= 2 samples");
  if (options.n_subsets == 0) throw Error("kid: n_subsets must be positive");

  const double md = static_cast<double>(m);
  double total = 0.0;
  for (std::size_t s = 0; s < options.n_subsets; ++s) {
    auto ri = pick_subset(real.rows(), m, derive_seed(options.seed, {s, 0}));
    auto fi = pick_subset(fake.rows(), m, derive_seed(options.seed, {s, 1}));
    Eigen::MatrixXd x = real(ri, Eigen::all);
    Eigen::MatrixXd y = fake(fi, Eigen::all);
    const Eigen::MatrixXd kxx = kernel_matrix(x, x);
    const Eigen::MatrixXd kyy = kernel_matrix(y, y);
    const Eigen::MatrixXd kxy = kernel_matrix(x, y);
    double mmd2;
    if (options.estimator == KidEstimator::biased) {
      mmd2 = kxx.sum() / (md * md) + kyy.sum() / (md * md) - 2.0 * kxy.sum() / (md * md);
    } else {
      mmd2 = (kxx.sum() - kxx.trace()) / (md * (md - 1.0)) + (kyy.sum() - kyy.trace()) / (md * (md - 1.0)) -
             2.0 * kxy.sum() / (md * md);
    }
    total += mmd2;
  }
  return total / static_cast<double>(options.n_subsets);
}

double kid(const FeatureSet& real, const FeatureSet& fake, const KidOptions& options) {
  if (real.extractor_fingerprint != fake.extractor_fingerprint)
    throw Error("incompatible stats: extractor fingerprints differ");
  return kid(real.vectors.cast<double>(), fake.vectors.cast<double>(), options);
}

namespace {

double diversity_of(std::size_t count, std::size_t width, const auto& value_at) {
  if (count < 2) throw Error("insufficient batch: diversity needs at least 2 images");
  double acc = 0.0;
  const double n = static_cast<double>(count);
  for (std::size_t p = 0; p < width; ++p) {
    double mean = 0.0;
    for (std::size_t b = 0; b < count; ++b) mean += value_at(b, p);
    mean /= n;
    double var = 0.0;
    for (std::size_t b = 0; b < count; ++b) {
      const double d = value_at(b, p) - mean;
      var += d * d;
    }
    acc += std::sqrt(var / n);
  }
  return width == 0 ? 0.0 : acc / static_cast<double>(width);
}

}  // namespace

double diversity_score(const ImageSet& images) {
  const std::size_t width = images.resolution().pixel_count() * 3;
  return diversity_of(images.size(), width,
                      [&](std::size_t b, std::size_t p) { return static_cast<double>(images[b].pixels[p]); });
}

double diversity_score(const PixelBatch& batch) {
  return diversity_of(static_cast<std::size_t>(std::max(batch.batch, 0)), batch.image_size(),
                      [&](std::size_t b, std::size_t p) { return batch.data[b * batch.image_size() + p]; });
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"fid", fid},
                      {"kid", kid},
                      {"kid_estimator", to_string(kid_estimator)},
                      {"n_real", n_real},
                      {"n_fake", n_fake},
                      {"extractor_fingerprint", extractor_fingerprint}};
  j["diversity"] = diversity ? nlohmann::json(*diversity) : nlohmann::json(nullptr);
  return j;
}

MetricReport evaluate(const FeatureSet& real, const FeatureSet& fake, const KidOptions& kid_options) {
  if (real.extractor_fingerprint != fake.extractor_fingerprint)
    throw Error("incompatible stats: extractor fingerprints differ");
  MetricReport r;
  r.fid = fid(compute_stats(real), compute_stats(fake));
  r.kid = kid(real, fake, kid_options);
  r.kid_estimator = kid_options.estimator;
  r.n_real = real.size();
  r.n_fake = fake.size();
  r.extractor_fingerprint = real.extractor_fingerprint;
  return r;
}

}  // namespace synthplankton
