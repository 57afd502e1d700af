#include "synthplankton/audit.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace {

std::vector<Neighbor> top_k(const std::vector<double>& dist, const ImageSet& corpus, int k) {
  std::vector<std::size_t> order(dist.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back({order[i], corpus[order[i]].source_path, dist[order[i]]});
  return out;
}

std::vector<double> row(const Eigen::MatrixXd& m, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

nlohmann::json neighbors_json(const std::vector<Neighbor>& ns) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& n : ns) a.push_back({{"index", n.index}, {"record_id", n.record_id}, {"distance", n.distance}});
  return a;
}

ImageRecord panel(const ImageRecord& query, const NeighborReport& rep, const ImageSet& real, int k) {
  ImageRecord framed = resize_area(query, real.resolution());
  draw_border(framed, std::max(1, real.resolution().height / 32), 0.0f, 0.8f, 0.0f);
  const int cols = std::max(1, k);
  std::vector<const ImageRecord*> cells(static_cast<std::size_t>(cols) * 3, nullptr);
  cells[0] = &framed;
  for (std::size_t i = 0; i < rep.pixel_neighbors.size(); ++i) cells[cols + i] = &real[rep.pixel_neighbors[i].index];
  for (std::size_t i = 0; i < rep.feature_neighbors.size(); ++i)
    cells[2 * cols + i] = &real[rep.feature_neighbors[i].index];
  return make_grid(cells, cols);
}

}  // namespace

double rms_pixel_distance(const ImageRecord& a, const ImageRecord& b) {
  if (a.resolution != b.resolution || a.pixels.size() != b.pixels.size())
    throw Error("rms distance: sizes " + a.resolution.str() + " and " + b.resolution.str() + " differ");
  if (a.pixels.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.pixels.size()));
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("euclidean distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

NeighborIndex::NeighborIndex(const ImageSet& corpus, const FeatureExtractor* extractor)
    : corpus_(&corpus), extractor_(extractor) {
  if (corpus.empty()) throw Error("neighbor search: corpus is empty");
  if (!extractor) return;
  features_.resize(static_cast<Eigen::Index>(corpus.size()), extractor->output_dim());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto f = extractor->embed(corpus[i]);
    for (std::size_t c = 0; c < f.size(); ++c) features_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = f[c];
  }
}

std::vector<Neighbor> NeighborIndex::query(const ImageRecord& image, NeighborSpace space, int k) const {
  if (k < 1) throw Error("k must be >= 1 (got " + std::to_string(k) + ")");
  if (space == NeighborSpace::feature) {
    if (!extractor_) throw Error("extractor required for feature-space search");
    const auto f = extractor_->embed(image);
    return query_features(f, k);
  }
  const ImageRecord q = resize_area(image, corpus_->resolution());
  std::vector<double> dist(corpus_->size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = rms_pixel_distance(q, (*corpus_)[i]);
  return top_k(dist, *corpus_, k);
}

std::vector<Neighbor> NeighborIndex::query_features(std::span<const double> features, int k) const {
  if (k < 1) throw Error("k must be >= 1 (got " + std::to_string(k) + ")");
  if (features_.rows() == 0) throw Error("extractor required for feature-space search");
  std::vector<double> dist(corpus_->size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = euclidean_distance(features, row(features_, static_cast<Eigen::Index>(i)));
  return top_k(dist, *corpus_, k);
}

std::vector<Neighbor> nearest_neighbors(const ImageRecord& query, const ImageSet& corpus, NeighborSpace space, int k,
                                        const FeatureExtractor* extractor) {
  if (k < 1) throw Error("k must be >= 1 (got " + std::to_string(k) + ")");
  if (space == NeighborSpace::feature && !extractor) throw Error("extractor required for feature-space search");
  const NeighborIndex index(corpus, space == NeighborSpace::feature ? extractor : nullptr);
  return index.query(query, space, k);
}

double feature_distance_quantile(const Eigen::MatrixXd& features, double q, std::size_t pairs, std::uint64_t seed) {
  const auto n = static_cast<std::uint64_t>(features.rows());
  if (n < 2 || pairs == 0) return 0.0;
  Rng rng(derive_seed(seed, {0x7461u}));
  std::vector<double> d(pairs);
  for (auto& v : d) {
    const std::uint64_t i = rng() % n;
    std::uint64_t j = rng() % (n - 1);
    if (j >= i) ++j;
    v = (features.row(static_cast<Eigen::Index>(i)) - features.row(static_cast<Eigen::Index>(j))).norm();
  }
  std::sort(d.begin(), d.end());
  const double h = std::clamp(q, 0.0, 1.0) * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (h - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

std::size_t AuditResult::flagged() const {
  return static_cast<std::size_t>(
      std::count_if(reports.begin(), reports.end(), [](const NeighborReport& r) { return r.memorization_flag; }));
}

nlohmann::json AuditResult::to_json() const {
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& r : reports) {
    queries.push_back({{"query_id", r.query_id},
                       {"pixel_neighbors", neighbors_json(r.pixel_neighbors)},
                       {"feature_neighbors", neighbors_json(r.feature_neighbors)},
                       {"memorization_flag", r.memorization_flag}});
  }
  return {{"k", k},
          {"pixel_metric", "rms over [0,1] RGB"},
          {"feature_metric", "euclidean"},
          {"tau_pix", tau_pix},
          {"tau_feat", tau_feat},
          {"extractor_fingerprint", extractor_fingerprint},
          {"n_queries", reports.size()},
          {"n_flagged", flagged()},
          {"flag_rate", reports.empty() ? 0.0 : static_cast<double>(flagged()) / static_cast<double>(reports.size())},
          {"queries", queries}};
}

AuditResult audit_run(const ImageSet& generated, const ImageSet& real, const FeatureExtractor& extractor,
                      const AuditOptions& options, const std::optional<std::filesystem::path>& out_dir) {
  if (generated.empty()) throw Error("audit: generated set is empty");
  if (real.empty()) throw Error("audit: real set is empty");
  if (options.k < 1) throw Error("k must be >= 1 (got " + std::to_string(options.k) + ")");
  if (generated.resolution() != real.resolution())
    spdlog::warn("audit: generated images are {} but the real set is {}; resizing queries", generated.resolution().str(),
                 real.resolution().str());

  const NeighborIndex index(real, &extractor);
  AuditResult result;
  result.k = options.k;
  result.tau_pix = options.tau_pix;
  result.tau_feat = options.tau_feat ? *options.tau_feat
                                     : feature_distance_quantile(index.features(), options.tau_feat_quantile,
                                                                 options.tau_feat_pairs, options.seed);
  result.extractor_fingerprint = extractor.fingerprint();

  if (out_dir) std::filesystem::create_directories(*out_dir / "panels");
  for (std::size_t q = 0; q < generated.size(); ++q) {
    NeighborReport rep;
    rep.query_id = generated[q].source_path.empty() ? "query_" + std::to_string(q) : generated[q].source_path;
    rep.pixel_neighbors = index.query(generated[q], NeighborSpace::pixel, options.k);
    rep.feature_neighbors = index.query(generated[q], NeighborSpace::feature, options.k);
    rep.memorization_flag = rep.pixel_neighbors.front().distance < result.tau_pix ||
                            rep.feature_neighbors.front().distance < result.tau_feat;
    if (out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "query_%04zu.png", q);
      write_png(*out_dir / "panels" / name, panel(generated[q], rep, real, options.k));
    }
    result.reports.push_back(std::move(rep));
  }
  if (out_dir) {
    std::ofstream out(*out_dir / "reports.json");
    out << result.to_json().dump(2) << "\n";
    if (!out) throw Error("cannot write " + (*out_dir / "reports.json").string());
  }
  return result;
}

}  // namespace synthplankton
