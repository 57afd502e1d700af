#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "support.hpp"
#include "synthplankton/audit.hpp"
#include "synthplankton/dataset.hpp"
#include "synthplankton/error.hpp"

using namespace synthplankton;
using sp_test::noise_image;
using sp_test::solid;
using sp_test::TempDir;

namespace {

FeatureExtractor extractor() {
  ExtractorConfig c;
  c.kind = ExtractorKind::seeded_random_projection;
  c.output_dim = 16;
  c.input_resolution = 16;
  c.seed = 8;
  return FeatureExtractor::create(c);
}

ImageSet noise_corpus(int n, std::uint64_t seed, Resolution r = {16, 16}) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < n; ++i) recs.push_back(noise_image(r, seed + i, "img" + std::to_string(i)));
  return ImageSet(std::move(recs));
}

// Full sort of every corpus distance, ties broken by index.
std::vector<std::pair<double, std::size_t>> brute_force(const std::vector<double>& dists) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < dists.size(); ++i) all.emplace_back(dists[i], i);
  std::sort(all.begin(), all.end());
  return all;
}

double naive_rms(const ImageRecord& a, const ImageRecord& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.pixels.size()));
}

}  // namespace

TEST(DistanceTest, RmsHandValues) {
  EXPECT_EQ(rms_pixel_distance(solid({4, 4}, 0.0f), solid({4, 4}, 1.0f)), 1.0);
  EXPECT_NEAR(rms_pixel_distance(solid({4, 4}, 0.25f), solid({4, 4}, 0.75f)), 0.5, 1e-12);
  EXPECT_THROW(rms_pixel_distance(solid({4, 4}, 0.0f), solid({4, 8}, 0.0f)), Error);
  const std::vector<double> a{0.0, 3.0}, b{4.0, 0.0};
  EXPECT_EQ(euclidean_distance(a, b), 5.0);
}

TEST(DistanceTest, MetricAxioms) {
  const ImageSet set = noise_corpus(12, 100);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(rms_pixel_distance(set[i], set[i]), 0.0);
    for (std::size_t j = 0; j < set.size(); ++j) {
      const double dij = rms_pixel_distance(set[i], set[j]);
      EXPECT_EQ(dij, rms_pixel_distance(set[j], set[i]));
      if (i != j) EXPECT_GT(dij, 0.0);
      for (std::size_t k = 0; k < set.size(); ++k)
        EXPECT_LE(dij, rms_pixel_distance(set[i], set[k]) + rms_pixel_distance(set[k], set[j]) + 1e-12);
    }
  }
}

TEST(NeighborTest, PixelSearchMatchesBruteForce) {
  const ImageSet corpus = noise_corpus(60, 1);
  const NeighborIndex index(corpus, nullptr);
  for (int q = 0; q < 5; ++q) {
    const ImageRecord query = noise_image({16, 16}, 500 + q);
    std::vector<double> d;
    for (const auto& r : corpus.records()) d.push_back(naive_rms(query, r));
    const auto oracle = brute_force(d);
    const auto got = index.query(query, NeighborSpace::pixel, 5);
    ASSERT_EQ(got.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(got[i].index, oracle[i].second);
      EXPECT_NEAR(got[i].distance, oracle[i].first, 1e-12);
      EXPECT_EQ(got[i].record_id, corpus[got[i].index].source_path);
    }
  }
}

TEST(NeighborTest, FeatureSearchMatchesBruteForce) {
  const ImageSet corpus = noise_corpus(40, 2);
  const FeatureExtractor ex = extractor();
  const NeighborIndex index(corpus, &ex);
  const ImageRecord query = noise_image({16, 16}, 999);
  const auto fq = ex.embed(query);
  std::vector<double> d;
  for (const auto& r : corpus.records()) {
    const auto fr = ex.embed(r);
    double s = 0.0;
    for (std::size_t i = 0; i < fq.size(); ++i) s += (fq[i] - fr[i]) * (fq[i] - fr[i]);
    d.push_back(std::sqrt(s));
  }
  const auto oracle = brute_force(d);
  const auto got = nearest_neighbors(query, corpus, NeighborSpace::feature, 4, &ex);
  ASSERT_EQ(got.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(got[i].index, oracle[i].second);
    EXPECT_NEAR(got[i].distance, oracle[i].first, 1e-9);
  }
}

TEST(NeighborTest, ZerosAndOnesCorpus) {
  const ImageSet corpus({solid({8, 8}, 0.0f, "zeros"), solid({8, 8}, 1.0f, "ones")});
  const auto got = nearest_neighbors(solid({8, 8}, 0.0f), corpus, NeighborSpace::pixel, 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].record_id, "zeros");
  EXPECT_EQ(got[0].distance, 0.0);
  EXPECT_EQ(got[1].record_id, "ones");
  EXPECT_EQ(got[1].distance, 1.0);
}

TEST(NeighborTest, TiesBreakByIndexAndKIsClamped) {
  const ImageSet corpus({solid({4, 4}, 0.5f, "a"), solid({4, 4}, 0.5f, "b"), solid({4, 4}, 0.5f, "c")});
  const auto got = nearest_neighbors(solid({4, 4}, 0.5f), corpus, NeighborSpace::pixel, 10);
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0].index, 0u);
  EXPECT_EQ(got[1].index, 1u);
  EXPECT_EQ(got[2].index, 2u);
}

TEST(NeighborTest, Errors) {
  const ImageSet corpus = noise_corpus(3, 1);
  try {
    nearest_neighbors(corpus[0], corpus, NeighborSpace::pixel, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("k must be >= 1"), std::string::npos);
  }
  try {
    nearest_neighbors(corpus[0], corpus, NeighborSpace::feature, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("extractor required"), std::string::npos);
  }
  EXPECT_THROW(nearest_neighbors(corpus[0], ImageSet(), NeighborSpace::pixel, 1), Error);
}

TEST(NeighborTest, LargerQueriesAreResized) {
  const ImageSet corpus({solid({8, 8}, 0.2f, "dark"), solid({8, 8}, 0.8f, "light")});
  const auto got = nearest_neighbors(solid({32, 32}, 0.8f), corpus, NeighborSpace::pixel, 1);
  EXPECT_EQ(got[0].record_id, "light");
  EXPECT_NEAR(got[0].distance, 0.0, 1e-6);
}

TEST(QuantileTest, SmallCases) {
  Eigen::MatrixXd one(1, 2);
  one << 1, 2;
  EXPECT_EQ(feature_distance_quantile(one, 0.5, 100, 1), 0.0);
  Eigen::MatrixXd two(2, 2);
  two << 0, 0, 3, 4;
  EXPECT_NEAR(feature_distance_quantile(two, 0.01, 50, 1), 5.0, 1e-12);
  Eigen::MatrixXd line(4, 1);
  line << 0, 1, 2, 10;
  const double q0 = feature_distance_quantile(line, 0.0, 2000, 3);
  const double q1 = feature_distance_quantile(line, 1.0, 2000, 3);
  EXPECT_EQ(q0, 1.0);
  EXPECT_EQ(q1, 10.0);
  EXPECT_EQ(feature_distance_quantile(line, 0.3, 500, 4), feature_distance_quantile(line, 0.3, 500, 4));
}

TEST(AuditTest, PlantedDuplicateIsTheOnlyFlag) {
  const ImageSet real = noise_corpus(30, 10);
  std::vector<ImageRecord> gen;
  for (int i = 0; i < 15; ++i) gen.push_back(solid({16, 16}, 0.05f * static_cast<float>(i), "gen" + std::to_string(i)));
  ImageRecord plant = real[7];
  plant.source_path = "planted";
  gen.insert(gen.begin() + 4, plant);

  TempDir dir("audit");
  AuditOptions o;
  o.tau_feat = 1e-9;
  const AuditResult r = audit_run(ImageSet(gen), real, extractor(), o, dir.path());
  ASSERT_EQ(r.reports.size(), 16u);
  EXPECT_EQ(r.flagged(), 1u);
  EXPECT_TRUE(r.reports[4].memorization_flag);
  EXPECT_EQ(r.reports[4].query_id, "planted");
  EXPECT_EQ(r.reports[4].pixel_neighbors[0].index, 7u);
  EXPECT_EQ(r.reports[4].pixel_neighbors[0].distance, 0.0);
  EXPECT_EQ(r.reports[4].feature_neighbors[0].index, 7u);
  EXPECT_EQ(r.reports[4].pixel_neighbors.size(), 3u);

  std::ifstream in(dir / "reports.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["n_flagged"], 1);
  EXPECT_NEAR(j["flag_rate"].get<double>(), 1.0 / 16.0, 1e-12);
  EXPECT_TRUE(std::filesystem::exists(dir / "panels/query_0000.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "panels/query_0015.png"));
}

TEST(AuditTest, DefaultFeatureThresholdComesFromRealPairs) {
  const ImageSet real = noise_corpus(20, 40);
  const FeatureExtractor ex = extractor();
  AuditOptions o;
  o.seed = 5;
  const AuditResult r = audit_run(noise_corpus(2, 900), real, ex, o);
  const NeighborIndex idx(real, &ex);
  EXPECT_EQ(r.tau_feat, feature_distance_quantile(idx.features(), o.tau_feat_quantile, o.tau_feat_pairs, o.seed));
  EXPECT_GT(r.tau_feat, 0.0);
  EXPECT_EQ(r.tau_pix, 0.02);
  EXPECT_EQ(r.extractor_fingerprint, ex.fingerprint());
}

TEST(AuditTest, EmptyInputsRejected) {
  EXPECT_THROW(audit_run(ImageSet(), noise_corpus(3, 1), extractor()), Error);
  EXPECT_THROW(audit_run(noise_corpus(3, 1), ImageSet(), extractor()), Error);
}
