// Acceptance suite: one test per criterion, each reported on its own line.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "support.hpp"
#include "synthplankton/architectures.hpp"
#include "synthplankton/audit.hpp"
#include "synthplankton/config.hpp"
#include "synthplankton/dataset.hpp"
#include "synthplankton/losses.hpp"
#include "synthplankton/metrics.hpp"
#include "synthplankton/pipeline.hpp"
#include "synthplankton/report.hpp"
#include "synthplankton/trainer.hpp"

#ifndef SYNTHPLANKTON_SOURCE_DIR
#define SYNTHPLANKTON_SOURCE_DIR "."
#endif

using namespace synthplankton;
using sp_test::grad_check;
using sp_test::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::filesystem::path config_path(const std::string& name) {
  return std::filesystem::path(SYNTHPLANKTON_SOURCE_DIR) / "configs" / name;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Eigen::MatrixXd gaussian_rows(int n, const Eigen::VectorXd& m, const Eigen::VectorXd& sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, m.size());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < m.size(); ++c) x(r, c) = m[c] + sd[c] * g(rng);
  return x;
}

double brute_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, bool unbiased) {
  const auto k = [](const Eigen::MatrixXd& a, int i, const Eigen::MatrixXd& b, int j) {
    double dot = 0.0;
    for (int c = 0; c < a.cols(); ++c) dot += a(i, c) * b(j, c);
    const double base = dot / static_cast<double>(a.cols()) + 1.0;
    return base * base * base;
  };
  const int m = static_cast<int>(x.rows());
  const int n = static_cast<int>(y.rows());
  double xx = 0, yy = 0, xy = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (!unbiased || i != j) xx += k(x, i, x, j);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!unbiased || i != j) yy += k(y, i, y, j);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) xy += k(x, i, y, j);
  const double dm = m, dn = n;
  if (unbiased) return xx / (dm * (dm - 1)) + yy / (dn * (dn - 1)) - 2 * xy / (dm * dn);
  return xx / (dm * dm) + yy / (dn * dn) - 2 * xy / (dm * dn);
}

// Sorted (distance, index) list over the whole corpus.
std::vector<std::pair<double, std::size_t>> full_sort(const std::vector<double>& d) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < d.size(); ++i) all.emplace_back(d[i], i);
  std::sort(all.begin(), all.end());
  return all;
}

TrainOptions options_from(const ExperimentConfig& c) {
  TrainOptions o;
  o.eval = c.metrics;
  return o;
}

class CriterionPrinter : public ::testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const bool ok = !info.result()->Failed();
    lines_.push_back(std::string(ok ? "PASS" : "FAIL") + "  " + info.name());
  }
  void OnTestProgramEnd(const ::testing::UnitTest&) override {
    std::printf("\n==== acceptance summary ====\n");
    for (const auto& l : lines_) std::printf("%s\n", l.c_str());
    std::fflush(stdout);
  }

 private:
  std::vector<std::string> lines_;
};

}  // namespace

TEST(Acceptance, C01_FidAnalyticOracle) {
  const auto t0 = Clock::now();
  FeatureStats a, b;
  a.mean = Eigen::VectorXd::Constant(1, 0.0);
  a.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  b.mean = Eigen::VectorXd::Constant(1, 1.0);
  b.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);
  EXPECT_NEAR(fid(a, b), 2.0, 1e-9);

  Eigen::VectorXd m1(8), m2(8), s1(8), s2(8);
  m1 << 0.0, 0.5, 1.0, -1.0, 0.0, 2.0, 0.0, 1.0;
  m2 << 1.0, 0.5, 0.0, -1.0, 1.0, 1.0, 0.0, 0.0;
  s1 << 1.0, 1.0, 2.0, 0.5, 1.0, 1.0, 3.0, 1.0;
  s2 << 2.0, 1.0, 1.0, 0.5, 1.5, 1.0, 1.0, 2.0;
  const double closed = (m1 - m2).squaredNorm() + (s1 - s2).squaredNorm();
  const double sampled =
      fid(compute_stats(gaussian_rows(4096, m1, s1, 101)), compute_stats(gaussian_rows(4096, m2, s2, 202)));
  std::printf("  closed form %.6f  sampled %.6f  rel %.4f\n", closed, sampled, std::abs(sampled - closed) / closed);
  EXPECT_LE(std::abs(sampled - closed) / closed, 0.05);
  EXPECT_LT(seconds_since(t0), 60.0);
}

TEST(Acceptance, C02_FidIdentityAndSymmetry) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_self = 0.0, worst_sym = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = 1 + t % 16;
    auto make = [&] {
      Eigen::MatrixXd x(d, d + 2);
      for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
      FeatureStats s;
      s.mean = Eigen::VectorXd(d);
      for (int i = 0; i < d; ++i) s.mean[i] = g(rng);
      s.cov = x * x.transpose() / static_cast<double>(d);
      return s;
    };
    const FeatureStats a = make(), b = make();
    worst_self = std::max(worst_self, fid(a, a));
    worst_sym = std::max(worst_sym, std::abs(fid(a, b) - fid(b, a)));
  }
  std::printf("  max fid(a,a) %.3g  max |fid(a,b)-fid(b,a)| %.3g\n", worst_self, worst_sym);
  EXPECT_LE(worst_self, 1e-9);
  EXPECT_LE(worst_sym, 1e-9);
}

TEST(Acceptance, C03_KidBruteForceOracle) {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(500, 64), y(500, 64);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  for (int i = 0; i < y.size(); ++i) y.data()[i] = 0.3 + 1.1 * g(rng);
  KidOptions o;
  o.subset_size = 500;
  o.n_subsets = 1;
  for (auto est : {KidEstimator::unbiased, KidEstimator::biased}) {
    o.estimator = est;
    const double got = kid(x, y, o);
    const double want = brute_mmd2(x, y, est == KidEstimator::unbiased);
    std::printf("  %s kid %.9f  brute force %.9f\n", to_string(est).c_str(), got, want);
    EXPECT_NEAR(got, want, 1e-6);
  }
  o.estimator = KidEstimator::biased;
  EXPECT_LE(std::abs(kid(x, x, o)), 1e-9);

  Eigen::MatrixXd u(1, 1), v(1, 1);
  u << 1.0;
  v << 0.0;
  o.subset_size = 1;
  EXPECT_EQ(kid(u, v, o), 7.0);
}

TEST(Acceptance, C04_AugmentationProtocolCounts) {
  const ImageSet raw = make_toy_data(961, {12, 12}, 4);
  const ImageSet crops = random_crop_expand(raw, {8, 8}, 10, 99);
  const ImageSet flipped = hflip_augment(crops);
  const ImageSet center = hflip_augment(center_crop(raw, {8, 8}));
  std::printf("  %zu -> %zu -> %zu; center+flip %zu\n", raw.size(), crops.size(), flipped.size(), center.size());
  EXPECT_EQ(crops.size(), 9610u);
  EXPECT_EQ(flipped.size(), 19220u);
  EXPECT_EQ(center.size(), 1922u);
  EXPECT_EQ(hflip_augment(random_crop_expand(raw, {8, 8}, 10, 99)).manifest(), flipped.manifest());
  EXPECT_NE(random_crop_expand(raw, {8, 8}, 10, 100).manifest(), crops.manifest());
}

TEST(Acceptance, C05_GradientChecks) {
  const Tensor z = sample_latents(2, 64, 5);
  for (auto v : {GeneratorVariant::baseline, GeneratorVariant::fastgan, GeneratorVariant::stylegan2}) {
    GeneratorSpec spec;
    spec.variant = v;
    Generator gen = build_generator(spec, 50);
    const auto r = grad_check(gen.params(), [&](ParamBinder& b) { return gen.forward(b, b.tape().constant(z)); }, 51);
    std::printf("  generator %-9s max rel error %.3g over %d\n", to_string(v).c_str(), r.max_rel_error, r.checked);
    EXPECT_EQ(r.checked, 10);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
  const Tensor x = sp_test::signed_images(2, 32, 52);
  for (auto v : {DiscriminatorVariant::baseline, DiscriminatorVariant::projected}) {
    DiscriminatorSpec spec;
    spec.variant = v;
    if (v == DiscriminatorVariant::projected) spec.n_projections = 2;
    Discriminator disc = build_discriminator(spec, 32, 53);
    const auto r = grad_check(
        disc.params(),
        [&](ParamBinder& b) {
          const auto s = disc.scores_from_pixels(b, b.tape().constant(x));
          Var acc = s[0];
          for (std::size_t i = 1; i < s.size(); ++i) acc = nn::add(b.tape(), acc, s[i]);
          return acc;
        },
        54);
    std::printf("  discriminator %-9s max rel error %.3g over %d\n", to_string(v).c_str(), r.max_rel_error,
                r.checked);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(Acceptance, C06_AdaINMoments) {
  Rng rng(6);
  const Tensor x = Tensor::randn({3, 16, 8, 8}, rng, 1.7);
  const Tensor ys = Tensor::randn({16}, rng, 2.0);
  const Tensor yb = Tensor::randn({16}, rng, 2.0);
  const Tensor out = adain(x, {ys, yb});
  double worst = 0.0;
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 16; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * 16 + c) * 64;
      double mean = 0.0, sq = 0.0;
      for (int i = 0; i < 64; ++i) mean += out[base + i];
      mean /= 64.0;
      for (int i = 0; i < 64; ++i) sq += (out[base + i] - mean) * (out[base + i] - mean);
      worst = std::max({worst, std::abs(mean - yb[c]), std::abs(std::sqrt(sq / 64.0) - std::abs(ys[c]))});
    }
  std::printf("  worst moment error %.3g\n", worst);
  EXPECT_LE(worst, 1e-4);
}

TEST(Acceptance, C07_SLEContract) {
  SLEBlock block = SLEBlock::make({8, 4, 4}, {4, 16, 16}, 7);
  Rng rng(8);
  const Tensor low = Tensor::randn({2, 8, 4, 4}, rng, 1.0);
  const Tensor high = Tensor::randn({2, 4, 16, 16}, rng, 1.0);

  // Direct recomputation of the gate from the block weights.
  std::vector<double> gate(2 * 4);
  for (int b = 0; b < 2; ++b) {
    std::vector<double> pooled(8, 0.0), hidden(8, 0.0);
    for (int c = 0; c < 8; ++c) {
      for (int i = 0; i < 16; ++i) pooled[c] += low[(b * 8 + c) * 16 + i];
      pooled[c] /= 16.0;
    }
    for (int o = 0; o < 8; ++o) {
      double s = block.fc1_bias[o];
      for (int c = 0; c < 8; ++c) s += block.fc1_weight[o * 8 + c] * pooled[c];
      hidden[o] = s > 0 ? s : 0.2 * s;
    }
    for (int o = 0; o < 4; ++o) {
      double s = block.fc2_bias[o];
      for (int c = 0; c < 8; ++c) s += block.fc2_weight[o * 8 + c] * hidden[c];
      gate[b * 4 + o] = 1.0 / (1.0 + std::exp(-s));
    }
  }
  const Tensor out = sle_forward(block, low, high);
  double worst = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 256; ++i) {
        const std::size_t k = (static_cast<std::size_t>(b) * 4 + c) * 256 + i;
        worst = std::max(worst, std::abs(out[k] - gate[b * 4 + c] * high[k]));
      }
  std::printf("  max |sle - gate*x_high| %.3g\n", worst);
  EXPECT_LE(worst, 1e-9);

  block.fc2_weight.fill(0.0);
  block.fc2_bias.fill(40.0);
  const Tensor identity = sle_forward(block, low, high);
  block.fc2_bias.fill(-800.0);
  const Tensor annihilated = sle_forward(block, low, high);
  for (std::size_t i = 0; i < high.size(); ++i) {
    ASSERT_EQ(identity[i], high[i]);
    ASSERT_EQ(annihilated[i], 0.0);
  }
}

TEST(Acceptance, C08_ProjectedObjectiveReduction) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int t = 0; t < 50; ++t) {
    ScorePair p;
    for (int i = 0; i < 8; ++i) {
      p.real.push_back(u(rng));
      p.fake.push_back(u(rng));
    }
    const GanLosses single = gan_losses(p.real, p.fake);
    const GanLosses projected = projected_losses(std::vector<ScorePair>{p});
    ASSERT_EQ(single.d_loss, projected.d_loss);
    ASSERT_EQ(single.g_loss, projected.g_loss);
  }

  ExperimentConfig c = load_config(config_path("toy_projected.json"));
  c.train.iterations = 200;
  c.train.eval_every = 200;
  c.train.checkpoint_every = 200;
  c.metrics.n_samples = 64;
  c.metrics.kid.subset_size = 32;
  c.metrics.kid.n_subsets = 10;
  const ImageSet data = prepare_dataset(c.data, std::nullopt);
  const std::uint64_t before = init_state(c.gen_spec, c.disc_spec, c.train).discriminator.projection_params().checksum();
  TrainOptions o = options_from(c);
  o.debug_checks = true;
  const TrainResult r = train(c.gen_spec, c.disc_spec, data, c.train, o);
  const std::uint64_t after = r.state.discriminator.projection_params().checksum();
  std::printf("  projection checksum %016llx -> %016llx after %lld steps\n", static_cast<unsigned long long>(before),
              static_cast<unsigned long long>(after), static_cast<long long>(r.state.iteration));
  EXPECT_EQ(r.state.iteration, 200);
  EXPECT_EQ(before, after);
}

TEST(Acceptance, C09_TrainingSmokeTest) {
  const std::map<std::string, bool> variants{{"toy_baseline.json", true}, {"toy_fastgan.json", false},
                                             {"toy_stylegan2.json", true}};
  for (const auto& [name, asserted] : variants) {
    const ExperimentConfig c = load_config(config_path(name));
    const ImageSet data = prepare_dataset(c.data, std::nullopt);
    ASSERT_EQ(data.size(), 512u);
    const auto t0 = Clock::now();
    const TrainResult r = train(c.gen_spec, c.disc_spec, data, c.train, options_from(c));
    const double secs = seconds_since(t0);
    const double initial = r.state.metric_history.front().fid;
    const double final_fid = r.state.metric_history.back().fid;
    const double gain = (initial - final_fid) / initial;
    std::printf("  %-9s %5.0f s  fid %.4f -> %.4f  improvement %.1f%%%s\n", to_string(c.gen_spec.variant).c_str(), secs,
                initial, final_fid, 100.0 * gain, asserted ? "" : " (recorded)");
    EXPECT_EQ(r.state.iteration, 500);
    EXPECT_LT(secs, 600.0);
    if (asserted) EXPECT_GE(gain, 0.20) << name;
  }
}

TEST(Acceptance, C10_MemorizationAudit) {
  const ImageSet real = make_toy_data(1000, {32, 32}, 10);
  ExtractorConfig ec;
  ec.kind = ExtractorKind::seeded_random_projection;
  ec.output_dim = 64;
  ec.input_resolution = 32;
  ec.seed = 10;
  const FeatureExtractor ex = FeatureExtractor::create(ec);

  GeneratorSpec gs;
  DiscriminatorSpec ds;
  TrainConfig tc;
  tc.seed = 10;
  const ImageSet fake = snapshot_samples(init_state(gs, ds, tc), 15, 11);
  std::vector<ImageRecord> queries = fake.records();
  ImageRecord planted = real[123];
  planted.source_path = "planted";
  queries.insert(queries.begin() + 9, planted);
  const ImageSet generated(queries);

  const AuditResult r = audit_run(generated, real, ex);
  std::printf("  flagged %zu of %zu  tau_feat %.4f\n", r.flagged(), r.reports.size(), r.tau_feat);
  ASSERT_EQ(r.reports.size(), 16u);
  EXPECT_EQ(r.flagged(), 1u);
  EXPECT_TRUE(r.reports[9].memorization_flag);
  EXPECT_EQ(r.reports[9].pixel_neighbors[0].index, 123u);
  EXPECT_EQ(r.reports[9].pixel_neighbors[0].distance, 0.0);

  std::vector<std::vector<double>> real_feats;
  for (const auto& rec : real.records()) real_feats.push_back(ex.embed(rec));
  for (std::size_t q = 0; q < generated.size(); ++q) {
    std::vector<double> dp, df;
    const auto fq = ex.embed(generated[q]);
    for (std::size_t i = 0; i < real.size(); ++i) {
      double sp = 0.0;
      for (std::size_t p = 0; p < generated[q].pixels.size(); ++p) {
        const double d = static_cast<double>(generated[q].pixels[p]) - static_cast<double>(real[i].pixels[p]);
        sp += d * d;
      }
      dp.push_back(std::sqrt(sp / static_cast<double>(generated[q].pixels.size())));
      double sf = 0.0;
      for (std::size_t p = 0; p < fq.size(); ++p) sf += (fq[p] - real_feats[i][p]) * (fq[p] - real_feats[i][p]);
      df.push_back(std::sqrt(sf));
    }
    const auto op = full_sort(dp);
    const auto of = full_sort(df);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.reports[q].pixel_neighbors[k].index, op[k].second) << "query " << q;
      EXPECT_NEAR(r.reports[q].pixel_neighbors[k].distance, op[k].first, 1e-12);
      EXPECT_EQ(r.reports[q].feature_neighbors[k].index, of[k].second) << "query " << q;
      EXPECT_NEAR(r.reports[q].feature_neighbors[k].distance, of[k].first, 1e-9);
    }
  }
}

TEST(Acceptance, C11_ModeCollapseDetector) {
  const ImageSet blank(std::vector<ImageRecord>(16, sp_test::solid({32, 32}, 0.0f, "blank")));
  const double d = diversity_score(blank);
  std::printf("  blank batch diversity %.3g\n", d);
  EXPECT_EQ(d, 0.0);
  EXPECT_TRUE(flags_mode_collapse(d));
  EXPECT_FALSE(flags_mode_collapse(diversity_score(make_toy_data(16, {32, 32}, 1))));
}

TEST(Acceptance, C12_ReportParity) {
  auto row = [](std::string model, std::int64_t size, std::string res, std::int64_t it, int batch, std::string time,
                double fid, double kid, std::string gpu) {
    return RunReport{std::move(model), size, std::move(res), it, batch, std::move(time), fid, kid, std::move(gpu)};
  };
  const std::vector<RunReport> rows{
      row("ProjectedGAN", 1922, "256x256", 1427400, 64, "04d 00h 45m", 113.107, 0.050, "GTX TITAN X"),
      row("FastGAN", 9610, "1024x1024", 50000, 8, "00d 16h 00m", 130.201, 0.083, "GTX TITAN X"),
      row("StyleGANv2", 1922, "512x512", 3000000, 4, "02d 14h 58m", 29.330, 0.014, "2x RTX 2080 Ti")};
  const std::string md = emit_table(rows, TableFormat::markdown);
  std::printf("%s", md.c_str());
  std::istringstream in(md);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0],
            "| GAN Model | Data Size | Resolution | Iterations | Batch Size | Training Time | FID | KID | GPU Model |");
  EXPECT_NE(lines[4].find("| **29.330** | **0.014** |"), std::string::npos);
  EXPECT_EQ(lines[2].find("**"), std::string::npos);
  EXPECT_EQ(lines[3].find("**"), std::string::npos);
  EXPECT_NE(lines[2].find("| 113.107 | 0.050 |"), std::string::npos);
  const std::string csv = emit_table(rows, TableFormat::csv);
  EXPECT_EQ(parse_table_csv(csv), rows);
}

TEST(Acceptance, C13_EndToEndDeterminism) {
  ExperimentConfig c = load_config(config_path("toy_baseline.json"));
  c.train.iterations = 100;
  c.train.eval_every = 25;
  c.train.deterministic_history = true;
  c.audit.enabled = false;
  TempDir a("det_a"), b("det_b");
  RunOptions o;
  o.run_dir = a.path();
  run_experiment(c, o);
  o.run_dir = b.path();
  run_experiment(c, o);
  const std::string ha = read_file(a / "history.csv");
  const std::string hb = read_file(b / "history.csv");
  std::printf("  history.csv %zu bytes, %s\n", ha.size(), ha == hb ? "identical" : "DIFFERENT");
  EXPECT_FALSE(ha.empty());
  EXPECT_EQ(ha, hb);
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
