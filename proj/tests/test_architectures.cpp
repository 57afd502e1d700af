#include <gtest/gtest.h>

#include "support.hpp"
#include "synthplankton/architectures.hpp"
#include "synthplankton/error.hpp"

using namespace synthplankton;
using sp_test::grad_check;
using sp_test::signed_images;

namespace {

GeneratorSpec small_gen(GeneratorVariant v) {
  GeneratorSpec s;
  s.variant = v;
  s.latent_dim = 12;
  s.base_channels = 4;
  s.output_resolution = 32;
  s.style_dim = 12;
  s.mapping_depth = 2;
  return s;
}

DiscriminatorSpec small_disc(DiscriminatorVariant v) {
  DiscriminatorSpec s;
  s.variant = v;
  s.base_channels = 4;
  if (v == DiscriminatorVariant::projected) {
    s.n_projections = 2;
    s.feature_source = {.seed = 3, .base_channels = 4};
  }
  return s;
}

void expect_error(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
    FAIL() << "expected error containing '" << needle << "'";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

Var sum_scores(Tape& t, const std::vector<Var>& scores) {
  Var acc = scores.front();
  for (std::size_t i = 1; i < scores.size(); ++i) acc = nn::add(t, acc, scores[i]);
  return acc;
}

class GeneratorVariants : public ::testing::TestWithParam<GeneratorVariant> {};

}  // namespace

TEST_P(GeneratorVariants, GradientsMatchFiniteDifferences) {
  Generator gen = build_generator(small_gen(GetParam()), 21);
  const Tensor z = sample_latents(2, 12, 4);
  const auto r = grad_check(
      gen.params(), [&](ParamBinder& b) { return gen.forward(b, b.tape().constant(z)); }, 22, 25);
  EXPECT_EQ(r.checked, 25);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_P(GeneratorVariants, OutputShapeRangeAndDeterminism) {
  const GeneratorSpec spec = small_gen(GetParam());
  const Generator a = build_generator(spec, 5);
  const Generator b = build_generator(spec, 5);
  const Generator c = build_generator(spec, 6);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_FALSE(a.params() == c.params());
  const Tensor z = sample_latents(3, 12, 9);
  const PixelBatch out = generate(a, z);
  EXPECT_EQ(out.batch, 3);
  EXPECT_EQ(out.resolution, (Resolution{32, 32}));
  ASSERT_EQ(out.data.size(), 3u * 32 * 32 * 3);
  for (double v : out.data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(out.data, generate(b, z).data);
}

TEST_P(GeneratorVariants, WrongLatentWidthIsRejected) {
  const Generator g = build_generator(small_gen(GetParam()), 5);
  expect_error([&] { generate(g, sample_latents(2, 11, 1)); }, "latent dim");
  Tensor bad = sample_latents(1, 12, 1);
  bad[0] = std::nan("");
  expect_error([&] { generate(g, bad); }, "latent dim");
}

INSTANTIATE_TEST_SUITE_P(Architectures, GeneratorVariants,
                         ::testing::Values(GeneratorVariant::baseline, GeneratorVariant::fastgan,
                                           GeneratorVariant::stylegan2),
                         [](const auto& info) { return to_string(info.param); });

TEST(GeneratorTest, ResolutionLadder) {
  for (int r : {32, 64, 128, 256, 512, 1024}) EXPECT_TRUE(in_resolution_ladder(r));
  for (int r : {0, 16, 48, 100, 2048}) EXPECT_FALSE(in_resolution_ladder(r));
  GeneratorSpec s = small_gen(GeneratorVariant::baseline);
  s.output_resolution = 48;
  expect_error([&] { s.validate(); }, "resolution not in ladder");
}

TEST(GeneratorTest, LargerResolutionsBuild) {
  GeneratorSpec s = small_gen(GeneratorVariant::fastgan);
  s.output_resolution = 64;
  const Generator g = build_generator(s, 1);
  EXPECT_EQ(generate(g, sample_latents(1, 12, 2)).resolution, (Resolution{64, 64}));
}

TEST(GeneratorTest, MappingOnlyForStyleVariant) {
  const Generator style = build_generator(small_gen(GeneratorVariant::stylegan2), 3);
  const Tensor w = map_latent(style, sample_latents(2, 12, 1));
  EXPECT_EQ(w.shape(), (Shape{2, 12}));
  const Generator base = build_generator(small_gen(GeneratorVariant::baseline), 3);
  EXPECT_THROW(map_latent(base, sample_latents(2, 12, 1)), Error);
}

TEST(GeneratorTest, SpecJsonRoundTrip) {
  const GeneratorSpec s = small_gen(GeneratorVariant::stylegan2);
  EXPECT_EQ(nlohmann::json(s).get<GeneratorSpec>(), s);
  const DiscriminatorSpec d = small_disc(DiscriminatorVariant::projected);
  EXPECT_EQ(nlohmann::json(d).get<DiscriminatorSpec>(), d);
  EXPECT_THROW(parse_generator_variant("biggan"), Error);
}

TEST(DiscriminatorTest, BaselineGradients) {
  Discriminator d = build_discriminator(small_disc(DiscriminatorVariant::baseline), 32, 30);
  const Tensor x = signed_images(2, 32, 31);
  const auto r = grad_check(
      d.params(),
      [&](ParamBinder& b) { return sum_scores(b.tape(), d.scores_from_pixels(b, b.tape().constant(x))); }, 32, 25);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(DiscriminatorTest, ProjectedGradientsReachPixelsAndHeads) {
  Discriminator d = build_discriminator(small_disc(DiscriminatorVariant::projected), 32, 33);
  ParameterSet combined = d.params();
  combined.add("pixels", signed_images(2, 32, 34));
  const auto r = grad_check(
      combined, [&](ParamBinder& b) { return sum_scores(b.tape(), d.scores_from_pixels(b, b("pixels"))); }, 35, 40);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(combined.at("pixels").grad.size(), 0u);
}

TEST(DiscriminatorTest, ProjectionStackIsFrozen) {
  Discriminator d = build_discriminator(small_disc(DiscriminatorVariant::projected), 32, 36);
  ASSERT_GT(d.projection_params().tensor_count(), 0u);
  for (const auto& p : d.projection_params().all()) EXPECT_TRUE(p.frozen) << p.name;
  const std::uint64_t before = d.projection_params().checksum();
  d.params().zero_grad();
  {
    Tape t;
    ParamBinder b(t, d.params(), &d.params());
    const Var s = sum_scores(t, d.scores_from_pixels(b, t.constant(signed_images(2, 32, 37))));
    t.backward(s, Tensor({2}, 1.0));
  }
  Adam opt;
  opt.step(d.params());
  EXPECT_EQ(d.projection_params().checksum(), before);
}

TEST(DiscriminatorTest, ScoresAreProbabilitiesPerHead) {
  const Discriminator base = build_discriminator(small_disc(DiscriminatorVariant::baseline), 32, 1);
  const Discriminator proj = build_discriminator(small_disc(DiscriminatorVariant::projected), 32, 1);
  const PixelBatch px = tensor_to_batch(signed_images(3, 32, 2));

  const auto sb = discriminate(base, px);
  ASSERT_EQ(sb.size(), 1u);
  ASSERT_EQ(sb[0].size(), 3u);
  const auto sp = discriminate(proj, project_features(proj, px));
  ASSERT_EQ(sp.size(), 2u);
  for (const auto& head : sp)
    for (double s : head) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
}

TEST(DiscriminatorTest, WrongDomainIsRejected) {
  const Discriminator base = build_discriminator(small_disc(DiscriminatorVariant::baseline), 32, 1);
  const Discriminator proj = build_discriminator(small_disc(DiscriminatorVariant::projected), 32, 1);
  const PixelBatch px = tensor_to_batch(signed_images(2, 32, 2));
  expect_error([&] { discriminate(proj, px); }, "discriminator domain");
  expect_error([&] { discriminate(base, project_features(proj, px)); }, "discriminator domain");
  expect_error([&] { project_features(base, px); }, "discriminator domain");
  expect_error([&] { discriminate(base, tensor_to_batch(signed_images(2, 64, 2))); }, "discriminator domain");
  auto maps = project_features(proj, px);
  maps.pop_back();
  expect_error([&] { discriminate(proj, maps); }, "discriminator domain");
}

TEST(DiscriminatorTest, ProjectionCountBounded) {
  DiscriminatorSpec s = small_disc(DiscriminatorVariant::projected);
  s.n_projections = 0;
  EXPECT_THROW(s.validate(32), Error);
  s.n_projections = 99;
  EXPECT_THROW(s.validate(32), Error);
}

TEST(SLETest, OutputIsGatedHighInput) {
  const SLEBlock block = SLEBlock::make({4, 4, 4}, {3, 8, 8}, 40);
  Rng rng(41);
  const Tensor low = Tensor::randn({2, 4, 4, 4}, rng, 1.0);
  const Tensor high = Tensor::randn({2, 3, 8, 8}, rng, 1.0);
  const Tensor gate = sle_gate(block, low);
  const Tensor out = sle_forward(block, low, high);
  ASSERT_EQ(gate.shape(), (Shape{2, 3}));
  ASSERT_EQ(out.shape(), high.shape());
  for (double g : gate.values()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 64; ++i) {
        const std::size_t k = (static_cast<std::size_t>(b) * 3 + c) * 64 + i;
        EXPECT_DOUBLE_EQ(out[k], gate[b * 3 + c] * high[k]);
      }
}

TEST(SLETest, GateDependsOnlyOnLowInputMean) {
  const SLEBlock block = SLEBlock::make({2, 4, 4}, {2, 8, 8}, 42);
  Tensor a({1, 2, 4, 4}, 0.5);
  Tensor b = a;
  b[0] += 0.25;
  b[1] -= 0.25;  // same channel mean
  const Tensor ga = sle_gate(block, a);
  const Tensor gb = sle_gate(block, b);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-12);
}

TEST(SLETest, GraphFormMatchesAndDifferentiates) {
  const SLEBlock block = SLEBlock::make({4, 4, 4}, {3, 8, 8}, 43);
  Rng rng(44);
  ParameterSet p;
  p.add("low", Tensor::randn({2, 4, 4, 4}, rng, 1.0));
  p.add("high", Tensor::randn({2, 3, 8, 8}, rng, 1.0));
  p.add("fc1_w", block.fc1_weight);
  p.add("fc1_b", block.fc1_bias);
  p.add("fc2_w", block.fc2_weight);
  p.add("fc2_b", block.fc2_bias);
  auto fwd = [](ParamBinder& b) {
    return sle_graph(b.tape(), b("low"), b("high"), b("fc1_w"), b("fc1_b"), b("fc2_w"), b("fc2_b"));
  };
  {
    Tape t;
    ParamBinder b(t, p);
    const Tensor& g = t.value(fwd(b));
    const Tensor ref = sle_forward(block, p.at("low").value, p.at("high").value);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(g[i], ref[i], 1e-12);
  }
  const auto r = grad_check(p, fwd, 45, 30);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(SLETest, ShapeMismatch) {
  const SLEBlock block = SLEBlock::make({4, 4, 4}, {3, 8, 8}, 46);
  expect_error([&] { sle_forward(block, Tensor({1, 5, 4, 4}), Tensor({1, 3, 8, 8})); }, "sle shapes");
  expect_error([&] { sle_forward(block, Tensor({1, 4, 4, 4}), Tensor({2, 3, 8, 8})); }, "sle shapes");
}

TEST(AdaINTest, OutputMomentsFollowStyle) {
  Rng rng(50);
  const Tensor x = Tensor::randn({2, 3, 8, 8}, rng, 2.0);
  AdaINParams style{Tensor({3}, {2.0, 0.5, 1.0}), Tensor({3}, {-1.0, 0.0, 3.0})};
  const Tensor y = adain(x, style);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, sq = 0.0;
      for (int i = 0; i < 64; ++i) mean += y[(b * 3 + c) * 64 + i];
      mean /= 64;
      for (int i = 0; i < 64; ++i) sq += std::pow(y[(b * 3 + c) * 64 + i] - mean, 2);
      EXPECT_NEAR(mean, style.bias[c], 1e-9);
      EXPECT_NEAR(std::sqrt(sq / 64), style.scale[c], 1e-6);
    }
}

TEST(AdaINTest, PerSampleStyleAndChannelMismatch) {
  Rng rng(51);
  const Tensor x = Tensor::randn({2, 2, 4, 4}, rng, 1.0);
  const Tensor y = adain(x, {Tensor({2, 2}, {1.0, 1.0, 3.0, 3.0}), Tensor({2, 2}, {0.0, 0.0, 5.0, 5.0})});
  double m1 = 0.0;
  for (int i = 0; i < 16; ++i) m1 += y[2 * 16 + i];
  EXPECT_NEAR(m1 / 16, 5.0, 1e-9);
  expect_error([&] { adain(x, {Tensor({3}, 1.0), Tensor({3}, 0.0)}); }, "adain channels");
}

TEST(AdaINTest, ConstantChannelMapsToBias) {
  const Tensor y = adain(Tensor({1, 1, 4, 4}, 7.0), {Tensor({1}, {3.0}), Tensor({1}, {0.25})});
  for (double v : y.values()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(BatchConversionTest, RoundTrip) {
  const Tensor t = signed_images(2, 32, 60);
  const Tensor back = batch_to_tensor(tensor_to_batch(t));
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], t[i]);
}
