#include "synthplankton/architectures.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "synthplankton/error.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

std::string to_string(GeneratorVariant v) {
  switch (v) {
    case GeneratorVariant::baseline: return "baseline";
    case GeneratorVariant::fastgan: return "fastgan";
    case GeneratorVariant::stylegan2: return "stylegan2";
  }
  return "?";
}

std::string to_string(DiscriminatorVariant v) {
  return v == DiscriminatorVariant::baseline ? "baseline" : "projected";
}

GeneratorVariant parse_generator_variant(const std::string& text) {
  if (text == "baseline") return GeneratorVariant::baseline;
  if (text == "fastgan") return GeneratorVariant::fastgan;
  if (text == "stylegan2") return GeneratorVariant::stylegan2;
  throw Error("unknown generator variant '" + text + "'");
}

DiscriminatorVariant parse_discriminator_variant(const std::string& text) {
  if (text == "baseline") return DiscriminatorVariant::baseline;
  if (text == "projected") return DiscriminatorVariant::projected;
  throw Error("unknown discriminator variant '" + text + "'");
}

bool in_resolution_ladder(int resolution) {
  return resolution >= 32 && resolution <= 1024 && std::has_single_bit(static_cast<unsigned>(resolution));
}

namespace {

int log2i(int v) { return std::bit_width(static_cast<unsigned>(v)) - 1; }

int max_projections(int resolution) { return log2i(resolution) - 1; }

}  // namespace

void GeneratorSpec::validate() const {
  if (!in_resolution_ladder(output_resolution))
    throw Error("resolution not in ladder: " + std::to_string(output_resolution) + " (expected 32..1024, power of two)");
  if (latent_dim < 1) throw Error("gen_spec.latent_dim must be >= 1");
  if (base_channels < 1) throw Error("gen_spec.base_channels must be >= 1");
  if (variant == GeneratorVariant::stylegan2) {
    if (style_dim < 1) throw Error("gen_spec.style_dim must be >= 1 for stylegan2");
    if (mapping_depth < 1) throw Error("gen_spec.mapping_depth must be >= 1 for stylegan2");
  }
}

void DiscriminatorSpec::validate(int resolution) const {
  if (!in_resolution_ladder(resolution)) throw Error("resolution not in ladder: " + std::to_string(resolution));
  if (base_channels < 1) throw Error("disc_spec.base_channels must be >= 1");
  if (variant == DiscriminatorVariant::projected) {
    if (n_projections < 1) throw Error("disc_spec.n_projections must be >= 1 for projected");
    if (n_projections > max_projections(resolution))
      throw Error("disc_spec.n_projections must be <= " + std::to_string(max_projections(resolution)) +
                  " at resolution " + std::to_string(resolution));
    if (feature_source.base_channels < 1) throw Error("disc_spec.feature_source.base_channels must be >= 1");
  }
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"variant", to_string(s.variant)},     {"latent_dim", s.latent_dim},
       {"base_channels", s.base_channels},    {"output_resolution", s.output_resolution},
       {"style_dim", s.style_dim},            {"mapping_depth", s.mapping_depth}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  GeneratorSpec d;
  s.variant = parse_generator_variant(j.value("variant", to_string(d.variant)));
  s.latent_dim = j.value("latent_dim", d.latent_dim);
  s.base_channels = j.value("base_channels", d.base_channels);
  s.output_resolution = j.value("output_resolution", d.output_resolution);
  s.style_dim = j.value("style_dim", d.style_dim);
  s.mapping_depth = j.value("mapping_depth", d.mapping_depth);
}

void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"variant", to_string(s.variant)},
       {"base_channels", s.base_channels},
       {"n_projections", s.n_projections},
       {"feature_source", {{"seed", s.feature_source.seed}, {"base_channels", s.feature_source.base_channels}}}};
}

void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  DiscriminatorSpec d;
  s.variant = parse_discriminator_variant(j.value("variant", to_string(d.variant)));
  s.base_channels = j.value("base_channels", d.base_channels);
  s.n_projections = j.value("n_projections", d.n_projections);
  s.feature_source = d.feature_source;
  if (j.contains("feature_source")) {
    const auto& f = j.at("feature_source");
    s.feature_source.seed = f.value("seed", d.feature_source.seed);
    s.feature_source.base_channels = f.value("base_channels", d.feature_source.base_channels);
  }
}

ParamBinder::ParamBinder(Tape& tape, const ParameterSet& values, ParameterSet* trainable)
    : tape_(tape), values_(values), trainable_(trainable) {}

Var ParamBinder::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  Var v = (trainable_ && trainable_->contains(name)) ? tape_.parameter(trainable_->at(name))
                                                     : tape_.constant(values_.at(name).value);
  bound_.emplace(name, v);
  return v;
}

namespace {

// He-style initialisation, zero biases.
void add_dense(ParameterSet& ps, const std::string& name, Shape weight_shape, int fan_in, Rng& rng,
               bool frozen = false, double gain = std::sqrt(2.0)) {
  const int bias_len = weight_shape[0];
  ps.add(name + ".w", Tensor::randn(std::move(weight_shape), rng, gain / std::sqrt(static_cast<double>(fan_in))), frozen);
  ps.add(name + ".b", Tensor({bias_len}), frozen);
}

void add_conv(ParameterSet& ps, const std::string& name, int out_c, int in_c, int k, Rng& rng, bool frozen = false) {
  add_dense(ps, name, {out_c, in_c, k, k}, in_c * k * k, rng, frozen);
}

void add_conv_transpose(ParameterSet& ps, const std::string& name, int in_c, int out_c, int k, int stride, Rng& rng) {
  ps.add(name + ".w",
         Tensor::randn({in_c, out_c, k, k}, rng, std::sqrt(2.0) / std::sqrt(static_cast<double>(in_c * k * k) / (stride * stride))));
  ps.add(name + ".b", Tensor({out_c}));
}

void add_linear(ParameterSet& ps, const std::string& name, int out, int in, Rng& rng, double gain = std::sqrt(2.0)) {
  add_dense(ps, name, {out, in}, in, rng, false, gain);
}

std::string idx(const char* prefix, int i) { return prefix + std::to_string(i); }

Var dense(ParamBinder& bind, const std::string& name, Var x) {
  return nn::linear(bind.tape(), x, bind(name + ".w"), bind(name + ".b"));
}

Var conv(ParamBinder& bind, const std::string& name, Var x, int stride, int pad) {
  return nn::conv2d(bind.tape(), x, bind(name + ".w"), bind(name + ".b"), stride, pad);
}

Var to_scores(Tape& t, Var logits) {
  const int batch = t.value(logits).dim(0);
  return nn::reshape(t, nn::sigmoid(t, logits), {batch});
}

int projection_channels(const FeatureSourceSpec& fs, int depth) {
  return std::min(fs.base_channels << depth, 256);
}

}  // namespace

std::vector<int> generator_channels(const GeneratorSpec& spec) {
  const int n_up = log2i(spec.output_resolution / 4);
  std::vector<int> ch(static_cast<std::size_t>(n_up) + 1);
  for (int s = 0; s <= n_up; ++s) ch[s] = std::min(spec.base_channels << (n_up - s), 256);
  return ch;
}

Generator Generator::build(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, {0x67656eu}));
  const auto ch = generator_channels(spec);
  const int n_up = static_cast<int>(ch.size()) - 1;
  ParameterSet ps;

  if (spec.variant == GeneratorVariant::stylegan2) {
    for (int i = 0; i < spec.mapping_depth; ++i)
      add_linear(ps, idx("map", i), spec.style_dim, i == 0 ? spec.latent_dim : spec.style_dim, rng);
    ps.add("const", Tensor::randn({1, ch[0], 4, 4}, rng, 1.0));
    for (int i = 0; i <= n_up; ++i) {
      add_conv(ps, idx("conv", i), ch[i], i == 0 ? ch[0] : ch[i - 1], 3, rng);
      add_linear(ps, idx("style", i) + ".scale", ch[i], spec.style_dim, rng, 1.0);
      add_linear(ps, idx("style", i) + ".bias", ch[i], spec.style_dim, rng, 1.0);
    }
    add_conv(ps, "rgb", 3, ch[n_up], 1, rng);
  } else {
    add_linear(ps, "fc", ch[0] * 16, spec.latent_dim, rng);
    for (int i = 0; i < n_up; ++i) add_conv_transpose(ps, idx("up", i), ch[i], ch[i + 1], 4, 2, rng);
    add_conv(ps, "rgb", 3, ch[n_up], 3, rng);
    if (spec.variant == GeneratorVariant::fastgan) {
      // Resolution r gates resolution 8r, i.e. stage s feeds stage s + 3.
      for (int s = 0; s + 3 <= n_up; ++s) {
        add_linear(ps, idx("sle", s) + ".fc1", ch[s], ch[s], rng);
        add_linear(ps, idx("sle", s) + ".fc2", ch[s + 3], ch[s], rng, 1.0);
      }
    }
  }
  return Generator(spec, std::move(ps));
}

Var Generator::mapping(ParamBinder& bind, Var z) const {
  if (spec_.variant != GeneratorVariant::stylegan2) throw Error("mapping network exists only for stylegan2");
  Tape& t = bind.tape();
  Var h = nn::pixel_norm(t, z);
  for (int i = 0; i < spec_.mapping_depth; ++i) h = nn::leaky_relu(t, dense(bind, idx("map", i), h));
  return h;
}

Var Generator::forward(ParamBinder& bind, Var z) const {
  Tape& t = bind.tape();
  const Tensor& zv = t.value(z);
  if (zv.rank() != 2 || zv.dim(1) != spec_.latent_dim)
    throw Error("latent dim: expected [B," + std::to_string(spec_.latent_dim) + "], got " + shape_str(zv.shape()));
  const int batch = zv.dim(0);
  const auto ch = generator_channels(spec_);
  const int n_up = static_cast<int>(ch.size()) - 1;

  Var x;
  if (spec_.variant == GeneratorVariant::stylegan2) {
    Var w = mapping(bind, z);
    x = nn::broadcast_batch(t, bind("const"), batch);
    for (int i = 0; i <= n_up; ++i) {
      if (i > 0) x = nn::upsample2x(t, x);
      x = conv(bind, idx("conv", i), x, 1, 1);
      Var scale = nn::add_scalar(t, dense(bind, idx("style", i) + ".scale", w), 1.0);
      Var bias = dense(bind, idx("style", i) + ".bias", w);
      x = nn::leaky_relu(t, nn::adain(t, x, scale, bias));
    }
    x = conv(bind, "rgb", x, 1, 0);
  } else {
    std::vector<Var> stages;
    x = nn::leaky_relu(t, nn::reshape(t, dense(bind, "fc", z), {batch, ch[0], 4, 4}));
    stages.push_back(x);
    for (int i = 0; i < n_up; ++i) {
      x = nn::leaky_relu(t, nn::conv_transpose2d(t, x, bind(idx("up", i) + ".w"), bind(idx("up", i) + ".b"), 2, 1));
      const int stage = i + 1;
      if (spec_.variant == GeneratorVariant::fastgan && stage >= 3) {
        const std::string p = idx("sle", stage - 3);
        x = sle_graph(t, stages[stage - 3], x, bind(p + ".fc1.w"), bind(p + ".fc1.b"), bind(p + ".fc2.w"),
                      bind(p + ".fc2.b"));
      }
      stages.push_back(x);
    }
    x = conv(bind, "rgb", x, 1, 1);
  }
  return nn::tanh(t, x);
}

Discriminator Discriminator::build(const DiscriminatorSpec& spec, int resolution, std::uint64_t seed) {
  spec.validate(resolution);
  Rng rng(derive_seed(seed, {0x646973u}));
  ParameterSet ps;
  ParameterSet projection;

  if (spec.variant == DiscriminatorVariant::baseline) {
    const int n_down = log2i(resolution / 4);
    int in_c = 3;
    for (int i = 0; i < n_down; ++i) {
      const int out_c = std::min(spec.base_channels << (i + 1), 256);
      add_conv(ps, idx("down", i), out_c, in_c, 4, rng);
      in_c = out_c;
    }
    add_linear(ps, "fc", 1, in_c * 16, rng, 1.0);
  } else {
    // The frozen source is seeded on its own so that every discriminator
    // built over the same source shares identical projections.
    Rng frozen_rng(derive_seed(spec.feature_source.seed, {0x70726fu}));
    int in_c = 3;
    for (int j = 0; j < spec.n_projections; ++j) {
      const int c = projection_channels(spec.feature_source, j);
      add_conv(projection, idx("feat", j), c, in_c, 3, frozen_rng, true);
      add_conv(projection, idx("mix", j), c, c, 1, frozen_rng, true);
      in_c = c;
      const int side = resolution >> (j + 1);
      add_conv(ps, idx("head", j) + ".conv", c, c, 3, rng);
      add_linear(ps, idx("head", j) + ".fc", 1, c * side * side, rng, 1.0);
    }
  }
  return Discriminator(spec, resolution, std::move(ps), std::move(projection));
}

std::vector<Var> Discriminator::project(Tape& tape, Var pixels) const {
  if (spec_.variant != DiscriminatorVariant::projected) throw Error("discriminator domain: baseline has no projections");
  ParamBinder frozen(tape, projection_);
  std::vector<Var> out;
  Var x = pixels;
  for (int j = 0; j < spec_.n_projections; ++j) {
    x = nn::leaky_relu(tape, conv(frozen, idx("feat", j), x, 2, 1));
    out.push_back(conv(frozen, idx("mix", j), x, 1, 0));
  }
  return out;
}

std::vector<Var> Discriminator::scores_from_pixels(ParamBinder& bind, Var pixels) const {
  Tape& t = bind.tape();
  const Tensor& pv = t.value(pixels);
  if (pv.rank() != 4 || pv.dim(1) != 3 || pv.dim(2) != resolution_ || pv.dim(3) != resolution_)
    throw Error("discriminator domain: expected [B,3," + std::to_string(resolution_) + "," +
                std::to_string(resolution_) + "] pixels, got " + shape_str(pv.shape()));
  if (spec_.variant == DiscriminatorVariant::projected) return scores_from_projections(bind, project(t, pixels));

  Var x = pixels;
  const int n_down = log2i(resolution_ / 4);
  for (int i = 0; i < n_down; ++i) x = nn::leaky_relu(t, conv(bind, idx("down", i), x, 2, 1));
  return {to_scores(t, dense(bind, "fc", nn::flatten(t, x)))};
}

std::vector<Var> Discriminator::scores_from_projections(ParamBinder& bind, const std::vector<Var>& projections) const {
  Tape& t = bind.tape();
  if (spec_.variant != DiscriminatorVariant::projected)
    throw Error("discriminator domain: baseline discriminator expects pixels");
  if (static_cast<int>(projections.size()) != spec_.n_projections)
    throw Error("discriminator domain: expected " + std::to_string(spec_.n_projections) + " projected maps, got " +
                std::to_string(projections.size()));
  std::vector<Var> out;
  for (int j = 0; j < spec_.n_projections; ++j) {
    const Tensor& pj = t.value(projections[j]);
    const int side = resolution_ >> (j + 1);
    if (pj.rank() != 4 || pj.dim(1) != projection_channels(spec_.feature_source, j) || pj.dim(2) != side || pj.dim(3) != side)
      throw Error("discriminator domain: projected map " + std::to_string(j) + " has shape " + shape_str(pj.shape()));
    Var h = nn::leaky_relu(t, conv(bind, idx("head", j) + ".conv", projections[j], 1, 1));
    out.push_back(to_scores(t, dense(bind, idx("head", j) + ".fc", nn::flatten(t, h))));
  }
  return out;
}

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed) { return Generator::build(spec, seed); }

Discriminator build_discriminator(const DiscriminatorSpec& spec, int resolution, std::uint64_t seed) {
  return Discriminator::build(spec, resolution, seed);
}

Tensor batch_to_tensor(const PixelBatch& batch) {
  const int h = batch.resolution.height, w = batch.resolution.width;
  Tensor t({batch.batch, 3, h, w});
  for (int b = 0; b < batch.batch; ++b)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < 3; ++ch)
          t[((static_cast<std::size_t>(b) * 3 + ch) * h + r) * w + c] = batch.at(b, r, c, ch);
  return t;
}

PixelBatch tensor_to_batch(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 3) throw Error("tensor_to_batch: expected [B,3,H,W]");
  PixelBatch out;
  out.batch = images.dim(0);
  out.resolution = {images.dim(2), images.dim(3)};
  out.data.resize(images.size());
  const int h = out.resolution.height, w = out.resolution.width;
  for (int b = 0; b < out.batch; ++b)
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          out.data[static_cast<std::size_t>(b) * out.image_size() + (static_cast<std::size_t>(r) * w + c) * 3 + ch] =
              images[((static_cast<std::size_t>(b) * 3 + ch) * h + r) * w + c];
  return out;
}

Tensor sample_latents(int batch, int latent_dim, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn({batch, latent_dim}, rng, 1.0);
}

PixelBatch generate(const Generator& gen, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != gen.spec().latent_dim)
    throw Error("latent dim: expected [B," + std::to_string(gen.spec().latent_dim) + "], got " + shape_str(z.shape()));
  if (!z.all_finite()) throw Error("latent dim: non-finite latent entries");
  Tape tape;
  ParamBinder bind(tape, gen.params());
  Var out = gen.forward(bind, tape.constant(z));
  return tensor_to_batch(tape.value(out));
}

Tensor map_latent(const Generator& gen, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != gen.spec().latent_dim)
    throw Error("latent dim: expected [B," + std::to_string(gen.spec().latent_dim) + "], got " + shape_str(z.shape()));
  Tape tape;
  ParamBinder bind(tape, gen.params());
  return tape.value(gen.mapping(bind, tape.constant(z)));
}

std::vector<Tensor> project_features(const Discriminator& disc, const PixelBatch& signed_pixels) {
  Tape tape;
  std::vector<Tensor> out;
  for (Var v : disc.project(tape, tape.constant(batch_to_tensor(signed_pixels)))) out.push_back(tape.value(v));
  return out;
}

std::vector<std::vector<double>> discriminate(const Discriminator& disc, const DiscriminatorInput& input) {
  Tape tape;
  ParamBinder bind(tape, disc.params());
  std::vector<Var> scores;
  if (const auto* pixels = std::get_if<PixelBatch>(&input)) {
    if (disc.spec().variant != DiscriminatorVariant::baseline)
      throw Error("discriminator domain: projected discriminator expects projected feature maps");
    scores = disc.scores_from_pixels(bind, tape.constant(batch_to_tensor(*pixels)));
  } else {
    if (disc.spec().variant != DiscriminatorVariant::projected)
      throw Error("discriminator domain: baseline discriminator expects pixels");
    std::vector<Var> maps;
    for (const auto& m : std::get<std::vector<Tensor>>(input)) maps.push_back(tape.constant(m));
    scores = disc.scores_from_projections(bind, maps);
  }
  std::vector<std::vector<double>> out;
  for (Var s : scores) {
    const Tensor& v = tape.value(s);
    out.emplace_back(v.values().begin(), v.values().end());
  }
  return out;
}

SLEBlock SLEBlock::make(Shape low_shape, Shape high_shape, std::uint64_t seed) {
  if (low_shape.size() != 3 || high_shape.size() != 3) throw Error("sle shapes: expected {C,H,W} shapes");
  Rng rng(derive_seed(seed, {0x736c65u}));
  SLEBlock b;
  const int cl = low_shape[0], ch = high_shape[0];
  b.fc1_weight = Tensor::randn({cl, cl}, rng, std::sqrt(2.0 / cl));
  b.fc1_bias = Tensor({cl});
  b.fc2_weight = Tensor::randn({ch, cl}, rng, std::sqrt(1.0 / cl));
  b.fc2_bias = Tensor({ch});
  b.low_shape = std::move(low_shape);
  b.high_shape = std::move(high_shape);
  return b;
}

Var sle_graph(Tape& t, Var x_low, Var x_high, Var fc1_w, Var fc1_b, Var fc2_w, Var fc2_b) {
  Var pooled = nn::global_avg_pool(t, x_low);
  Var hidden = nn::leaky_relu(t, nn::linear(t, pooled, fc1_w, fc1_b));
  Var gate = nn::sigmoid(t, nn::linear(t, hidden, fc2_w, fc2_b));
  return nn::channel_gate(t, x_high, gate);
}

namespace {

void check_sle_inputs(const SLEBlock& block, const Tensor& x_low, const Tensor* x_high) {
  auto matches = [](const Tensor& x, const Shape& s) {
    return x.rank() == 4 && x.dim(1) == s[0] && x.dim(2) == s[1] && x.dim(3) == s[2];
  };
  if (!matches(x_low, block.low_shape) || (x_high && (!matches(*x_high, block.high_shape) || x_high->dim(0) != x_low.dim(0))))
    throw Error("sle shapes: inputs do not match block " + shape_str(block.low_shape) + " -> " + shape_str(block.high_shape));
}

}  // namespace

Tensor sle_gate(const SLEBlock& block, const Tensor& x_low) {
  check_sle_inputs(block, x_low, nullptr);
  Tape t;
  Var pooled = nn::global_avg_pool(t, t.constant(x_low));
  Var hidden = nn::leaky_relu(t, nn::linear(t, pooled, t.constant(block.fc1_weight), t.constant(block.fc1_bias)));
  return t.value(nn::sigmoid(t, nn::linear(t, hidden, t.constant(block.fc2_weight), t.constant(block.fc2_bias))));
}

Tensor sle_forward(const SLEBlock& block, const Tensor& x_low, const Tensor& x_high) {
  check_sle_inputs(block, x_low, &x_high);
  Tape t;
  Var y = sle_graph(t, t.constant(x_low), t.constant(x_high), t.constant(block.fc1_weight), t.constant(block.fc1_bias),
                    t.constant(block.fc2_weight), t.constant(block.fc2_bias));
  return t.value(y);
}

Tensor adain(const Tensor& x, const AdaINParams& params) {
  if (x.rank() != 4) throw Error("adain channels: expected [B,C,H,W] input");
  const int batch = x.dim(0), channels = x.dim(1);
  auto expand = [&](const Tensor& p) {
    if (p.rank() == 1 && p.dim(0) == channels) {
      Tensor out({batch, channels});
      for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) out[static_cast<std::size_t>(b) * channels + c] = p[c];
      return out;
    }
    if (p.rank() == 2 && p.dim(0) == batch && p.dim(1) == channels) return p;
    throw Error("adain channels: style " + shape_str(p.shape()) + " vs feature map " + shape_str(x.shape()));
  };
  Tape t;
  Var y = nn::adain(t, t.constant(x), t.constant(expand(params.scale)), t.constant(expand(params.bias)));
  return t.value(y);
}

}  // namespace synthplankton
