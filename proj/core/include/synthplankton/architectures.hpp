#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthplankton/autograd.hpp"
#include "synthplankton/image.hpp"
#include "synthplankton/parameters.hpp"

namespace synthplankton {

enum class GeneratorVariant { baseline, fastgan, stylegan2 };
enum class DiscriminatorVariant { baseline, projected };

std::string to_string(GeneratorVariant v);
std::string to_string(DiscriminatorVariant v);
GeneratorVariant parse_generator_variant(const std::string& text);
DiscriminatorVariant parse_discriminator_variant(const std::string& text);

/// Supported square output sizes.
bool in_resolution_ladder(int resolution);

struct GeneratorSpec {
  GeneratorVariant variant = GeneratorVariant::baseline;
  int latent_dim = 64;
  /// Channel count at full resolution; doubles per halving, capped at 256.
  int base_channels = 8;
  int output_resolution = 32;
  int style_dim = 64;     // stylegan2 only
  int mapping_depth = 2;  // stylegan2 only

  /// Throws "resolution not in ladder" or a field-specific message.
  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

/// The frozen network the projected discriminator looks through: a seeded
/// stack of stride-2 3x3 convolutions with random 1x1 channel mixing on each
/// tapped depth. It is never trained.
struct FeatureSourceSpec {
  std::uint64_t seed = 0;
  int base_channels = 8;
  bool operator==(const FeatureSourceSpec&) const = default;
};

struct DiscriminatorSpec {
  DiscriminatorVariant variant = DiscriminatorVariant::baseline;
  int base_channels = 8;
  int n_projections = 0;  // projected only
  FeatureSourceSpec feature_source;

  void validate(int resolution) const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);
void to_json(nlohmann::json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::json& j, DiscriminatorSpec& s);

/// Resolves parameter names to tape variables. Names found in `trainable`
/// become gradient-tracked leaves; everything else is a constant snapshot.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParameterSet& values, ParameterSet* trainable = nullptr);
  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  const ParameterSet& values_;
  ParameterSet* trainable_;
  std::map<std::string, Var> bound_;
};

/// Channel count at each generator stage (4x4 first).
std::vector<int> generator_channels(const GeneratorSpec& spec);

class Generator {
 public:
  /// Deterministic in (spec, seed).
  static Generator build(const GeneratorSpec& spec, std::uint64_t seed);

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// z [B, latent_dim] -> images [B,3,R,R] in [-1,1].
  Var forward(ParamBinder& bind, Var z) const;
  /// stylegan2 only: z [B, latent_dim] -> style codes [B, style_dim].
  Var mapping(ParamBinder& bind, Var z) const;

 private:
  Generator(GeneratorSpec spec, ParameterSet params) : spec_(std::move(spec)), params_(std::move(params)) {}
  GeneratorSpec spec_;
  ParameterSet params_;
};

class Discriminator {
 public:
  static Discriminator build(const DiscriminatorSpec& spec, int resolution, std::uint64_t seed);

  const DiscriminatorSpec& spec() const { return spec_; }
  int resolution() const { return resolution_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  /// Frozen projection network (empty for the baseline variant).
  const ParameterSet& projection_params() const { return projection_; }

  /// Projected variant: one feature map per tapped depth, computed with the
  /// frozen stack. Gradients reach `pixels`, never the stack.
  std::vector<Var> project(Tape& tape, Var pixels) const;
  /// Scores in (0,1), shape [B], one entry per discriminator (a single one
  /// for the baseline variant).
  std::vector<Var> scores_from_pixels(ParamBinder& bind, Var pixels) const;
  std::vector<Var> scores_from_projections(ParamBinder& bind, const std::vector<Var>& projections) const;

 private:
  Discriminator(DiscriminatorSpec spec, int resolution, ParameterSet params, ParameterSet projection)
      : spec_(std::move(spec)), resolution_(resolution), params_(std::move(params)), projection_(std::move(projection)) {}
  DiscriminatorSpec spec_;
  int resolution_;
  ParameterSet params_;
  ParameterSet projection_;
};

/// Convenience wrappers over the graph-building methods.
Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorSpec& spec, int resolution, std::uint64_t seed);

/// Throws "latent dim" if z's width differs from spec.latent_dim.
PixelBatch generate(const Generator& gen, const Tensor& z);
/// Standard-normal latents, seeded.
Tensor sample_latents(int batch, int latent_dim, std::uint64_t seed);
Tensor map_latent(const Generator& gen, const Tensor& z);

/// [B,H,W,3] batch <-> [B,3,H,W] tensor.
Tensor batch_to_tensor(const PixelBatch& batch);
PixelBatch tensor_to_batch(const Tensor& images);

std::vector<Tensor> project_features(const Discriminator& disc, const PixelBatch& signed_pixels);

using DiscriminatorInput = std::variant<PixelBatch, std::vector<Tensor>>;
/// Pixels for the baseline variant, projected maps for the projected one;
/// anything else throws "discriminator domain".
std::vector<std::vector<double>> discriminate(const Discriminator& disc, const DiscriminatorInput& input);

/// Skip-layer excitation: y = sigmoid(fc2(lrelu(fc1(avgpool(x_low))))) * x_high,
/// with the gate broadcast over x_high's spatial positions.
struct SLEBlock {
  Shape low_shape;   // {C_low, H_low, W_low}
  Shape high_shape;  // {C_high, H_high, W_high}
  Tensor fc1_weight;  // [C_low, C_low]
  Tensor fc1_bias;    // [C_low]
  Tensor fc2_weight;  // [C_high, C_low]
  Tensor fc2_bias;    // [C_high]

  static SLEBlock make(Shape low_shape, Shape high_shape, std::uint64_t seed);
};

/// x_low [B,C_low,H_low,W_low], x_high [B,C_high,H_high,W_high]. Throws
/// "sle shapes" on mismatch.
Tensor sle_forward(const SLEBlock& block, const Tensor& x_low, const Tensor& x_high);
/// Graph form used inside the FastGAN generator.
Var sle_graph(Tape& tape, Var x_low, Var x_high, Var fc1_w, Var fc1_b, Var fc2_w, Var fc2_b);
/// Gate values [B, C_high] for the given low-resolution input.
Tensor sle_gate(const SLEBlock& block, const Tensor& x_low);

/// Per-channel style for AdaIN. Either [C] (shared over the batch) or [B,C].
struct AdaINParams {
  Tensor scale;
  Tensor bias;
};

/// out_c = scale_c * (x_c - mean(x_c)) / sqrt(var(x_c) + 1e-8) + bias_c,
/// population variance over spatial positions. Throws "adain channels".
Tensor adain(const Tensor& x, const AdaINParams& params);

}  // namespace synthplankton
