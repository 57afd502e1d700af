#include "synthplankton/config.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace synthplankton {

namespace {

template <typename T>
T section(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

void check(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

std::string got(double v) {
  std::ostringstream s;
  s << "(got " << v << ")";
  return s.str();
}

}  // namespace

bool AuditSettings::operator==(const AuditSettings& o) const {
  return enabled == o.enabled && n_generated == o.n_generated && options.k == o.options.k &&
         options.tau_pix == o.options.tau_pix && options.tau_feat == o.options.tau_feat &&
         options.tau_feat_quantile == o.options.tau_feat_quantile &&
         options.tau_feat_pairs == o.options.tau_feat_pairs && options.seed == o.options.seed;
}

void to_json(nlohmann::json& j, const DataSettings& d) {
  j = {{"prepare", d.prepare},
       {"crop", d.crop.str()},
       {"crop_mode", d.crop_mode == CropMode::center ? "center" : "random"},
       {"crops_per_image", d.crops_per_image},
       {"hflip", d.hflip},
       {"resize", d.resize ? nlohmann::json(d.resize->str()) : nlohmann::json(nullptr)},
       {"seed", d.seed},
       {"toy_count", d.toy_count}};
}

void from_json(const nlohmann::json& j, DataSettings& d) {
  DataSettings def;
  d.prepare = j.value("prepare", def.prepare);
  d.crop = j.contains("crop") ? Resolution::parse(j.at("crop").get<std::string>()) : def.crop;
  const std::string mode = j.value("crop_mode", std::string("center"));
  if (mode == "center")
    d.crop_mode = CropMode::center;
  else if (mode == "random")
    d.crop_mode = CropMode::random;
  else
    throw ConfigError("crop_mode", "expected center or random (got '" + mode + "')");
  d.crops_per_image = j.value("crops_per_image", def.crops_per_image);
  d.hflip = j.value("hflip", def.hflip);
  d.resize.reset();
  if (j.contains("resize") && !j.at("resize").is_null()) d.resize = Resolution::parse(j.at("resize").get<std::string>());
  d.seed = j.value("seed", def.seed);
  d.toy_count = j.value("toy_count", def.toy_count);
}

void to_json(nlohmann::json& j, const AuditSettings& a) {
  j = {{"enabled", a.enabled},
       {"n_generated", a.n_generated},
       {"k", a.options.k},
       {"tau_pix", a.options.tau_pix},
       {"tau_feat", a.options.tau_feat ? nlohmann::json(*a.options.tau_feat) : nlohmann::json(nullptr)},
       {"tau_feat_quantile", a.options.tau_feat_quantile},
       {"tau_feat_pairs", a.options.tau_feat_pairs},
       {"seed", a.options.seed}};
}

void from_json(const nlohmann::json& j, AuditSettings& a) {
  AuditSettings def;
  a.enabled = j.value("enabled", def.enabled);
  a.n_generated = j.value("n_generated", def.n_generated);
  a.options.k = j.value("k", def.options.k);
  a.options.tau_pix = j.value("tau_pix", def.options.tau_pix);
  a.options.tau_feat.reset();
  if (j.contains("tau_feat") && !j.at("tau_feat").is_null()) a.options.tau_feat = j.at("tau_feat").get<double>();
  a.options.tau_feat_quantile = j.value("tau_feat_quantile", def.options.tau_feat_quantile);
  a.options.tau_feat_pairs = j.value("tau_feat_pairs", def.options.tau_feat_pairs);
  a.options.seed = j.value("seed", def.options.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"version", c.version}, {"name", c.name},   {"gen_spec", c.gen_spec}, {"disc_spec", c.disc_spec},
       {"data", c.data},       {"train", c.train}, {"metrics", c.metrics},   {"audit", c.audit}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  if (!j.contains("version")) throw ConfigError("version", "missing");
  const auto& v = j.at("version");
  if (!v.is_number_integer() || v.get<int>() != kConfigVersion)
    throw ConfigError("version", "unsupported " + v.dump() + " (expected " + std::to_string(kConfigVersion) + ")");
  ExperimentConfig def;
  c.version = kConfigVersion;
  c.name = section(j, "name", def.name);
  c.gen_spec = section(j, "gen_spec", def.gen_spec);
  c.disc_spec = section(j, "disc_spec", def.disc_spec);
  c.data = section(j, "data", def.data);
  c.train = section(j, "train", def.train);
  c.metrics = section(j, "metrics", def.metrics);
  c.audit = section(j, "audit", def.audit);
}

void ExperimentConfig::validate() const {
  check(version == kConfigVersion, "version", "unsupported " + std::to_string(version));
  check(!name.empty(), "name", "must not be empty");

  const int r = gen_spec.output_resolution;
  check(in_resolution_ladder(r), "gen_spec.output_resolution",
        "resolution not in ladder: " + std::to_string(r) + " (expected a power of two in 32..1024)");
  check(gen_spec.latent_dim >= 1, "gen_spec.latent_dim", "must be >= 1 " + got(gen_spec.latent_dim));
  check(gen_spec.base_channels >= 1, "gen_spec.base_channels", "must be >= 1 " + got(gen_spec.base_channels));
  if (gen_spec.variant == GeneratorVariant::stylegan2) {
    check(gen_spec.style_dim >= 1, "gen_spec.style_dim", "must be >= 1 " + got(gen_spec.style_dim));
    check(gen_spec.mapping_depth >= 1, "gen_spec.mapping_depth", "must be >= 1 " + got(gen_spec.mapping_depth));
  }
  check(disc_spec.base_channels >= 1, "disc_spec.base_channels", "must be >= 1 " + got(disc_spec.base_channels));
  if (disc_spec.variant == DiscriminatorVariant::projected) {
    const int max_p = std::bit_width(static_cast<unsigned>(r)) - 2;
    check(disc_spec.n_projections >= 1 && disc_spec.n_projections <= max_p, "disc_spec.n_projections",
          "must lie in [1, " + std::to_string(max_p) + "] at resolution " + std::to_string(r) + " " +
              got(disc_spec.n_projections));
    check(disc_spec.feature_source.base_channels >= 1, "disc_spec.feature_source.base_channels", "must be >= 1");
  }

  check(data.crop.height >= 1 && data.crop.width >= 1, "data.crop", "must be positive (got " + data.crop.str() + ")");
  if (data.resize)
    check(data.resize->height >= 1 && data.resize->width >= 1, "data.resize",
          "must be positive (got " + data.resize->str() + ")");
  if (data.crop_mode == CropMode::random)
    check(data.crops_per_image >= 1, "data.crops_per_image", "must be >= 1 " + got(data.crops_per_image));
  check(data.toy_count >= 2, "data.toy_count", "must be >= 2 " + got(static_cast<double>(data.toy_count)));
  const Resolution out = data.output_resolution();
  if (out != Resolution{r, r})
    throw ConfigError(data.resize ? "data.resize" : "data.crop",
                      "dataset resolution " + out.str() + " does not match gen_spec.output_resolution " +
                          std::to_string(r));

  check(train.iterations >= 1, "train.iterations", "must be >= 1 " + got(static_cast<double>(train.iterations)));
  check(train.batch_size >= 1, "train.batch_size", "must be >= 1 " + got(train.batch_size));
  check(train.g_lr > 0 && std::isfinite(train.g_lr), "train.learning_rates[0]", "must be > 0 " + got(train.g_lr));
  check(train.d_lr > 0 && std::isfinite(train.d_lr), "train.learning_rates[1]", "must be > 0 " + got(train.d_lr));
  check(train.eval_every >= 1, "train.eval_every", "must be >= 1 " + got(static_cast<double>(train.eval_every)));
  check(train.checkpoint_every >= 1, "train.checkpoint_every",
        "must be >= 1 " + got(static_cast<double>(train.checkpoint_every)));
  check(train.holdout_fraction > 0 && train.holdout_fraction < 1, "train.holdout_fraction",
        "must lie in (0, 1) " + got(train.holdout_fraction));

  check(metrics.n_samples >= 2, "metrics.n_samples", "must be >= 2 " + got(metrics.n_samples));
  check(metrics.grid_samples >= 1, "metrics.grid_samples", "must be >= 1 " + got(metrics.grid_samples));
  check(metrics.extractor.output_dim >= 1, "metrics.extractor.output_dim", "must be >= 1");
  check(metrics.extractor.input_resolution >= 1, "metrics.extractor.input_resolution", "must be >= 1");
  if (metrics.extractor.kind == ExtractorKind::pretrained_embedding)
    check(metrics.extractor.model_source.has_value(), "metrics.extractor.model_source",
          "required for the pretrained extractor");
  check(metrics.kid.subset_size >= 2, "metrics.kid.subset_size", "must be >= 2");
  check(metrics.kid.n_subsets >= 1, "metrics.kid.n_subsets", "must be >= 1");

  check(audit.options.k >= 1, "audit.k", "must be >= 1 " + got(audit.options.k));
  check(audit.n_generated >= 1, "audit.n_generated", "must be >= 1 " + got(audit.n_generated));
  check(audit.options.tau_pix >= 0, "audit.tau_pix", "must be >= 0");
  check(!audit.options.tau_feat || *audit.options.tau_feat >= 0, "audit.tau_feat", "must be >= 0");
  check(audit.options.tau_feat_quantile >= 0 && audit.options.tau_feat_quantile <= 1, "audit.tau_feat_quantile",
        "must lie in [0, 1]");
}

ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return j.get<ExperimentConfig>();
}

std::string serialize_config(const ExperimentConfig& config) { return nlohmann::json(config).dump(2) + "\n"; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig c = parse_config(text.str());
  c.validate();
  return c;
}

void apply_seed_override(ExperimentConfig& config, std::uint64_t seed) {
  config.data.seed = seed;
  config.train.seed = seed;
  config.disc_spec.feature_source.seed = seed;
  config.metrics.kid.seed = seed;
  if (config.metrics.extractor.seed) config.metrics.extractor.seed = seed;
  config.audit.options.seed = seed;
  config.train.deterministic_history = true;
}

}  // namespace synthplankton
