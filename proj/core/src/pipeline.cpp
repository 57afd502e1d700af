#include "synthplankton/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <fstream>

#include "synthplankton/dataset.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

ImageSet prepare_images(const ImageSet& raw, const DataSettings& settings) {
  ImageSet set = settings.crop_mode == CropMode::random
                     ? random_crop_expand(raw, settings.crop, settings.crops_per_image, settings.seed)
                     : center_crop(raw, settings.crop);
  if (settings.hflip) set = hflip_augment(set);
  if (settings.resize) set = resize_set(set, *settings.resize);
  return set;
}

ImageSet prepare_dataset(const DataSettings& settings, const std::optional<std::filesystem::path>& data_dir) {
  if (!data_dir) return make_toy_data(settings.toy_count, settings.output_resolution(), settings.seed);
  if (!std::filesystem::is_directory(*data_dir)) throw Error("data directory " + data_dir->string() + " does not exist");
  ImageSet raw = load_image_dir(*data_dir);
  return settings.prepare ? prepare_images(raw, settings) : raw;
}

RunReport run_experiment(ExperimentConfig config, const RunOptions& options) {
  if (const auto seed = seed_override_from_env()) {
    spdlog::info("SYNTHPLANKTON_SEED={} overrides configured seeds", *seed);
    apply_seed_override(config, *seed);
  }
  config.validate();
  if (options.data_dir && !std::filesystem::is_directory(*options.data_dir))
    throw Error("data directory " + options.data_dir->string() + " does not exist");

  const ImageSet data = prepare_dataset(config.data, options.data_dir);
  const Resolution want{config.gen_spec.output_resolution, config.gen_spec.output_resolution};
  if (data.resolution() != want)
    throw ConfigError("data", "prepared images are " + data.resolution().str() + " but gen_spec.output_resolution is " +
                                  want.str());

  std::filesystem::create_directories(options.run_dir);
  write_json(options.run_dir / "config.json", config);
  write_json(options.run_dir / "data_manifest.json", data.manifest());

  TrainOptions topts;
  topts.eval = config.metrics;
  topts.run_dir = options.run_dir;
  topts.resume_from = options.resume_from;
  topts.gan_model = config.name;
  topts.debug_checks = options.debug_checks;
  TrainResult result = train(config.gen_spec, config.disc_spec, data, config.train, topts);

  const ImageSet final_samples = snapshot_samples(result.state, config.metrics.grid_samples,
                                                  derive_seed(config.train.seed, {0x534e4150u}),
                                                  options.run_dir / "samples" / "final",
                                                  options.run_dir / "samples" / "final_grid.png");

  if (config.audit.enabled) {
    ExtractorConfig ecfg = config.metrics.extractor;
    if (!ecfg.seed) ecfg.seed = derive_seed(config.train.seed, {0x464541u});
    const FeatureExtractor extractor = FeatureExtractor::create(ecfg);
    const ImageSet generated =
        snapshot_samples(result.state, config.audit.n_generated, derive_seed(config.train.seed, {0x415544u}));
    const AuditResult audit = audit_run(generated, data, extractor, config.audit.options, options.run_dir / "audit");
    result.details["audit_flagged"] = audit.flagged();
    result.details["audit_queries"] = audit.reports.size();
    spdlog::info("audit: {}/{} generated images flagged", audit.flagged(), audit.reports.size());
  }
  result.details["final_sample_diversity"] = final_samples.size() >= 2 ? diversity_score(final_samples) : 0.0;
  write_json(options.run_dir / "report.json", result.details);
  return result.report;
}

}  // namespace synthplankton
