// Command-line front end: data preparation, feature caching, training,
// evaluation, memorization audit and results tables.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "synthplankton/audit.hpp"
#include "synthplankton/config.hpp"
#include "synthplankton/dataset.hpp"
#include "synthplankton/features.hpp"
#include "synthplankton/metrics.hpp"
#include "synthplankton/pipeline.hpp"
#include "synthplankton/report.hpp"
#include "synthplankton/rng.hpp"

namespace fs = std::filesystem;
using namespace synthplankton;

namespace {

struct ExtractorArgs {
  std::string kind = "random";
  std::string model;
  int dim = 64;
  int input_resolution = 32;
  std::uint64_t seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--extractor", kind, "random | pretrained")->capture_default_str();
    app->add_option("--model", model, "ONNX model for the pretrained extractor");
    app->add_option("--dim", dim, "Output dimension (random extractor)")->capture_default_str();
    app->add_option("--input-res", input_resolution, "Square size images are resized to")->capture_default_str();
    app->add_option("--extractor-seed", seed, "Seed of the random extractor")->capture_default_str();
  }

  FeatureExtractor create() const {
    ExtractorConfig c;
    c.kind = parse_extractor_kind(kind);
    c.output_dim = dim;
    c.input_resolution = input_resolution;
    if (!model.empty()) c.model_source = model;
    c.seed = seed_override_from_env().value_or(seed);
    return FeatureExtractor::create(c);
  }
};

Resolution parse_res(const std::string& text) { return Resolution::parse(text); }

// A directory of images, or a feature cache file written by `extract`.
FeatureSet features_from(const std::string& source, const FeatureExtractor& extractor) {
  if (fs::is_regular_file(source)) {
    FeatureSet f = load_features(source);
    if (f.extractor_fingerprint != extractor.fingerprint())
      spdlog::warn("{} was cached with extractor {}, not {}", source, f.extractor_fingerprint, extractor.fingerprint());
    return f;
  }
  return extract_features(load_image_dir(source), extractor, source);
}

nlohmann::json read_report(const fs::path& p) {
  const fs::path file = fs::is_directory(p) ? p / "report.json" : p;
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  return nlohmann::json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small-scale GAN training, evaluation and memorization audit for microscopy-style images"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // make-toy-data
  auto* toy = app.add_subcommand("make-toy-data", "Write seeded synthetic blob/ring images");
  fs::path toy_out;
  std::size_t toy_count = 512;
  std::string toy_res = "32x32";
  std::uint64_t toy_seed = 0;
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--count", toy_count)->capture_default_str();
  toy->add_option("--resolution", toy_res, "HxW")->capture_default_str();
  toy->add_option("--seed", toy_seed)->capture_default_str();

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Crop, flip and resize a raw image directory");
  fs::path prep_in;
  fs::path prep_out;
  std::string prep_crop;
  std::string prep_mode = "center";
  int prep_count = 10;
  bool prep_no_flip = false;
  std::string prep_resize;
  std::uint64_t prep_seed = 0;
  prep->add_option("--in", prep_in, "Raw image directory")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--out", prep_out, "Prepared dataset directory")->required();
  prep->add_option("--crop", prep_crop, "Crop size HxW")->required();
  prep->add_option("--mode", prep_mode, "center | random")->capture_default_str();
  prep->add_option("--crops-per-image", prep_count, "Random crops per source image")->capture_default_str();
  prep->add_flag("--no-flip", prep_no_flip, "Skip the horizontal-flip copies");
  prep->add_option("--resize", prep_resize, "Area-resize crops to HxW");
  prep->add_option("--seed", prep_seed)->capture_default_str();

  // extract
  auto* ext = app.add_subcommand("extract", "Embed a directory of images into a feature cache");
  fs::path ext_images;
  fs::path ext_out;
  ExtractorArgs ext_args;
  ext->add_option("--images", ext_images)->required()->check(CLI::ExistingDirectory);
  ext->add_option("--out", ext_out, "Cache file")->required();
  ext_args.attach(ext);

  // train
  auto* tr = app.add_subcommand("train", "Run an experiment: prepare, train, evaluate, audit");
  fs::path tr_config;
  std::string tr_data;
  fs::path tr_out;
  std::string tr_resume;
  bool tr_debug = false;
  tr->add_option("--config", tr_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "Image directory (omit to use generated toy data)");
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  tr->add_flag("--debug-checks", tr_debug, "Verify the frozen projection stack after every step");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "FID / KID / diversity between two image sets or caches");
  std::string ev_real;
  std::string ev_fake;
  std::string ev_out;
  std::string ev_estimator = "unbiased";
  std::size_t ev_subset = 100;
  std::size_t ev_subsets = 100;
  std::uint64_t ev_seed = 0;
  ExtractorArgs ev_args;
  ev->add_option("--real", ev_real, "Image directory or feature cache")->required();
  ev->add_option("--generated", ev_fake, "Image directory or feature cache")->required();
  ev->add_option("--kid-estimator", ev_estimator, "biased | unbiased")->capture_default_str();
  ev->add_option("--kid-subset-size", ev_subset)->capture_default_str();
  ev->add_option("--kid-subsets", ev_subsets)->capture_default_str();
  ev->add_option("--seed", ev_seed, "KID subset seed")->capture_default_str();
  ev->add_option("--out", ev_out, "Write the metrics JSON here as well");
  ev_args.attach(ev);

  // audit
  auto* au = app.add_subcommand("audit", "Nearest real neighbors of generated images");
  fs::path au_gen;
  fs::path au_real;
  fs::path au_out;
  AuditOptions au_opts;
  double au_tau_feat = -1.0;
  ExtractorArgs au_args;
  au->add_option("--generated", au_gen)->required()->check(CLI::ExistingDirectory);
  au->add_option("--real", au_real)->required()->check(CLI::ExistingDirectory);
  au->add_option("--out", au_out, "Audit directory")->required();
  au->add_option("--k", au_opts.k)->capture_default_str();
  au->add_option("--tau-pix", au_opts.tau_pix)->capture_default_str();
  au->add_option("--tau-feat", au_tau_feat, "Absolute feature threshold (default: 1% quantile of real pairs)");
  au->add_option("--seed", au_opts.seed)->capture_default_str();
  au_args.attach(au);

  // report
  auto* rp = app.add_subcommand("report", "Tabulate report.json files from run directories");
  std::vector<fs::path> rp_runs;
  std::string rp_format = "markdown";
  std::string rp_out;
  rp->add_option("runs", rp_runs, "Run directories or report.json files")->required();
  rp->add_option("--format", rp_format, "csv | markdown")->capture_default_str();
  rp->add_option("--out", rp_out, "Write the table to a file");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*toy) {
      const std::uint64_t seed = seed_override_from_env().value_or(toy_seed);
      const ImageSet set = make_toy_data(toy_count, parse_res(toy_res), seed);
      save_dataset(set, toy_out);
      spdlog::info("wrote {} images to {}", set.size(), toy_out.string());
    } else if (*prep) {
      DataSettings s;
      s.prepare = true;
      s.crop = parse_res(prep_crop);
      s.crop_mode = prep_mode == "random" ? CropMode::random : CropMode::center;
      if (prep_mode != "random" && prep_mode != "center") throw Error("--mode must be center or random");
      s.crops_per_image = prep_count;
      s.hflip = !prep_no_flip;
      if (!prep_resize.empty()) s.resize = parse_res(prep_resize);
      s.seed = seed_override_from_env().value_or(prep_seed);
      const ImageSet raw = load_image_dir(prep_in);
      const ImageSet set = prepare_images(raw, s);
      save_dataset(set, prep_out);
      spdlog::info("{} source images -> {} prepared images at {}", raw.size(), set.size(), set.resolution().str());
    } else if (*ext) {
      const FeatureExtractor extractor = ext_args.create();
      const ImageSet set = load_image_dir(ext_images);
      cache_features(extract_features(set, extractor, set.manifest().dump()), ext_out);
      spdlog::info("cached {} x {} features ({}) in {}", set.size(), extractor.output_dim(), extractor.fingerprint(),
                   ext_out.string());
    } else if (*tr) {
      RunOptions o;
      if (!tr_data.empty()) o.data_dir = fs::path(tr_data);
      o.run_dir = tr_out;
      if (!tr_resume.empty()) o.resume_from = fs::path(tr_resume);
      o.debug_checks = tr_debug;
      const RunReport r = run_experiment(load_config(tr_config), o);
      const std::vector<RunReport> rows{r};
      std::cout << emit_table(rows, TableFormat::markdown);
    } else if (*ev) {
      const FeatureExtractor extractor = ev_args.create();
      const FeatureSet real = features_from(ev_real, extractor);
      const FeatureSet fake = features_from(ev_fake, extractor);
      KidOptions ko;
      ko.estimator = parse_kid_estimator(ev_estimator);
      ko.subset_size = std::min({ev_subset, real.size(), fake.size()});
      ko.n_subsets = ev_subsets;
      ko.seed = seed_override_from_env().value_or(ev_seed);
      MetricReport m = evaluate(real, fake, ko);
      if (fs::is_directory(ev_fake)) {
        const double d = diversity_score(load_image_dir(ev_fake));
        m.diversity = d;
      }
      nlohmann::json j = m.to_json();
      if (m.diversity) j["mode_collapse"] = flags_mode_collapse(*m.diversity);
      std::cout << j.dump(2) << "\n";
      if (!ev_out.empty()) std::ofstream(ev_out) << j.dump(2) << "\n";
    } else if (*au) {
      const FeatureExtractor extractor = au_args.create();
      if (au_tau_feat >= 0) au_opts.tau_feat = au_tau_feat;
      if (const auto s = seed_override_from_env()) au_opts.seed = *s;
      const AuditResult res = audit_run(load_image_dir(au_gen), load_image_dir(au_real), extractor, au_opts, au_out);
      spdlog::info("{}/{} queries flagged (tau_pix {:.4f}, tau_feat {:.4f}); panels in {}", res.flagged(),
                   res.reports.size(), res.tau_pix, res.tau_feat, (au_out / "panels").string());
    } else if (*rp) {
      std::vector<RunReport> rows;
      for (const auto& p : rp_runs) rows.push_back(read_report(p).get<RunReport>());
      const std::string table = emit_table(rows, parse_table_format(rp_format));
      std::cout << table;
      if (!rp_out.empty()) std::ofstream(rp_out) << table;
    }
  } catch (const TrainingAborted& e) {
    spdlog::error("{}", e.what());
    if (e.state()) spdlog::error("stopped at iteration {}", e.state()->iteration);
    return 3;
  } catch (const ConfigError& e) {
    spdlog::error("config rejected: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
