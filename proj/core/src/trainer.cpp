#include "synthplankton/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "synthplankton/checkpoint.hpp"
#include "synthplankton/dataset.hpp"
#include "synthplankton/rng.hpp"

namespace synthplankton {

namespace {

constexpr std::uint64_t kGenTag = 0x47454e;
constexpr std::uint64_t kDiscTag = 0x444953;
constexpr std::uint64_t kSplitTag = 0x53504c;
constexpr std::uint64_t kEpochTag = 0x45504f;
constexpr std::uint64_t kLatentTag = 0x4c4154;
constexpr std::uint64_t kEvalTag = 0x45564c;
constexpr std::uint64_t kFeatTag = 0x464541;
constexpr std::uint64_t kTrainRefTag = 0x545246;
constexpr int kDivergenceSteps = 100;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

bool finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool grads_finite(const ParameterSet& ps) {
  for (const auto& p : ps.all())
    if (!p.grad.all_finite()) return false;
  return true;
}

void check_frozen(const Discriminator& disc, std::uint64_t checksum_before) {
  for (const auto& p : disc.projection_params().all()) {
    for (double g : p.grad.values())
      if (g != 0.0) throw Error("frozen projection parameter '" + p.name + "' received a gradient");
  }
  if (disc.projection_params().checksum() != checksum_before)
    throw Error("frozen projection parameters changed during an update");
}

Tensor latent_rows(const Tensor& z, int begin, int end) {
  const int d = z.dim(1);
  std::vector<double> v(z.data() + static_cast<std::size_t>(begin) * d, z.data() + static_cast<std::size_t>(end) * d);
  return Tensor({end - begin, d}, std::move(v));
}

ImageSet generate_images(const Generator& gen, const Tensor& z, const std::string& prefix) {
  constexpr int kChunk = 64;
  std::vector<ImageRecord> records;
  const int n = z.dim(0);
  for (int b = 0; b < n; b += kChunk) {
    const int e = std::min(n, b + kChunk);
    ImageSet part = from_signed_batch(generate(gen, latent_rows(z, b, e)), prefix);
    for (std::size_t i = 0; i < part.size(); ++i) {
      ImageRecord r = part[i];
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04d", prefix.c_str(), b + static_cast<int>(i));
      r.source_path = name;
      records.push_back(std::move(r));
    }
  }
  return ImageSet(std::move(records));
}

Eigen::MatrixXd to_double(const FeatureSet& f) { return f.vectors.cast<double>(); }

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

// Features of the held-out slice and of a fixed training subset, plus the
// fixed evaluation latents.
class Evaluator {
 public:
  Evaluator(const ImageSet& train, const ImageSet& holdout, const EvalSettings& settings, const GeneratorSpec& gen_spec,
            std::uint64_t seed)
      : settings_(settings), extractor_(make_extractor(settings.extractor, seed)) {
    const FeatureSet hold = extract_features(holdout, extractor_, "holdout");
    holdout_stats_ = compute_stats(hold);
    holdout_features_ = to_double(hold);

    auto order = shuffled_indices(train.size(), derive_seed(seed, {kTrainRefTag}));
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(settings.n_samples)));
    train_stats_ = compute_stats(extract_features(train.select(order), extractor_, "train"));

    latents_ = sample_latents(settings.n_samples, gen_spec.latent_dim, derive_seed(seed, {kEvalTag}));
  }

  const FeatureExtractor& extractor() const { return extractor_; }
  std::size_t n_holdout() const { return holdout_stats_.n; }

  MetricPoint evaluate(const Generator& gen, ImageSet* samples) const {
    ImageSet fake = generate_images(gen, latents_, "eval");
    const FeatureSet feats = extract_features(fake, extractor_, "generated");
    const FeatureStats fake_stats = compute_stats(feats);
    MetricPoint p;
    p.fid = fid(holdout_stats_, fake_stats);
    p.fid_train = fid(train_stats_, fake_stats);
    KidOptions ko = settings_.kid;
    ko.subset_size = std::min({ko.subset_size, static_cast<std::size_t>(holdout_features_.rows()), feats.size()});
    p.kid = kid(holdout_features_, to_double(feats), ko);
    p.diversity = diversity_score(fake);
    if (samples) *samples = std::move(fake);
    return p;
  }

 private:
  static FeatureExtractor make_extractor(ExtractorConfig cfg, std::uint64_t seed) {
    if (!cfg.seed) cfg.seed = derive_seed(seed, {kFeatTag});
    return FeatureExtractor::create(cfg);
  }

  EvalSettings settings_;
  FeatureExtractor extractor_;
  FeatureStats holdout_stats_;
  FeatureStats train_stats_;
  Eigen::MatrixXd holdout_features_;
  Tensor latents_;
};

void write_grid(const std::filesystem::path& path, const ImageSet& images, int count) {
  const int n = std::min<int>(count, static_cast<int>(images.size()));
  if (n <= 0) return;
  std::vector<const ImageRecord*> cells;
  for (int i = 0; i < n; ++i) cells.push_back(&images[static_cast<std::size_t>(i)]);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  write_png(path, make_grid(cells, cols));
}

std::string iter_name(const char* stem, std::int64_t it, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%08lld%s", stem, static_cast<long long>(it), ext);
  return buf;
}

void check_resume_compatible(const TrainConfig& saved, const TrainConfig& now) {
  auto mismatch = [](const char* field) { throw Error(std::string("checkpoint config mismatch: train.") + field); };
  if (saved.seed != now.seed) mismatch("seed");
  if (saved.batch_size != now.batch_size) mismatch("batch_size");
  if (saved.g_lr != now.g_lr || saved.d_lr != now.d_lr) mismatch("learning_rates");
  if (saved.holdout_fraction != now.holdout_fraction) mismatch("holdout_fraction");
  if (saved.generator_loss != now.generator_loss) mismatch("generator_loss");
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(msg); };
  if (iterations < 1) fail("iterations must be >= 1 (got " + std::to_string(iterations) + ")");
  if (batch_size < 1) fail("batch_size must be >= 1 (got " + std::to_string(batch_size) + ")");
  if (!(g_lr > 0) || !std::isfinite(g_lr)) fail("learning_rates: g_lr must be > 0");
  if (!(d_lr > 0) || !std::isfinite(d_lr)) fail("learning_rates: d_lr must be > 0");
  if (eval_every < 1) fail("eval_every must be >= 1 (got " + std::to_string(eval_every) + ")");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1 (got " + std::to_string(checkpoint_every) + ")");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) fail("holdout_fraction must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"learning_rates", {c.g_lr, c.d_lr}},
       {"eval_every", c.eval_every},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed},
       {"device_label", c.device_label},
       {"generator_loss", c.generator_loss == GeneratorLoss::literal ? "literal" : "non_saturating"},
       {"holdout_fraction", c.holdout_fraction},
       {"deterministic_history", c.deterministic_history}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.g_lr = d.g_lr;
  c.d_lr = d.d_lr;
  if (j.contains("learning_rates")) {
    const auto& lr = j.at("learning_rates");
    if (!lr.is_array() || lr.size() != 2) throw Error("learning_rates must be [g_lr, d_lr]");
    c.g_lr = lr[0].get<double>();
    c.d_lr = lr[1].get<double>();
  }
  c.eval_every = j.value("eval_every", d.eval_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.seed = j.value("seed", d.seed);
  c.device_label = j.value("device_label", d.device_label);
  const std::string loss = j.value("generator_loss", std::string("non_saturating"));
  if (loss == "non_saturating")
    c.generator_loss = GeneratorLoss::non_saturating;
  else if (loss == "literal")
    c.generator_loss = GeneratorLoss::literal;
  else
    throw Error("generator_loss must be non_saturating or literal (got '" + loss + "')");
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.deterministic_history = j.value("deterministic_history", d.deterministic_history);
}

bool EvalSettings::operator==(const EvalSettings& o) const {
  return extractor == o.extractor && n_samples == o.n_samples && kid == o.kid && grid_samples == o.grid_samples;
}

void to_json(nlohmann::json& j, const EvalSettings& e) {
  j = {{"extractor", e.extractor}, {"n_samples", e.n_samples}, {"kid", e.kid}, {"grid_samples", e.grid_samples}};
}

void from_json(const nlohmann::json& j, EvalSettings& e) {
  EvalSettings d;
  e.extractor = j.contains("extractor") ? j.at("extractor").get<ExtractorConfig>() : d.extractor;
  e.n_samples = j.value("n_samples", d.n_samples);
  e.kid = j.contains("kid") ? j.at("kid").get<KidOptions>() : d.kid;
  e.grid_samples = j.value("grid_samples", d.grid_samples);
}

bool MetricPoint::operator==(const MetricPoint& o) const {
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  return iteration == o.iteration && same(wall_clock_s, o.wall_clock_s) && same(d_loss, o.d_loss) &&
         same(g_loss, o.g_loss) && same(fid, o.fid) && same(fid_train, o.fid_train) && same(kid, o.kid) &&
         same(diversity, o.diversity);
}

TrainState init_state(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec, const TrainConfig& config) {
  AdamOptions g_opt;
  g_opt.learning_rate = config.g_lr;
  AdamOptions d_opt;
  d_opt.learning_rate = config.d_lr;
  return TrainState{0,
                    Generator::build(gen_spec, derive_seed(config.seed, {kGenTag})),
                    Discriminator::build(disc_spec, gen_spec.output_resolution, derive_seed(config.seed, {kDiscTag})),
                    Adam(g_opt),
                    Adam(d_opt),
                    0.0,
                    {},
                    0};
}

std::optional<GanLosses> discriminator_step(TrainState& state, const Tensor& real, const Tensor& z, GeneratorLoss form,
                                            std::int64_t iteration, bool debug_checks) {
  Discriminator& disc = state.discriminator;
  const std::uint64_t frozen_before = debug_checks ? disc.projection_params().checksum() : 0;

  Tape tape;
  ParamBinder gen_bind(tape, state.generator.params());
  const Var fake = state.generator.forward(gen_bind, tape.constant(z));
  ParamBinder disc_bind(tape, disc.params(), &disc.params());
  const auto real_scores = disc.scores_from_pixels(disc_bind, tape.constant(real));
  const auto fake_scores = disc.scores_from_pixels(disc_bind, fake);

  std::vector<ScorePair> pairs;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    pairs.push_back({values_of(tape.value(real_scores[i])), values_of(tape.value(fake_scores[i]))});
    if (!finite(pairs.back().real) || !finite(pairs.back().fake)) {
      spdlog::warn("non-finite scores at iteration {}", iteration);
      return std::nullopt;
    }
  }
  const GanLosses losses = projected_losses(pairs, form, iteration);

  // Each D_i only sees its own term, so seeding every score output in one
  // sweep gives each head exactly its own gradient.
  std::vector<std::pair<Var, Tensor>> seeds;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Shape s = tape.shape(real_scores[i]);
    seeds.emplace_back(real_scores[i], Tensor(s, d_loss_grad_real(pairs[i].real)));
    seeds.emplace_back(fake_scores[i], Tensor(tape.shape(fake_scores[i]), d_loss_grad_fake(pairs[i].fake)));
  }
  disc.params().zero_grad();
  tape.backward(seeds);
  if (!grads_finite(disc.params())) {
    spdlog::warn("non-finite discriminator gradient at iteration {}", iteration);
    return std::nullopt;
  }
  state.d_opt.step(disc.params());
  if (debug_checks) check_frozen(disc, frozen_before);
  return losses;
}

std::optional<double> generator_step(TrainState& state, const Tensor& z, GeneratorLoss form, std::int64_t iteration,
                                     bool debug_checks) {
  const Discriminator& disc = state.discriminator;
  const std::uint64_t frozen_before = debug_checks ? disc.projection_params().checksum() : 0;

  Tape tape;
  ParamBinder gen_bind(tape, state.generator.params(), &state.generator.params());
  const Var fake = state.generator.forward(gen_bind, tape.constant(z));
  ParamBinder disc_bind(tape, disc.params());
  const auto scores = disc.scores_from_pixels(disc_bind, fake);

  double loss = 0.0;
  std::vector<std::pair<Var, Tensor>> seeds;
  for (Var s : scores) {
    const auto v = values_of(tape.value(s));
    if (!finite(v)) {
      spdlog::warn("non-finite scores at iteration {}", iteration);
      return std::nullopt;
    }
    loss += generator_loss(v, form, iteration);
    seeds.emplace_back(s, Tensor(tape.shape(s), g_loss_grad(v, form)));
  }
  state.generator.params().zero_grad();
  tape.backward(seeds);
  if (!grads_finite(state.generator.params())) {
    spdlog::warn("non-finite generator gradient at iteration {}", iteration);
    return std::nullopt;
  }
  state.g_opt.step(state.generator.params());
  if (debug_checks) check_frozen(disc, frozen_before);
  return loss;
}

std::string history_csv(const std::vector<MetricPoint>& history, bool zero_wall_clock) {
  std::ostringstream out;
  out << "iteration,wall_clock_s,d_loss,g_loss,fid,kid,diversity\n";
  for (const auto& p : history) {
    out << p.iteration << ',' << (zero_wall_clock ? "0" : fmt(p.wall_clock_s)) << ',' << fmt(p.d_loss) << ','
        << fmt(p.g_loss) << ',' << fmt(p.fid) << ',' << fmt(p.kid) << ',' << fmt(p.diversity) << "\n";
  }
  return out.str();
}

ImageSet snapshot_samples(const TrainState& state, int n, std::uint64_t seed,
                          const std::optional<std::filesystem::path>& out_dir,
                          const std::optional<std::filesystem::path>& grid_path) {
  if (n < 1) throw Error("snapshot_samples: n must be >= 1");
  const Tensor z = sample_latents(n, state.generator.spec().latent_dim, seed);
  ImageSet images = generate_images(state.generator, z, "sample");
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%04zu.png", i);
      write_png(*out_dir / name, images[i]);
    }
  }
  if (grid_path) {
    if (grid_path->has_parent_path()) std::filesystem::create_directories(grid_path->parent_path());
    write_grid(*grid_path, images, n);
  }
  return images;
}

TrainResult train(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec, const ImageSet& data,
                  const TrainConfig& config, const TrainOptions& options) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  gen_spec.validate();
  disc_spec.validate(gen_spec.output_resolution);
  const Resolution res{gen_spec.output_resolution, gen_spec.output_resolution};
  if (data.empty()) throw Error("training data is empty");
  if (data.resolution() != res)
    throw Error("dataset resolution " + data.resolution().str() + " does not match generator output_resolution " +
                res.str());

  const HoldoutSplit split = split_holdout(data, config.holdout_fraction, derive_seed(config.seed, {kSplitTag}));
  if (split.holdout.size() < 2)
    throw Error("evaluation slice needs at least two images (dataset has " + std::to_string(data.size()) + ")");
  const ImageSet& train_set = split.train;
  int batch_size = config.batch_size;
  if (static_cast<std::size_t>(batch_size) > train_set.size()) {
    spdlog::warn("batch_size {} exceeds {} training images; using {}", batch_size, train_set.size(), train_set.size());
    batch_size = static_cast<int>(train_set.size());
  }

  TrainState state = [&] {
    if (!options.resume_from) return init_state(gen_spec, disc_spec, config);
    LoadedCheckpoint ck = load_checkpoint(*options.resume_from);
    if (!(ck.state.generator.spec() == gen_spec)) throw Error("checkpoint generator spec differs from requested spec");
    if (!(ck.state.discriminator.spec() == disc_spec))
      throw Error("checkpoint discriminator spec differs from requested spec");
    check_resume_compatible(ck.config, config);
    if (ck.state.iteration > config.iterations)
      throw Error("checkpoint is at iteration " + std::to_string(ck.state.iteration) + ", past train.iterations");
    spdlog::info("resuming from {} at iteration {}", options.resume_from->string(), ck.state.iteration);
    return std::move(ck.state);
  }();

  Evaluator evaluator(train_set, split.holdout, options.eval, gen_spec, config.seed);

  std::filesystem::path run_dir;
  if (options.run_dir) {
    run_dir = *options.run_dir;
    std::filesystem::create_directories(run_dir / "samples");
    std::filesystem::create_directories(run_dir / "checkpoints");
  }

  auto write_history = [&] {
    if (run_dir.empty()) return;
    write_text(run_dir / "history.csv", history_csv(state.metric_history, config.deterministic_history));
    if (config.deterministic_history) {
      std::ostringstream t;
      t << "iteration,wall_clock_s\n";
      for (const auto& p : state.metric_history) t << p.iteration << ',' << fmt(p.wall_clock_s) << "\n";
      write_text(run_dir / "timing.csv", t.str());
    }
  };

  auto run_eval = [&](double d_loss, double g_loss) {
    ImageSet samples;
    MetricPoint p = evaluator.evaluate(state.generator, run_dir.empty() ? nullptr : &samples);
    p.iteration = state.iteration;
    p.d_loss = d_loss;
    p.g_loss = g_loss;
    p.wall_clock_s = state.wall_clock_seconds;
    state.metric_history.push_back(p);
    spdlog::info("iter {:>7}  fid {:.3f}  fid_train {:.3f}  kid {:.4f}  diversity {:.4f}", p.iteration, p.fid,
                 p.fid_train, p.kid, p.diversity);
    if (!run_dir.empty()) {
      write_grid(run_dir / "samples" / iter_name("iter_", p.iteration, ".png"), samples, options.eval.grid_samples);
      write_history();
    }
    if (options.on_eval) options.on_eval(p);
  };

  auto checkpoint = [&] {
    if (run_dir.empty()) return;
    const auto path = run_dir / "checkpoints" / iter_name("iter_", state.iteration, ".ckpt");
    try {
      save_checkpoint(path, state, config);
    } catch (const std::exception& e) {
      throw TrainingAborted(std::string("checkpoint write failed: ") + e.what(),
                            std::make_shared<const TrainState>(state));
    }
  };

  if (state.iteration == 0 && state.metric_history.empty()) {
    const auto t0 = Clock::now();
    run_eval(kNaN, kNaN);
    state.wall_clock_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  const std::size_t n_train = train_set.size();
  const std::int64_t per_epoch = static_cast<std::int64_t>((n_train + batch_size - 1) / batch_size);
  std::int64_t cached_epoch = -1;
  std::vector<std::vector<std::size_t>> epoch;
  const int latent_dim = gen_spec.latent_dim;
  double last_d = kNaN;
  double last_g = kNaN;

  while (state.iteration < config.iterations) {
    const auto t0 = Clock::now();
    const std::int64_t t = state.iteration;
    const std::int64_t e = t / per_epoch;
    if (e != cached_epoch) {
      epoch = epoch_batches(n_train, batch_size,
                            derive_seed(config.seed, {kEpochTag, static_cast<std::uint64_t>(e)}));
      cached_epoch = e;
    }
    const auto& idx = epoch[static_cast<std::size_t>(t % per_epoch)];
    const Tensor real = batch_to_tensor(to_batch(train_set, idx, true));
    const int b = static_cast<int>(idx.size());
    const auto tt = static_cast<std::uint64_t>(t);

    const Tensor z_d = sample_latents(b, latent_dim, derive_seed(config.seed, {kLatentTag, tt, 0}));
    const auto d = discriminator_step(state, real, z_d, config.generator_loss, t + 1, options.debug_checks);
    std::optional<double> g;
    if (d) {
      const Tensor z_g = sample_latents(b, latent_dim, derive_seed(config.seed, {kLatentTag, tt, 1}));
      g = generator_step(state, z_g, config.generator_loss, t + 1, options.debug_checks);
    }
    ++state.iteration;
    if (d && g) {
      state.nonfinite_streak = 0;
      last_d = d->d_loss;
      last_g = *g;
    } else {
      last_d = last_g = kNaN;
      if (++state.nonfinite_streak >= kDivergenceSteps) {
        state.wall_clock_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
        throw TrainingAborted("training diverged at iteration " + std::to_string(state.iteration),
                              std::make_shared<const TrainState>(state));
      }
    }

    const bool last = state.iteration == config.iterations;
    if (state.iteration % config.eval_every == 0 || last) run_eval(last_d, last_g);
    state.wall_clock_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    if (state.iteration % config.checkpoint_every == 0 || last) checkpoint();
  }

  if (state.metric_history.empty() || state.metric_history.back().iteration != state.iteration) {
    // Resumed at the final iteration: nothing ran, evaluate once more.
    run_eval(kNaN, kNaN);
  }
  const MetricPoint& final_point = state.metric_history.back();

  RunReport report;
  report.gan_model = options.gan_model.empty() ? to_string(gen_spec.variant) + "+" + to_string(disc_spec.variant)
                                               : options.gan_model;
  report.data_size = static_cast<std::int64_t>(data.size());
  report.resolution = data.resolution().str();
  report.iterations = config.iterations;
  report.batch_size = batch_size;
  report.training_time = format_training_time(state.wall_clock_seconds);
  report.fid = final_point.fid;
  report.kid = final_point.kid;
  report.device_label = config.device_label;

  nlohmann::json details = report;
  details["fid_holdout"] = final_point.fid;
  details["fid_train"] = final_point.fid_train;
  details["kid_estimator"] = to_string(options.eval.kid.estimator);
  details["diversity"] = final_point.diversity;
  details["mode_collapse"] = flags_mode_collapse(final_point.diversity);
  details["initial_fid"] = state.metric_history.front().fid;
  details["extractor_fingerprint"] = evaluator.extractor().fingerprint();
  details["wall_clock_seconds"] = state.wall_clock_seconds;
  details["n_train"] = n_train;
  details["n_holdout"] = split.holdout.size();
  details["n_generated"] = options.eval.n_samples;
  if (!run_dir.empty()) write_text(run_dir / "report.json", details.dump(2) + "\n");

  return TrainResult{std::move(state), std::move(report), std::move(details)};
}

}  // namespace synthplankton
