#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthplankton/architectures.hpp"
#include "synthplankton/error.hpp"
#include "synthplankton/features.hpp"
#include "synthplankton/image.hpp"
#include "synthplankton/losses.hpp"
#include "synthplankton/metrics.hpp"
#include "synthplankton/parameters.hpp"
#include "synthplankton/report.hpp"

namespace synthplankton {

struct TrainConfig {
  /// Generator update steps.
  std::int64_t iterations = 500;
  int batch_size = 16;
  double g_lr = 2e-4;
  double d_lr = 2e-4;
  std::int64_t eval_every = 100;
  std::int64_t checkpoint_every = 500;
  std::uint64_t seed = 0;
  std::string device_label = "cpu";
  GeneratorLoss generator_loss = GeneratorLoss::non_saturating;
  double holdout_fraction = 0.1;
  /// Write 0 in history.csv's wall_clock_s column so that repeated runs give
  /// byte-identical files. Real timings then go to timing.csv.
  bool deterministic_history = false;

  /// Throws naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// How the trainer measures sample quality at eval points.
struct EvalSettings {
  ExtractorConfig extractor;
  /// Generated images per evaluation (fixed latents across the run).
  int n_samples = 256;
  KidOptions kid;
  /// Images tiled into samples/iter_%08d.png.
  int grid_samples = 16;

  bool operator==(const EvalSettings& o) const;
};

void to_json(nlohmann::json& j, const EvalSettings& e);
void from_json(const nlohmann::json& j, EvalSettings& e);

struct MetricPoint {
  std::int64_t iteration = 0;
  double wall_clock_s = 0.0;
  /// Losses of the step that ended at `iteration`; NaN at iteration 0.
  double d_loss = 0.0;
  double g_loss = 0.0;
  double fid = 0.0;  // against the held-out slice
  double fid_train = 0.0;
  double kid = 0.0;
  double diversity = 0.0;

  bool operator==(const MetricPoint& o) const;
};

struct TrainState {
  std::int64_t iteration = 0;
  Generator generator;
  Discriminator discriminator;
  Adam g_opt;
  Adam d_opt;
  double wall_clock_seconds = 0.0;
  std::vector<MetricPoint> metric_history;
  /// Consecutive steps skipped for non-finite scores.
  int nonfinite_streak = 0;
};

/// Fresh state: networks initialised from seeds derived from config.seed.
TrainState init_state(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec, const TrainConfig& config);

/// Thrown when training stops early. Carries the last consistent state.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::shared_ptr<const TrainState> state)
      : Error(what), state_(std::move(state)) {}
  const std::shared_ptr<const TrainState>& state() const { return state_; }

 private:
  std::shared_ptr<const TrainState> state_;
};

struct TrainOptions {
  EvalSettings eval;
  /// Artifacts (history.csv, samples/, checkpoints/, report.json) go here.
  std::optional<std::filesystem::path> run_dir;
  /// Continue from a checkpoint written by an earlier run with the same setup.
  std::optional<std::filesystem::path> resume_from;
  /// Label for the report; defaults to "<generator>+<discriminator>".
  std::string gan_model;
  /// Assert after every step that the frozen projection stack got no gradient.
  bool debug_checks = false;
  std::function<void(const MetricPoint&)> on_eval;
};

struct TrainResult {
  TrainState state;
  RunReport report;
  /// report.json contents (RunReport fields plus fid_train, diversity, ...).
  nlohmann::json details;
};

/// Alternates one discriminator and one generator update per iteration.
/// Evaluates at iteration 0, every eval_every iterations and at the end.
/// Throws TrainingAborted on divergence or checkpoint write failure.
TrainResult train(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec, const ImageSet& data,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Single updates, as used by train(). `real` is [B,3,R,R] in [-1,1].
/// Both return std::nullopt (and leave parameters untouched) when the
/// discriminator produced non-finite scores.
std::optional<GanLosses> discriminator_step(TrainState& state, const Tensor& real, const Tensor& z, GeneratorLoss form,
                                            std::int64_t iteration, bool debug_checks = false);
std::optional<double> generator_step(TrainState& state, const Tensor& z, GeneratorLoss form, std::int64_t iteration,
                                     bool debug_checks = false);

/// n images from seeded latents. With `out_dir`, writes sample_%04d.png
/// files there; with `grid_path`, also a tiled grid (ceil(sqrt n) columns).
/// Keep the grid outside `out_dir` so the directory loads as one image set.
ImageSet snapshot_samples(const TrainState& state, int n, std::uint64_t seed,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                          const std::optional<std::filesystem::path>& grid_path = std::nullopt);

/// "iteration,wall_clock_s,d_loss,g_loss,fid,kid,diversity" rows.
std::string history_csv(const std::vector<MetricPoint>& history, bool zero_wall_clock);

}  // namespace synthplankton
