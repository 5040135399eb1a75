#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddp/config.hpp"
#include "ddp/data.hpp"
#include "ddp/diffusion.hpp"
#include "ddp/model.hpp"
#include "ddp/rng.hpp"

namespace ddp {

enum class Phase { standard, self_aligned };
enum class Objective { task, l2 };

const char* to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// Mean per-pixel cross-entropy over pixels whose label differs from `ignore_index`.
/// `d_logits`, when given, receives d(loss)/d(logits).
double loss_segmentation(const Feature& logits, const std::vector<LabelMap>& gt, Feature* d_logits = nullptr,
                         int ignore_index = -1);

/// Scale-invariant log loss alpha·sqrt(mean(d²) - λ·mean(d)²), d = log(pred) - log(gt),
/// over pixels where `valid` is nonzero (all when empty).
double loss_depth_silog(const DepthMap& pred, const DepthMap& gt, double lambda_si, double alpha_scale,
                        DepthMap* d_pred = nullptr, const Grid<uint8_t>& valid = {});

/// Everything a train step needs besides the state and the batch.
struct TrainSettings {
  ScheduleParams schedule;
  Objective objective = Objective::task;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double lr_power = 1.0;
  int total_steps = 5000;
  int self_aligned_steps = 0;
  double lambda_si = 0.85;
  double alpha_scale = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  static TrainSettings from_config(const ExperimentConfig& c);
  /// Polynomial decay from `lr` to zero over total_steps.
  double lr_at(int64_t step) const;
  Phase phase_at(int64_t step) const;
};

struct TrainState {
  Model model;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  int64_t step = 0;
  Rng rng;
  Phase phase = Phase::standard;

  TrainState(Model m, uint64_t seed);
};

/// Full-resolution images and targets.
struct Batch {
  Feature images;  // batch of 3-channel images
  std::vector<LabelMap> labels;
  std::vector<DepthMap> depths;

  int size() const { return images.batch; }
  static Batch gather(const Dataset& data, const std::vector<int>& indices);
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  Phase phase = Phase::standard;
  /// Fraction of pixels whose corrupted decoder input decodes (nearest code)
  /// to a label other than the ground truth. Segmentation only.
  double input_disagreement = 0.0;
};

/// Random draws of one step: time per item and corruption noise.
struct CorruptionDraw {
  std::vector<double> t;
  Matrix eps;
  static CorruptionDraw sample(Rng& rng, int batch, int channels, Eigen::Index columns);
};

struct GradientResult {
  double loss = 0.0;
  double input_disagreement = 0.0;
  nn::Gradients grads;
};

/// Loss and gradients of one denoising pass: `inputs` (maps at decoder
/// resolution) are encoded, corrupted with `draw`, denoised and scored
/// against the batch targets. Gradients flow into the encoder, decoder and
/// embedding table, never into how `inputs` were produced.
GradientResult denoising_gradients(const Model& model, const Batch& batch, const std::vector<DecodedMap>& inputs,
                                   const CorruptionDraw& draw, const TrainSettings& settings);

/// Targets of a batch at decoder resolution (1/4).
std::vector<DecodedMap> downsampled_targets(const Batch& batch, Task task);

/// Decoder prediction from pure noise at t = 1, decoded per item. No gradient is tracked.
std::vector<DecodedMap> first_pass_predictions(const Model& model, const Feature& condition, const Matrix& noise);

/// One standard step: corrupt encoded ground truth, denoise, update.
StepResult train_step(TrainState& state, const Batch& batch, const TrainSettings& settings);

/// Optional replacement for the t = 1 first pass (given the condition), used by tests.
using FirstPassFn = std::function<std::vector<DecodedMap>(const Feature& condition)>;

/// One self-aligned step: corrupt the model's own detached prediction from
/// pure noise instead of the ground truth, denoise, score against the ground truth.
StepResult self_aligned_step(TrainState& state, const Batch& batch, const TrainSettings& settings,
                             const FirstPassFn& first_pass = {});

/// Applies one decoupled-weight-decay Adam update and advances state.step.
void apply_update(TrainState& state, const nn::Gradients& grads, const TrainSettings& settings);

struct LogRecord {
  int64_t step;
  double loss;
  double lr;
  Phase phase;
};

struct FitResult {
  std::vector<double> losses;  // one per step executed by this call
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  double best_metric = 0.0;
  std::optional<TrainState> state;
};

/// Runs the whole budget with the phase switch, periodic evaluation, and
/// checkpoints (last, best-by-validation, final) in the output directory.
/// When `resume` names a checkpoint, training continues from it.
FitResult fit(const ExperimentConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt,
              bool quiet = true);

}  // namespace ddp
