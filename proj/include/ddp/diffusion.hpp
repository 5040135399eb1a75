#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ddp/codec.hpp"
#include "ddp/schedule.hpp"
#include "ddp/tensor.hpp"

namespace ddp {

/// Number of sampling steps and the asymmetric time offset td.
struct TimeSpec {
  int steps = 3;
  int td = 1;
  void validate() const;
};

/// z_t together with its time.
struct NoisyMap {
  Feature values;
  double t = 1.0;
};

/// √ᾱ(t)·encoded + √(1-ᾱ(t))·eps.
NoisyMap corrupt(const Feature& encoded, double t, const Matrix& eps, const ScheduleParams& schedule);

/// Batched corruption with one time per batch item.
Feature corrupt_batch(const Feature& encoded, const std::vector<double>& t, const Matrix& eps,
                      const ScheduleParams& schedule);

/// (t_now, t_next) for each step: t_now = 1 - s/steps, t_next = max(1 - (s+1+td)/steps, 0).
std::vector<std::pair<double, double>> time_pairs(const TimeSpec& spec);

/// Deterministic DDIM move from t_now to t_next given the clean-signal estimate.
///
/// ε̂ = (z - √ᾱ_now·x̂)/√(1-ᾱ_now); result = √ᾱ_next·x̂ + √(1-ᾱ_next)·ε̂.
/// Throws DomainError when ᾱ_now is exactly 1.
NoisyMap ddim_step(const NoisyMap& map_t, const Feature& pred_encoded, double t_now, double t_next,
                   const ScheduleParams& schedule);

/// (noisy map, condition, t) -> task prediction (logits or normalized depth).
using Denoiser = std::function<Feature(const Feature& noisy, const Feature& condition, double t)>;

struct SampleOptions {
  TimeSpec time;
  uint64_t seed = 0;
  /// Size of the recorded predictions; 0 means 4x the condition size.
  int output_height = 0;
  int output_width = 0;
  /// Depth change (same units as max_value) counted as a transition; <= 0 selects 0.05 * max_value.
  double uncertainty_delta = 0.0;
};

struct SampleTrajectory {
  std::vector<DecodedMap> per_step_predictions;
  DecodedMap final_prediction;
  /// Final task prediction at output resolution (logits or normalized depth).
  Feature final_output;
  /// Fraction of consecutive-step transitions at which each pixel changed.
  Grid<double> uncertainty;
  int decoder_calls = 0;
};

/// Iteratively refines Gaussian noise into a prediction, re-encoding each
/// step's decoded prediction before the DDIM update. Noise is drawn once.
SampleTrajectory sample(const Feature& condition, const Denoiser& decoder, const Codec& codec,
                        const ScheduleParams& schedule, const SampleOptions& options);

/// Per-pixel fraction of consecutive transitions whose prediction changed;
/// all zeros for a single step.
Grid<double> trajectory_uncertainty(const std::vector<DecodedMap>& steps, double depth_delta);

}  // namespace ddp
