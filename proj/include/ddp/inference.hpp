#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "ddp/data.hpp"
#include "ddp/diffusion.hpp"
#include "ddp/metrics.hpp"
#include "ddp/model.hpp"

namespace ddp {

/// Encodes the image once, then runs the sampler against the model's decoder.
/// Predictions are cropped to the image size unless options say otherwise.
SampleTrajectory predict(const Model& model, const Feature& image, const ScheduleParams& schedule,
                         SampleOptions options);

struct EvalOptions {
  TimeSpec time;
  uint64_t seed = 0;  // item i samples with seed + i
  double uncertainty_delta = 0.0;
  int limit = -1;     // evaluate at most this many items
};

struct EvalResult {
  Task task = Task::segmentation;
  int images = 0;
  ConfusionMatrix confusion{1};
  IouResult iou;
  DepthMetrics depth;
  /// Mean over images of the uncertainty/misprediction point-biserial correlation.
  double uncertainty_agreement = 0.0;
  double seconds_per_image = 0.0;
  double decoder_calls_per_image = 0.0;
  double encoder_calls_per_image = 0.0;

  /// mIoU for segmentation, δ1 for depth.
  double primary_metric() const;
  nlohmann::json to_json() const;
};

/// Misprediction mask: label differs (segmentation) or depth ratio >= 1.25.
Grid<uint8_t> error_mask(const DecodedMap& prediction, const Dataset& data, int index);

EvalResult evaluate(const Model& model, const Dataset& data, const ScheduleParams& schedule,
                    const EvalOptions& options);

}  // namespace ddp
