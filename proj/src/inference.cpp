#include "ddp/inference.hpp"

#include <chrono>

namespace ddp {

SampleTrajectory predict(const Model& model, const Feature& image, const ScheduleParams& schedule,
                         SampleOptions options) {
  if (options.output_height <= 0) options.output_height = image.height;
  if (options.output_width <= 0) options.output_width = image.width;
  const Feature condition = model.encode_image(image);
  const Denoiser decoder = [&model](const Feature& noisy, const Feature& cond, double t) {
    return model.decode_map(noisy, cond, t);
  };
  return sample(condition, decoder, model.codec(), schedule, options);
}

double EvalResult::primary_metric() const { return task == Task::segmentation ? iou.mean_iou : depth.delta1; }

nlohmann::json EvalResult::to_json() const {
  nlohmann::json j;
  j["task"] = to_string(task);
  j["images"] = images;
  if (task == Task::segmentation) {
    j["miou"] = iou.mean_iou;
    j["macc"] = iou.mean_accuracy;
    j["pixel_accuracy"] = iou.pixel_accuracy;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : iou.per_class) per.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["per_class_iou"] = per;
  } else {
    j["delta1"] = depth.delta1;
    j["delta2"] = depth.delta2;
    j["delta3"] = depth.delta3;
    j["rel"] = depth.rel;
    j["sq_rel"] = depth.sq_rel;
    j["rmse"] = depth.rmse;
    j["rmse_log"] = depth.rmse_log;
    j["log10"] = depth.log10;
  }
  j["uncertainty_agreement"] = uncertainty_agreement;
  j["seconds_per_image"] = seconds_per_image;
  j["decoder_calls_per_image"] = decoder_calls_per_image;
  j["encoder_calls_per_image"] = encoder_calls_per_image;
  return j;
}

Grid<uint8_t> error_mask(const DecodedMap& prediction, const Dataset& data, int index) {
  if (const auto* labels = std::get_if<LabelMap>(&prediction)) {
    const LabelMap& gt = data.labels.at(index);
    require(labels->height == gt.height && labels->width == gt.width, "error mask: shape mismatch");
    Grid<uint8_t> m(gt.height, gt.width, 0);
    for (size_t p = 0; p < m.size(); ++p) m.values[p] = labels->values[p] != gt.values[p];
    return m;
  }
  const DepthMap& pred = std::get<DepthMap>(prediction);
  const DepthMap& gt = data.depths.at(index);
  require(pred.height == gt.height && pred.width == gt.width, "error mask: shape mismatch");
  Grid<uint8_t> m(gt.height, gt.width, 0);
  for (size_t p = 0; p < m.size(); ++p)
    m.values[p] = std::max(pred.values[p] / gt.values[p], gt.values[p] / pred.values[p]) >= 1.25;
  return m;
}

EvalResult evaluate(const Model& model, const Dataset& data, const ScheduleParams& schedule,
                    const EvalOptions& options) {
  const int n = options.limit >= 0 ? std::min(options.limit, data.size()) : data.size();
  require(n > 0, "evaluate: empty validation set");
  EvalResult r;
  r.task = data.task;
  r.images = n;
  if (data.task == Task::segmentation) r.confusion = ConfusionMatrix(data.num_classes);
  DepthAccumulator depth;
  double agreement = 0, seconds = 0;
  uint64_t decoder_calls = 0;
  const uint64_t encode_before = model.encode_calls();
  for (int i = 0; i < n; ++i) {
    SampleOptions so;
    so.time = options.time;
    so.seed = options.seed + static_cast<uint64_t>(i);
    so.uncertainty_delta = options.uncertainty_delta;
    const auto start = std::chrono::steady_clock::now();
    const SampleTrajectory traj = predict(model, data.images[i], schedule, so);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    decoder_calls += static_cast<uint64_t>(traj.decoder_calls);
    if (data.task == Task::segmentation)
      r.confusion.add(data.labels[i], std::get<LabelMap>(traj.final_prediction));
    else
      depth.add(std::get<DepthMap>(traj.final_prediction), data.depths[i]);
    agreement += uncertainty_agreement(traj.uncertainty, error_mask(traj.final_prediction, data, i));
  }
  if (data.task == Task::segmentation)
    r.iou = miou(r.confusion);
  else
    r.depth = depth.result();
  r.uncertainty_agreement = agreement / n;
  r.seconds_per_image = seconds / n;
  r.decoder_calls_per_image = static_cast<double>(decoder_calls) / n;
  r.encoder_calls_per_image = static_cast<double>(model.encode_calls() - encode_before) / n;
  return r;
}

}  // namespace ddp
