#include "ddp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddp/rng.hpp"

namespace ddp {

void TimeSpec::validate() const {
  if (steps < 1) throw ContractError("time spec: steps must be >= 1, got " + std::to_string(steps));
  if (td < 0) throw ContractError("time spec: td must be >= 0, got " + std::to_string(td));
}

NoisyMap corrupt(const Feature& encoded, double t, const Matrix& eps, const ScheduleParams& schedule) {
  require(eps.rows() == encoded.data.rows() && eps.cols() == encoded.data.cols(), "corrupt: eps shape mismatch");
  const CorruptionCoeffs c = coeffs(schedule, t);
  NoisyMap out{encoded, t};
  out.values.data = c.sqrt_alpha_bar * encoded.data + c.sqrt_one_minus_alpha_bar * eps;
  return out;
}

Feature corrupt_batch(const Feature& encoded, const std::vector<double>& t, const Matrix& eps,
                      const ScheduleParams& schedule) {
  require(eps.rows() == encoded.data.rows() && eps.cols() == encoded.data.cols(), "corrupt: eps shape mismatch");
  require(static_cast<int>(t.size()) == encoded.batch, "corrupt: one time per batch item required");
  Feature out = encoded;
  const Eigen::Index n = encoded.pixels_per_item();
  for (int b = 0; b < encoded.batch; ++b) {
    const CorruptionCoeffs c = coeffs(schedule, t[b]);
    out.item(b) = c.sqrt_alpha_bar * encoded.item(b) + c.sqrt_one_minus_alpha_bar * eps.middleCols(b * n, n);
  }
  return out;
}

std::vector<std::pair<double, double>> time_pairs(const TimeSpec& spec) {
  spec.validate();
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(spec.steps);
  const double n = spec.steps;
  for (int s = 0; s < spec.steps; ++s) {
    const double t_now = 1.0 - s / n;
    const double t_next = std::max(1.0 - (s + 1 + spec.td) / n, 0.0);
    pairs.emplace_back(t_now, t_next);
  }
  return pairs;
}

NoisyMap ddim_step(const NoisyMap& map_t, const Feature& pred_encoded, double t_now, double t_next,
                   const ScheduleParams& schedule) {
  require(map_t.values.data.rows() == pred_encoded.data.rows() && map_t.values.data.cols() == pred_encoded.data.cols(),
          "ddim_step: shape mismatch between noisy map and prediction");
  require(t_next <= t_now, "ddim_step: t_next must not exceed t_now");
  if (t_next == t_now) return {map_t.values, t_next};
  const double a_now = alpha_bar_at(schedule, t_now);
  const double a_next = alpha_bar_at(schedule, t_next);
  if (a_now >= 1.0) throw DomainError("ddim_step: degenerate time, alpha_bar(t_now) == 1");
  const CorruptionCoeffs now = coeffs_from_alpha_bar(a_now);
  const CorruptionCoeffs next = coeffs_from_alpha_bar(a_next);
  const Matrix eps = (map_t.values.data - now.sqrt_alpha_bar * pred_encoded.data) / now.sqrt_one_minus_alpha_bar;
  NoisyMap out{map_t.values, t_next};
  out.values.data = next.sqrt_alpha_bar * pred_encoded.data + next.sqrt_one_minus_alpha_bar * eps;
  return out;
}

Grid<double> trajectory_uncertainty(const std::vector<DecodedMap>& steps, double depth_delta) {
  require(!steps.empty(), "uncertainty: empty trajectory");
  const auto shape = std::visit([](const auto& m) { return std::pair{m.height, m.width}; }, steps.front());
  Grid<double> u(shape.first, shape.second, 0.0);
  if (steps.size() == 1) return u;
  for (size_t s = 1; s < steps.size(); ++s) {
    if (const auto* cur = std::get_if<LabelMap>(&steps[s])) {
      const auto& prev = std::get<LabelMap>(steps[s - 1]);
      for (size_t p = 0; p < u.size(); ++p) u.values[p] += cur->values[p] != prev.values[p] ? 1.0 : 0.0;
    } else {
      const auto& c = std::get<DepthMap>(steps[s]);
      const auto& prev = std::get<DepthMap>(steps[s - 1]);
      for (size_t p = 0; p < u.size(); ++p) u.values[p] += std::abs(c.values[p] - prev.values[p]) > depth_delta ? 1.0 : 0.0;
    }
  }
  const double transitions = static_cast<double>(steps.size() - 1);
  for (double& v : u.values) v /= transitions;
  return u;
}

SampleTrajectory sample(const Feature& condition, const Denoiser& decoder, const Codec& codec,
                        const ScheduleParams& schedule, const SampleOptions& options) {
  require(condition.batch == 1, "sample: condition must be a single item");
  const auto pairs = time_pairs(options.time);
  const int full_h = 4 * condition.height, full_w = 4 * condition.width;
  const int out_h = options.output_height > 0 ? options.output_height : full_h;
  const int out_w = options.output_width > 0 ? options.output_width : full_w;
  require(out_h <= full_h && out_w <= full_w, "sample: output larger than the padded input");
  const double delta =
      options.uncertainty_delta > 0 ? options.uncertainty_delta : 0.05 * codec.spec().max_value;

  Rng rng(options.seed);
  NoisyMap map_t{Feature(codec.spec().channels(), 1, condition.height, condition.width), 1.0};
  map_t.values.data = rng.normal_matrix(map_t.values.data.rows(), map_t.values.data.cols());

  SampleTrajectory traj;
  for (const auto& [t_now, t_next] : pairs) {
    const Feature prediction = decoder(map_t.values, condition, t_now);
    ++traj.decoder_calls;
    traj.final_output = crop(resize_bilinear(prediction, full_h, full_w), out_h, out_w);
    traj.per_step_predictions.push_back(codec.decode(traj.final_output));
    const Feature pred_encoded = codec.encode(codec.decode(prediction));
    map_t = ddim_step(map_t, pred_encoded, t_now, t_next, schedule);
  }
  traj.final_prediction = traj.per_step_predictions.back();
  traj.uncertainty = trajectory_uncertainty(traj.per_step_predictions, delta);
  return traj;
}

}  // namespace ddp
