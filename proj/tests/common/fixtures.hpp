#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "ddp/config.hpp"
#include "ddp/model.hpp"
#include "ddp/rng.hpp"
#include "ddp/training.hpp"

namespace ddp::testing {

/// Small but complete experiment: 16x16 images, narrow layers, a few steps.
inline ExperimentConfig tiny_config(const std::string& task = "segmentation") {
  ExperimentConfig c;
  c.task = task;
  c.train_count = 8;
  c.val_count = 4;
  c.image_size = 16;
  c.encoder_width = 6;
  c.fpn_channels = 6;
  c.cond_channels = 6;
  c.decoder_depth = 2;
  c.decoder_width = 8;
  c.time_embed_dim = 8;
  c.mlp_ratio = 2;
  c.embed_dim = 4;
  c.batch_size = 2;
  c.total_steps = 6;
  c.self_aligned_steps = 2;
  c.log_interval = 1;
  c.eval_interval = 3;
  c.checkpoint_interval = 3;
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ddp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Replaces every parameter with small Gaussian values so no layer is inert.
inline void randomize(Model& model, uint64_t seed, double std = 0.3) {
  Rng rng(seed);
  auto& params = model.params();
  for (int i = 0; i < params.size(); ++i) params[i] = rng.normal_matrix(params[i].rows(), params[i].cols()) * std;
}

/// Central finite-difference check of every parameter of `model` against the
/// analytic gradient of denoising_gradients. Returns the worst relative error.
inline double worst_gradient_error(Model& model, const Batch& batch, const std::vector<DecodedMap>& inputs,
                                   const CorruptionDraw& draw, const TrainSettings& settings, double h = 1e-5) {
  const GradientResult analytic = denoising_gradients(model, batch, inputs, draw, settings);
  double worst = 0.0;
  auto& params = model.params();
  for (int i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i].size(); ++k) {
      double& w = params[i].data()[k];
      const double saved = w;
      w = saved + h;
      const double up = denoising_gradients(model, batch, inputs, draw, settings).loss;
      w = saved - h;
      const double down = denoising_gradients(model, batch, inputs, draw, settings).loss;
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.grads[i].data()[k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, err);
    }
  return worst;
}

}  // namespace ddp::testing
