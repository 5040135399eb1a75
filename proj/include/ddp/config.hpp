#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddp/codec.hpp"
#include "ddp/data.hpp"
#include "ddp/diffusion.hpp"
#include "ddp/model.hpp"
#include "ddp/schedule.hpp"

namespace ddp {

/// Complete description of one run. Every field is a flat, typed key of the
/// JSON config file and of `--set key=value` overrides.
struct ExperimentConfig {
  std::string task = "segmentation";
  uint64_t seed = 0;       // weights and training stream
  uint64_t data_seed = 0;  // synthetic dataset

  // data
  int train_count = 512;
  int val_count = 64;
  int image_size = 64;
  int num_classes = 4;
  int shapes_min = 1;
  int shapes_max = 4;
  double noise_std = 0.05;
  double max_depth = 10.0;
  int octaves = 4;
  double depth_noise_std = 0.02;

  // codec
  std::string encoding = "embedding";
  int embed_dim = 16;
  std::optional<double> scale;  // unset: 0.1 for onehot and analog_bits, 0.01 otherwise

  // schedule
  std::string schedule = "cosine";
  double ns = 0.0002;
  double ds = 0.00025;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double clamp_eps = 1e-5;

  // model
  int encoder_width = 24;
  int fpn_channels = 32;
  int cond_channels = 32;
  int decoder_depth = 6;
  int decoder_width = 48;
  int time_embed_dim = 32;
  int mlp_ratio = 2;

  // sampling
  int steps = 3;
  int td = 1;
  double uncertainty_delta = 0.0;  // <= 0: 0.05 * max_depth

  // optimization
  std::string objective = "task";  // task | l2
  double lr = 1e-3;
  double weight_decay = 0.01;
  double lr_power = 1.0;
  int total_steps = 5000;
  int self_aligned_steps = 500;
  int batch_size = 8;
  double lambda_si = 0.85;
  double alpha_scale = 10.0;

  // bookkeeping
  int log_interval = 50;
  int eval_interval = 1000;
  int checkpoint_interval = 1000;
  std::string output_dir = "runs/default";

  Task task_kind() const;
  double resolved_scale() const;
  CodecSpec codec_spec() const;
  ScheduleParams schedule_params() const;
  ModelConfig model_config() const;
  TimeSpec time_spec() const;
  SyntheticSegSpec seg_spec(bool validation) const;
  SyntheticDepthSpec depth_spec(bool validation) const;
  Dataset make_dataset(bool validation) const;

  /// Throws ValidationError naming every offending field.
  void validate() const;

  /// Output directory, resolved against $DDP_OUTPUT_ROOT when relative and the variable is set.
  std::filesystem::path resolved_output_dir() const;

  nlohmann::json to_json() const;
  /// Strict: unknown keys and mistyped values are errors. Missing keys keep defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Applies one `key=value` override, parsing the value by the field's type.
  void set(const std::string& key, const std::string& value);
  /// Applies a list of `key=value` strings in order.
  void apply_overrides(const std::vector<std::string>& assignments);

  static std::vector<std::string> keys();
};

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace ddp
