#include "ddp/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "ddp/checkpoint.hpp"
#include "ddp/inference.hpp"

namespace ddp {

const char* to_string(Phase p) { return p == Phase::standard ? "standard" : "self_aligned"; }

Phase phase_from_string(const std::string& s) {
  if (s == "standard") return Phase::standard;
  if (s == "self_aligned") return Phase::self_aligned;
  throw ValidationError("unknown phase '" + s + "'");
}

double loss_segmentation(const Feature& logits, const std::vector<LabelMap>& gt, Feature* d_logits, int ignore_index) {
  require(static_cast<int>(gt.size()) == logits.batch, "loss_segmentation: one label map per item required");
  const int k = logits.channels();
  const Eigen::Index n = logits.pixels_per_item();
  if (d_logits) *d_logits = Feature(k, logits.batch, logits.height, logits.width);
  double total = 0.0;
  size_t counted = 0;
  for (int b = 0; b < logits.batch; ++b) {
    require(gt[b].height == logits.height && gt[b].width == logits.width, "loss_segmentation: shape mismatch");
    for (Eigen::Index p = 0; p < n; ++p) {
      const int label = gt[b].values[p];
      if (label == ignore_index) continue;
      if (label < 0 || label >= k) throw DomainError("loss_segmentation: label out of range");
      const Eigen::Index col = b * n + p;
      const auto z = logits.data.col(col);
      const double m = z.maxCoeff();
      const double lse = m + std::log((z.array() - m).exp().sum());
      total += lse - z(label);
      ++counted;
      if (d_logits) {
        d_logits->data.col(col) = (z.array() - lse).exp().matrix();
        d_logits->data(label, col) -= 1.0;
      }
    }
  }
  if (counted == 0) throw ContractError("loss_segmentation: every pixel is ignored");
  if (d_logits) d_logits->data /= static_cast<double>(counted);
  return total / static_cast<double>(counted);
}

double loss_depth_silog(const DepthMap& pred, const DepthMap& gt, double lambda_si, double alpha_scale,
                        DepthMap* d_pred, const Grid<uint8_t>& valid) {
  require(pred.height == gt.height && pred.width == gt.width, "loss_depth_silog: shape mismatch");
  require(valid.size() == 0 || valid.size() == gt.size(), "loss_depth_silog: mask shape mismatch");
  std::vector<double> d(gt.size(), 0.0);
  double sum = 0.0, sum_sq = 0.0;
  size_t n = 0;
  for (size_t p = 0; p < gt.size(); ++p) {
    if (valid.size() && !valid.values[p]) continue;
    if (pred.values[p] <= 0 || gt.values[p] <= 0) throw DomainError("loss_depth_silog: depth must be positive");
    d[p] = std::log(pred.values[p]) - std::log(gt.values[p]);
    sum += d[p];
    sum_sq += d[p] * d[p];
    ++n;
  }
  if (n == 0) throw ContractError("loss_depth_silog: no valid pixels");
  const double mean = sum / n;
  const double inner = std::max(sum_sq / n - lambda_si * mean * mean, 0.0);
  const double root = std::sqrt(inner);
  if (d_pred) {
    *d_pred = DepthMap(gt.height, gt.width, 0.0);
    if (root > 0) {
      for (size_t p = 0; p < gt.size(); ++p) {
        if (valid.size() && !valid.values[p]) continue;
        d_pred->values[p] = alpha_scale * (d[p] - lambda_si * mean) / (n * root) / pred.values[p];
      }
    }
  }
  return alpha_scale * root;
}

TrainSettings TrainSettings::from_config(const ExperimentConfig& c) {
  TrainSettings s;
  s.schedule = c.schedule_params();
  if (c.objective == "task")
    s.objective = Objective::task;
  else if (c.objective == "l2")
    s.objective = Objective::l2;
  else
    throw ValidationError("objective: unknown value '" + c.objective + "'");
  s.lr = c.lr;
  s.weight_decay = c.weight_decay;
  s.lr_power = c.lr_power;
  s.total_steps = c.total_steps;
  s.self_aligned_steps = c.self_aligned_steps;
  s.lambda_si = c.lambda_si;
  s.alpha_scale = c.alpha_scale;
  return s;
}

double TrainSettings::lr_at(int64_t step) const {
  if (total_steps <= 0) return lr;
  const double frac = std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return lr * std::pow(1.0 - frac, lr_power);
}

Phase TrainSettings::phase_at(int64_t step) const {
  return step >= static_cast<int64_t>(total_steps) - self_aligned_steps ? Phase::self_aligned : Phase::standard;
}

TrainState::TrainState(Model m, uint64_t seed)
    : model(std::move(m)), adam_m(model.params().zeros_like()), adam_v(model.params().zeros_like()), rng(seed) {}

Batch Batch::gather(const Dataset& data, const std::vector<int>& indices) {
  require(!indices.empty(), "batch: no indices");
  Batch batch;
  std::vector<Feature> images;
  for (int i : indices) {
    require(i >= 0 && i < data.size(), "batch: index out of range");
    images.push_back(data.images[i]);
    if (data.task == Task::segmentation)
      batch.labels.push_back(data.labels[i]);
    else
      batch.depths.push_back(data.depths[i]);
  }
  batch.images = stack(images);
  return batch;
}

CorruptionDraw CorruptionDraw::sample(Rng& rng, int batch, int channels, Eigen::Index columns) {
  CorruptionDraw d;
  d.t.resize(batch);
  for (double& t : d.t) t = rng.uniform();
  d.eps = rng.normal_matrix(channels, columns);
  return d;
}

std::vector<DecodedMap> downsampled_targets(const Batch& batch, Task task) {
  std::vector<DecodedMap> out;
  if (task == Task::segmentation)
    for (const LabelMap& m : batch.labels) out.emplace_back(downsample_nearest(m, 4));
  else
    for (const DepthMap& m : batch.depths) out.emplace_back(downsample_bilinear(m, 4));
  return out;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Flattens a batch of maps into one row so batch-level losses see every pixel at once.
DepthMap flatten(const std::vector<DepthMap>& maps) {
  DepthMap out;
  out.height = 1;
  for (const DepthMap& m : maps) out.values.insert(out.values.end(), m.values.begin(), m.values.end());
  out.width = static_cast<int>(out.values.size());
  return out;
}

double segmentation_l2(const Feature& logits, const std::vector<LabelMap>& gt, Feature& d_logits) {
  const int k = logits.channels();
  const Eigen::Index n = logits.pixels_per_item();
  const double count = static_cast<double>(logits.data.cols());
  d_logits = Feature(k, logits.batch, logits.height, logits.width);
  double total = 0.0;
  for (int b = 0; b < logits.batch; ++b) {
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::Index col = b * n + p;
      const auto z = logits.data.col(col);
      Vector q = (z.array() - z.maxCoeff()).exp().matrix();
      q /= q.sum();
      Vector r = q;
      r(gt[b].values[p]) -= 1.0;
      total += r.squaredNorm();
      const Vector g = 2.0 * r / count;
      d_logits.data.col(col) = (q.array() * (g.array() - q.dot(g))).matrix();
    }
  }
  return total / count;
}

// Task loss and its gradient with respect to the raw decoder output.
double task_loss(const Model& model, const Feature& raw, const std::vector<DecodedMap>& targets,
                 const TrainSettings& s, Feature& d_raw) {
  const ModelConfig& cfg = model.config();
  if (cfg.task == Task::segmentation) {
    std::vector<LabelMap> gt;
    for (const auto& t : targets) gt.push_back(std::get<LabelMap>(t));
    if (s.objective == Objective::l2) return segmentation_l2(raw, gt, d_raw);
    return loss_segmentation(raw, gt, &d_raw);
  }
  const double max_value = cfg.codec.max_value;
  std::vector<DepthMap> gt;
  for (const auto& t : targets) gt.push_back(std::get<DepthMap>(t));
  const DepthMap gt_flat = flatten(gt);
  d_raw = Feature(1, raw.batch, raw.height, raw.width);
  const Eigen::Index n = raw.data.cols();
  if (s.objective == Objective::l2) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double sg = sigmoid(raw.data(0, c));
      const double e = sg - gt_flat.values[c] / max_value;
      total += e * e;
      d_raw.data(0, c) = 2.0 * e / n * sg * (1.0 - sg);
    }
    return total / n;
  }
  // Sigmoid outputs can underflow; keep the log finite.
  constexpr double kFloor = 1e-6;
  DepthMap pred(1, static_cast<int>(n));
  for (Eigen::Index c = 0; c < n; ++c) pred.values[c] = max_value * std::max(sigmoid(raw.data(0, c)), kFloor);
  DepthMap d_pred;
  const double loss = loss_depth_silog(pred, gt_flat, s.lambda_si, s.alpha_scale, &d_pred);
  for (Eigen::Index c = 0; c < n; ++c) {
    const double sg = sigmoid(raw.data(0, c));
    d_raw.data(0, c) = sg > kFloor ? d_pred.values[c] * max_value * sg * (1.0 - sg) : 0.0;
  }
  return loss;
}

bool finite(const nn::Gradients& grads) {
  for (const Matrix& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

}  // namespace

GradientResult denoising_gradients(const Model& model, const Batch& batch, const std::vector<DecodedMap>& inputs,
                                   const CorruptionDraw& draw, const TrainSettings& settings) {
  const ModelConfig& cfg = model.config();
  const int b = batch.size();
  require(static_cast<int>(inputs.size()) == b, "denoising_gradients: one input map per item required");
  require(static_cast<int>(draw.t.size()) == b, "denoising_gradients: one time per item required");

  Model::EncoderCache enc_cache;
  const Feature images = reflect_pad_to_multiple(batch.images, 4);
  const Feature cond = model.encoder_forward(images, &enc_cache);

  const Codec codec = model.codec();
  std::vector<LabelMap> input_labels;
  Feature encoded;
  if (cfg.task == Task::segmentation) {
    for (const auto& m : inputs) input_labels.push_back(std::get<LabelMap>(m));
    encoded = codec.encode_batch(input_labels);
  } else {
    std::vector<DepthMap> depths;
    for (const auto& m : inputs) depths.push_back(std::get<DepthMap>(m));
    encoded = codec.encode_batch(depths);
  }
  require(encoded.same_layout(cond), "denoising_gradients: inputs must match the condition resolution");
  const Feature noisy = corrupt_batch(encoded, draw.t, draw.eps, settings.schedule);

  const std::vector<DecodedMap> targets = downsampled_targets(batch, cfg.task);
  GradientResult result;
  if (cfg.task == Task::segmentation) {
    size_t wrong = 0;
    const Eigen::Index n = noisy.pixels_per_item();
    for (int i = 0; i < b; ++i) {
      const LabelMap& gt = std::get<LabelMap>(targets[i]);
      for (Eigen::Index p = 0; p < n; ++p)
        wrong += codec.nearest_label(noisy.data.col(i * n + p)) != gt.values[p];
    }
    result.input_disagreement = static_cast<double>(wrong) / static_cast<double>(noisy.data.cols());
  }

  Model::DecoderCache dec_cache;
  const Feature raw = model.decoder_forward(noisy, cond, draw.t, &dec_cache);
  Feature d_raw;
  result.loss = task_loss(model, raw, targets, settings, d_raw);

  result.grads = model.params().zeros_like();
  const bool learn_table = cfg.codec.strategy == Encoding::embedding;
  Feature d_noisy, d_cond;
  model.decoder_backward(dec_cache, d_raw, result.grads, learn_table ? &d_noisy : nullptr, &d_cond);
  model.encoder_backward(enc_cache, d_cond, result.grads);
  if (learn_table) {
    for (int i = 0; i < b; ++i) d_noisy.item(i) *= coeffs(settings.schedule, draw.t[i]).sqrt_alpha_bar;
    codec.accumulate_table_grad(input_labels, d_noisy.data, result.grads[model.embedding_param()]);
  }
  return result;
}

std::vector<DecodedMap> first_pass_predictions(const Model& model, const Feature& condition, const Matrix& noise) {
  Feature noisy(model.config().map_channels(), condition.batch, condition.height, condition.width);
  require(noise.rows() == noisy.data.rows() && noise.cols() == noisy.data.cols(), "first pass: noise shape mismatch");
  noisy.data = noise;
  const std::vector<double> t(condition.batch, 1.0);
  const Feature out = model.activate(model.decoder_forward(noisy, condition, t, nullptr));
  const Codec codec = model.codec();
  std::vector<DecodedMap> preds;
  for (int b = 0; b < out.batch; ++b) preds.push_back(codec.decode(out.slice(b)));
  return preds;
}

void apply_update(TrainState& state, const nn::Gradients& grads, const TrainSettings& s) {
  nn::Parameters& params = state.model.params();
  require(static_cast<int>(grads.size()) == params.size(), "apply_update: gradient count mismatch");
  const double lr = s.lr_at(state.step);
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (int i = 0; i < params.size(); ++i) {
    Matrix& m = state.adam_m[i];
    Matrix& v = state.adam_v[i];
    m = s.beta1 * m + (1.0 - s.beta1) * grads[i];
    v = s.beta2 * v + (1.0 - s.beta2) * grads[i].cwiseAbs2();
    Matrix& p = params[i];
    p.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + s.adam_eps) + s.weight_decay * p.array());
  }
  ++state.step;
  state.phase = s.phase_at(state.step);
}

namespace {

StepResult finish_step(TrainState& state, GradientResult& g, const TrainSettings& s, Phase phase) {
  if (!std::isfinite(g.loss) || !finite(g.grads))
    throw DivergenceError("training diverged at step " + std::to_string(state.step) + ": non-finite loss or gradient");
  StepResult r;
  r.loss = g.loss;
  r.lr = s.lr_at(state.step);
  r.phase = phase;
  r.input_disagreement = g.input_disagreement;
  apply_update(state, g.grads, s);
  return r;
}

CorruptionDraw draw_for(TrainState& state, const Batch& batch) {
  const int c = state.model.config().map_channels();
  const int h = (batch.images.height + 3) / 4, w = (batch.images.width + 3) / 4;
  return CorruptionDraw::sample(state.rng, batch.size(), c, static_cast<Eigen::Index>(batch.size()) * h * w);
}

}  // namespace

StepResult train_step(TrainState& state, const Batch& batch, const TrainSettings& settings) {
  const CorruptionDraw draw = draw_for(state, batch);
  GradientResult g =
      denoising_gradients(state.model, batch, downsampled_targets(batch, state.model.config().task), draw, settings);
  return finish_step(state, g, settings, Phase::standard);
}

StepResult self_aligned_step(TrainState& state, const Batch& batch, const TrainSettings& settings,
                             const FirstPassFn& first_pass) {
  const CorruptionDraw draw = draw_for(state, batch);
  const Feature cond = state.model.encoder_forward(reflect_pad_to_multiple(batch.images, 4), nullptr);
  std::vector<DecodedMap> inputs;
  if (first_pass) {
    inputs = first_pass(cond);
  } else {
    const Matrix noise = state.rng.normal_matrix(state.model.config().map_channels(), cond.data.cols());
    inputs = first_pass_predictions(state.model, cond, noise);
  }
  GradientResult g = denoising_gradients(state.model, batch, inputs, draw, settings);
  return finish_step(state, g, settings, Phase::self_aligned);
}

namespace {

constexpr uint64_t kStreamSalt = 0x7452a1d5c3b9e1f7ULL;

// Per-step activations are a few MB each; by default glibc serves them with
// fresh mmaps and returns them right away, so every step pays page faults.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

void append_log(std::ofstream& log, const nlohmann::json& record) {
  log << record.dump() << '\n';
  log.flush();
}

}  // namespace

FitResult fit(const ExperimentConfig& config, const std::optional<std::filesystem::path>& resume, bool quiet) {
  config.validate();
  keep_large_blocks_on_heap();
  const TrainSettings settings = TrainSettings::from_config(config);
  const Dataset train = config.make_dataset(false);
  const Dataset val = config.val_count > 0 ? config.make_dataset(true) : Dataset{};

  const std::filesystem::path out = config.resolved_output_dir();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());

  FitResult result;
  if (resume) {
    TrainState state(Model(config.model_config(), config.seed), config.seed ^ kStreamSalt);
    restore_state(state, read_checkpoint_contents(*resume));
    result.state.emplace(std::move(state));
  } else {
    result.state.emplace(Model(config.model_config(), config.seed), config.seed ^ kStreamSalt);
  }
  TrainState& state = *result.state;
  state.phase = settings.phase_at(state.step);

  const std::filesystem::path log_path = out / "log.jsonl";
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open log " + log_path.string());
  if (!resume) append_log(log, {{"kind", "header"}, {"config", config.to_json()}});

  result.final_checkpoint = out / "final.ckpt";
  result.best_checkpoint = out / "best.ckpt";
  result.best_metric = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  EvalOptions eval_opts;
  eval_opts.time = config.time_spec();
  eval_opts.seed = config.seed + 1;
  eval_opts.uncertainty_delta = config.uncertainty_delta;

  while (state.step < settings.total_steps) {
    std::vector<int> indices(config.batch_size);
    for (int& i : indices) i = state.rng.index(train.size());
    const Batch batch = Batch::gather(train, indices);
    const Phase phase = settings.phase_at(state.step);
    const StepResult r =
        phase == Phase::standard ? train_step(state, batch, settings) : self_aligned_step(state, batch, settings);
    result.losses.push_back(r.loss);
    const int64_t step = state.step;
    const bool last = step == settings.total_steps;
    if (config.log_interval > 0 && (step % config.log_interval == 0 || last)) {
      append_log(log, {{"kind", "train"}, {"step", step}, {"loss", r.loss}, {"lr", r.lr}, {"phase", to_string(r.phase)}});
      if (!quiet)
        std::cerr << "step " << step << " loss " << r.loss << " lr " << r.lr << " " << to_string(r.phase) << "\n";
    }
    if (val.size() > 0 && config.eval_interval > 0 && (step % config.eval_interval == 0 || last)) {
      const EvalResult e = evaluate(state.model, val, settings.schedule, eval_opts);
      nlohmann::json rec = {{"kind", "eval"}, {"step", step}, {"metrics", e.to_json()}};
      append_log(log, rec);
      if (!quiet) std::cerr << "eval step " << step << " metric " << e.primary_metric() << "\n";
      if (e.primary_metric() > result.best_metric) {
        result.best_metric = e.primary_metric();
        write_checkpoint(result.best_checkpoint, config, state);
        have_best = true;
      }
    }
    if (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0)
      write_checkpoint(out / "last.ckpt", config, state);
  }
  write_checkpoint(result.final_checkpoint, config, state);
  if (!have_best) {
    if (!std::filesystem::exists(result.best_checkpoint)) write_checkpoint(result.best_checkpoint, config, state);
    result.best_metric = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

}  // namespace ddp
