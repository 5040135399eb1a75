#include "ddp/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "ddp/array_io.hpp"
#include "ddp/checkpoint.hpp"
#include "ddp/inference.hpp"
#include "ddp/plot.hpp"
#include "ddp/training.hpp"

namespace ddp {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ContractError*>(&e)) return kExitValidation;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  return kExitRuntime;
}

namespace {

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative())
    if (const char* root = std::getenv("DDP_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

ExperimentConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  c.apply_overrides(overrides);
  c.validate();
  return c;
}

// Images to run on: a dataset directory, a single image array, or (when no
// input is named) the validation split regenerated from the checkpoint config.
Dataset load_inputs(const Checkpoint& ck, const std::string& input, bool need_targets) {
  const ModelConfig mc = ck.state.model.config();
  Dataset data;
  if (input.empty()) {
    data = ck.config.make_dataset(true);
  } else if (std::filesystem::is_directory(input)) {
    data = read_dataset(input);
  } else {
    data.task = mc.task;
    data.images.push_back(feature_from_array(read_array(input)));
  }
  for (const Feature& img : data.images)
    if (img.channels() != 3) throw FormatError("input images must have 3 channels, got " + std::to_string(img.channels()));
  const bool has_targets = !data.labels.empty() || !data.depths.empty();
  if (need_targets && data.size() == 0) throw ContractError("empty validation set");
  if (need_targets && !has_targets) throw FormatError("input has no ground-truth targets");
  if (has_targets) {
    if (data.task != mc.task)
      throw FormatError(std::string("dataset task '") + to_string(data.task) + "' does not match checkpoint task '" +
                        to_string(mc.task) + "'");
    if (mc.task == Task::segmentation && data.num_classes != mc.codec.num_classes)
      throw FormatError("dataset has " + std::to_string(data.num_classes) + " classes, checkpoint codec has " +
                        std::to_string(mc.codec.num_classes));
  }
  return data;
}

Array decoded_array(const DecodedMap& m) {
  if (const auto* l = std::get_if<LabelMap>(&m)) return to_array(*l);
  return to_array(std::get<DepthMap>(m));
}

Array trajectory_array(const std::vector<DecodedMap>& steps) {
  const auto n = static_cast<uint64_t>(steps.size());
  if (std::holds_alternative<LabelMap>(steps.front())) {
    const auto& first = std::get<LabelMap>(steps.front());
    std::vector<int32_t> values;
    bool fits = true;
    for (const auto& s : steps)
      for (int32_t v : std::get<LabelMap>(s).values) {
        values.push_back(v);
        fits = fits && v >= 0 && v <= 255;
      }
    const std::vector<uint64_t> shape{n, static_cast<uint64_t>(first.height), static_cast<uint64_t>(first.width)};
    if (!fits) return Array::from_i32(shape, values);
    const std::vector<uint8_t> bytes(values.begin(), values.end());
    return Array::from_u8(shape, bytes);
  }
  const auto& first = std::get<DepthMap>(steps.front());
  std::vector<double> values;
  for (const auto& s : steps) {
    const auto& v = std::get<DepthMap>(s).values;
    values.insert(values.end(), v.begin(), v.end());
  }
  return Array::from_f64({n, static_cast<uint64_t>(first.height), static_cast<uint64_t>(first.width)}, values);
}

struct RunSpec {
  std::string value;
  ExperimentConfig config;
};

const std::map<std::string, std::string> kAxisKeys = {
    {"scale", "scale"}, {"schedule", "schedule"}, {"encoding", "encoding"}, {"decoder_depth", "decoder_depth"},
    {"steps", "steps"}};

nlohmann::json table_row(const std::string& value, const EvalResult& e, const ModelConfig& mc) {
  nlohmann::json row;
  row["value"] = value;
  if (e.task == Task::segmentation) {
    row["macc"] = e.iou.mean_accuracy;
    row["miou"] = e.iou.mean_iou;
  } else {
    row["delta1"] = e.depth.delta1;
    row["rel"] = e.depth.rel;
  }
  row["primary"] = e.primary_metric();
  row["params"] = parameter_count(mc);
  row["decoder_calls_per_image"] = e.decoder_calls_per_image;
  row["seconds_per_image"] = e.seconds_per_image;
  return row;
}

EvalResult evaluate_config(const Model& model, const ExperimentConfig& c) {
  EvalOptions eo;
  eo.time = c.time_spec();
  eo.seed = c.seed + 1;
  eo.uncertainty_delta = c.uncertainty_delta;
  return evaluate(model, c.make_dataset(true), c.schedule_params(), eo);
}

}  // namespace

nlohmann::json run_ablation(const ExperimentConfig& base, const std::string& axis,
                            const std::vector<std::string>& values, int jobs, bool quiet) {
  const auto key = kAxisKeys.find(axis);
  if (key == kAxisKeys.end())
    throw ValidationError("ablate: unknown axis '" + axis + "' (expected scale, schedule, encoding, decoder_depth or steps)");
  if (values.empty()) throw ValidationError("ablate: no values given");
  if (jobs < 1) throw ValidationError("ablate: jobs must be >= 1");
  base.validate();

  std::vector<RunSpec> runs;
  for (const std::string& v : values) {
    ExperimentConfig c = base;
    c.set(key->second, v);
    c.validate();
    if (axis != "steps") c.output_dir = (std::filesystem::path(base.output_dir) / (axis + "_" + v)).string();
    runs.push_back({v, c});
  }

  nlohmann::json table;
  table["axis"] = axis;
  table["task"] = base.task;
  table["metric"] = base.task_kind() == Task::segmentation ? "miou" : "delta1";
  table["rows"] = nlohmann::json::array();

  if (axis == "steps") {
    ExperimentConfig c = base;
    c.output_dir = (std::filesystem::path(base.output_dir) / "steps").string();
    const FitResult fr = fit(c, std::nullopt, quiet);
    for (const RunSpec& r : runs)
      table["rows"].push_back(table_row(r.value, evaluate_config(fr.state->model, r.config), r.config.model_config()));
    return table;
  }

  std::vector<nlohmann::json> rows(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < runs.size(); i = next++) {
      try {
        const FitResult fr = fit(runs[i].config, std::nullopt, quiet || jobs > 1);
        rows[i] = table_row(runs[i].value, evaluate_config(fr.state->model, runs[i].config), runs[i].config.model_config());
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < std::min<int>(jobs, static_cast<int>(runs.size())); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& r : rows) table["rows"].push_back(std::move(r));
  return table;
}

namespace {

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& resume,
              bool quiet, std::ostream& out) {
  const ExperimentConfig c = build_config(config_path, overrides);
  const FitResult r = fit(c, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume), quiet);
  nlohmann::json summary = {{"steps", r.state->step},
                            {"final_checkpoint", r.final_checkpoint.string()},
                            {"best_checkpoint", r.best_checkpoint.string()},
                            {"final_loss", r.losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.losses.back())}};
  summary["best_metric"] = std::isfinite(r.best_metric) ? nlohmann::json(r.best_metric) : nlohmann::json(nullptr);
  out << summary.dump(2) << "\n";
  return kExitOk;
}

TimeSpec time_from(const Checkpoint& ck, int steps, int td) {
  TimeSpec t = ck.config.time_spec();
  if (steps > 0) t.steps = steps;
  if (td >= 0) t.td = td;
  if (t.steps < 1) throw ValidationError("steps must be >= 1");
  return t;
}

int cmd_sample(const std::string& checkpoint, const std::string& input, int steps, int td, uint64_t seed,
               const std::string& out_dir, int limit, bool palette, std::ostream& out) {
  if (out_dir.empty()) throw ValidationError("sample: --out is required");
  const Checkpoint ck = read_checkpoint(checkpoint);
  const TimeSpec time = time_from(ck, steps, td);
  const Dataset data = load_inputs(ck, input, false);
  const int n = limit >= 0 ? std::min(limit, data.size()) : data.size();
  if (n == 0) throw ContractError("sample: no input images");
  const std::filesystem::path dir = resolve_output(out_dir);
  ensure_dir(dir);
  const Model& model = ck.state.model;
  const ScheduleParams schedule = ck.config.schedule_params();
  for (int i = 0; i < n; ++i) {
    SampleOptions so;
    so.time = time;
    so.seed = seed + static_cast<uint64_t>(i);
    so.uncertainty_delta = ck.config.uncertainty_delta;
    const SampleTrajectory traj = predict(model, data.images[i], schedule, so);
    const std::string stem = index_name(i);
    write_array(dir / (stem + "_final.ddpa"), decoded_array(traj.final_prediction));
    write_array(dir / (stem + "_trajectory.ddpa"), trajectory_array(traj.per_step_predictions));
    write_array(dir / (stem + "_uncertainty.ddpa"), to_array(traj.uncertainty));
    if (palette) {
      if (const auto* l = std::get_if<LabelMap>(&traj.final_prediction))
        write_ppm(dir / (stem + "_final.ppm"), label_palette_image(*l));
      else
        write_ppm(dir / (stem + "_final.ppm"), depth_image(std::get<DepthMap>(traj.final_prediction),
                                                           model.config().codec.max_value));
    }
  }
  out << nlohmann::json{{"images", n}, {"steps", time.steps}, {"td", time.td}, {"out", dir.string()}}.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& input, int steps, int td, uint64_t seed, int limit,
             const std::string& out_file, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  EvalOptions eo;
  eo.time = time_from(ck, steps, td);
  eo.seed = seed;
  eo.limit = limit;
  eo.uncertainty_delta = ck.config.uncertainty_delta;
  const Dataset data = load_inputs(ck, input, true);
  if (data.size() == 0 || limit == 0) throw ContractError("eval: empty validation set");
  EvalResult r = evaluate(ck.state.model, data, ck.config.schedule_params(), eo);
  nlohmann::json rec = r.to_json();
  rec["steps"] = eo.time.steps;
  rec["td"] = eo.time.td;
  rec["checkpoint"] = checkpoint;
  const std::string text = rec.dump(2);
  if (!out_file.empty()) {
    const std::filesystem::path p = resolve_output(out_file);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    write_text(p, text + "\n");
  }
  out << text << "\n";
  return kExitOk;
}

std::vector<std::string> split_values(const std::vector<std::string>& raw) {
  std::vector<std::string> values;
  for (const std::string& r : raw) {
    size_t start = 0;
    while (start <= r.size()) {
      const size_t comma = r.find(',', start);
      const std::string v = r.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!v.empty()) values.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return values;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& axis,
               const std::vector<std::string>& raw_values, int jobs, bool quiet, std::ostream& out) {
  const ExperimentConfig c = build_config(config_path, overrides);
  const nlohmann::json table = run_ablation(c, axis, split_values(raw_values), jobs, quiet);
  const std::filesystem::path dir = c.resolved_output_dir();
  ensure_dir(dir);
  write_text(dir / ("ablation_" + axis + ".json"), table.dump(2) + "\n");
  out << table.dump(2) << "\n";
  return kExitOk;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

int cmd_plot(const std::string& input, const std::string& kind, const std::string& out_path,
             const std::string& errors_path, int zoom, std::ostream& out) {
  if (kind != "steps_curve" && kind != "uncertainty_overlay")
    throw ValidationError("plot: unknown kind '" + kind + "' (expected steps_curve or uncertainty_overlay)");
  if (out_path.empty()) throw ValidationError("plot: --out is required");
  if (!std::filesystem::exists(input)) throw IoError("plot: input " + input + " does not exist");
  const std::filesystem::path dest = resolve_output(out_path);
  if (kind == "steps_curve") {
    const std::string svg = steps_curve_svg(read_json(input));
    if (dest.has_parent_path()) ensure_dir(dest.parent_path());
    write_text(dest, svg);
  } else {
    const Grid<double> unc = grid_from_array(read_array(input));
    std::optional<Grid<uint8_t>> errors;
    if (!errors_path.empty()) {
      const std::vector<double> v = read_array(errors_path).to_f64();
      if (v.size() != unc.size()) throw FormatError("plot: error mask shape does not match the uncertainty map");
      errors.emplace(unc.height, unc.width);
      for (size_t p = 0; p < v.size(); ++p) errors->values[p] = v[p] != 0;
    }
    const RgbImage img = uncertainty_overlay(unc, errors ? &*errors : nullptr, zoom);
    if (dest.has_parent_path()) ensure_dir(dest.parent_path());
    write_ppm(dest, img);
  }
  out << dest.string() << "\n";
  return kExitOk;
}

int cmd_gendata(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& split,
                const std::string& out_dir, std::ostream& out) {
  if (split != "train" && split != "val") throw ValidationError("gendata: split must be 'train' or 'val'");
  if (out_dir.empty()) throw ValidationError("gendata: --out is required");
  const ExperimentConfig c = build_config(config_path, overrides);
  const Dataset d = c.make_dataset(split == "val");
  const std::filesystem::path dir = resolve_output(out_dir);
  write_dataset(dir, d);
  out << nlohmann::json{{"items", d.size()}, {"task", to_string(d.task)}, {"out", dir.string()}}.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional diffusion for dense prediction", "ddp"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, input, out_dir, axis, kind, errors_path, split = "val";
  std::vector<std::string> overrides, values;
  int steps = 0, td = -1, limit = -1, jobs = 1, zoom = 4;
  uint64_t seed = 0;
  bool quiet = false, palette = false;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "key=value override, repeatable")->allow_extra_args(false);
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "No progress output");

  auto* sample_cmd = app.add_subcommand("sample", "Sample predictions, trajectories and uncertainty maps");
  sample_cmd->add_option("--checkpoint", checkpoint)->required();
  sample_cmd->add_option("--input", input, "Dataset directory or image array (default: validation split)");
  sample_cmd->add_option("--steps", steps, "Sampling steps (default: from checkpoint)");
  sample_cmd->add_option("--td", td, "Time offset (default: from checkpoint)");
  sample_cmd->add_option("--seed", seed);
  sample_cmd->add_option("--out", out_dir)->required();
  sample_cmd->add_option("--limit", limit, "Process at most this many images");
  sample_cmd->add_flag("--palette", palette, "Also write PPM previews");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labelled set");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--input", input, "Dataset directory (default: validation split)");
  eval_cmd->add_option("--steps", steps);
  eval_cmd->add_option("--td", td);
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--limit", limit);
  eval_cmd->add_option("--out", out_dir, "Also write the record to this file");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate along one axis");
  ablate->add_option("--config", config_path)->check(CLI::ExistingFile);
  ablate->add_option("--set", overrides)->allow_extra_args(false);
  ablate->add_option("--axis", axis, "scale | schedule | encoding | decoder_depth | steps")->required();
  ablate->add_option("--values", values, "Comma-separated values")->required();
  ablate->add_option("--jobs", jobs, "Concurrent runs");
  ablate->add_flag("--quiet", quiet);

  auto* plot = app.add_subcommand("plot", "Render a steps curve or an uncertainty overlay");
  plot->add_option("--input", input)->required();
  plot->add_option("--kind", kind, "steps_curve | uncertainty_overlay")->required();
  plot->add_option("--out", out_dir)->required();
  plot->add_option("--errors", errors_path, "Misprediction mask array for overlays");
  plot->add_option("--zoom", zoom);

  auto* gendata = app.add_subcommand("gendata", "Write a synthetic dataset split to disk");
  gendata->add_option("--config", config_path)->check(CLI::ExistingFile);
  gendata->add_option("--set", overrides)->allow_extra_args(false);
  gendata->add_option("--split", split, "train | val");
  gendata->add_option("--out", out_dir)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, overrides, resume, quiet, out);
    if (sample_cmd->parsed()) return cmd_sample(checkpoint, input, steps, td, seed, out_dir, limit, palette, out);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, input, steps, td, seed, limit, out_dir, out);
    if (ablate->parsed()) return cmd_ablate(config_path, overrides, axis, values, jobs, quiet, out);
    if (plot->parsed()) return cmd_plot(input, kind, out_dir, errors_path, zoom, out);
    if (gendata->parsed()) return cmd_gendata(config_path, overrides, split, out_dir, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitValidation;
}

}  // namespace ddp
