#include "ddp/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <variant>

namespace ddp {

namespace {

using C = ExperimentConfig;
using Member = std::variant<int C::*, double C::*, uint64_t C::*, std::string C::*, std::optional<double> C::*>;

struct FieldDef {
  const char* name;
  Member member;
};

const std::vector<FieldDef>& fields() {
  static const std::vector<FieldDef> defs = {
      {"task", &C::task},
      {"seed", &C::seed},
      {"data_seed", &C::data_seed},
      {"train_count", &C::train_count},
      {"val_count", &C::val_count},
      {"image_size", &C::image_size},
      {"num_classes", &C::num_classes},
      {"shapes_min", &C::shapes_min},
      {"shapes_max", &C::shapes_max},
      {"noise_std", &C::noise_std},
      {"max_depth", &C::max_depth},
      {"octaves", &C::octaves},
      {"depth_noise_std", &C::depth_noise_std},
      {"encoding", &C::encoding},
      {"embed_dim", &C::embed_dim},
      {"scale", &C::scale},
      {"schedule", &C::schedule},
      {"ns", &C::ns},
      {"ds", &C::ds},
      {"beta_min", &C::beta_min},
      {"beta_max", &C::beta_max},
      {"clamp_eps", &C::clamp_eps},
      {"encoder_width", &C::encoder_width},
      {"fpn_channels", &C::fpn_channels},
      {"cond_channels", &C::cond_channels},
      {"decoder_depth", &C::decoder_depth},
      {"decoder_width", &C::decoder_width},
      {"time_embed_dim", &C::time_embed_dim},
      {"mlp_ratio", &C::mlp_ratio},
      {"steps", &C::steps},
      {"td", &C::td},
      {"uncertainty_delta", &C::uncertainty_delta},
      {"objective", &C::objective},
      {"lr", &C::lr},
      {"weight_decay", &C::weight_decay},
      {"lr_power", &C::lr_power},
      {"total_steps", &C::total_steps},
      {"self_aligned_steps", &C::self_aligned_steps},
      {"batch_size", &C::batch_size},
      {"lambda_si", &C::lambda_si},
      {"alpha_scale", &C::alpha_scale},
      {"log_interval", &C::log_interval},
      {"eval_interval", &C::eval_interval},
      {"checkpoint_interval", &C::checkpoint_interval},
      {"output_dir", &C::output_dir},
  };
  return defs;
}

const FieldDef* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.name) return &f;
  return nullptr;
}

void assign_json(C& c, const FieldDef& f, const nlohmann::json& v) {
  const std::string where = std::string("field '") + f.name + "'";
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw ValidationError(where + ": expected a string");
          c.*member = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) throw ValidationError(where + ": expected a number");
          c.*member = v.get<double>();
        } else if constexpr (std::is_same_v<T, std::optional<double>>) {
          if (v.is_null() || (v.is_string() && v.get<std::string>() == "auto"))
            c.*member = std::nullopt;
          else if (v.is_number())
            c.*member = v.get<double>();
          else
            throw ValidationError(where + ": expected a number, null or \"auto\"");
        } else if constexpr (std::is_same_v<T, uint64_t>) {
          if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0))
            throw ValidationError(where + ": expected a non-negative integer");
          c.*member = v.get<uint64_t>();
        } else {
          if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
          c.*member = v.get<int>();
        }
      },
      f.member);
}

nlohmann::json parse_override_value(const FieldDef& f, const std::string& text) {
  const std::string where = std::string("--set ") + f.name + "=" + text;
  return std::visit(
      [&](auto member) -> nlohmann::json {
        using T = std::remove_reference_t<decltype(std::declval<C&>().*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return text;
        } else {
          if constexpr (std::is_same_v<T, std::optional<double>>)
            if (text == "auto" || text == "null") return nullptr;
          try {
            size_t used = 0;
            if constexpr (std::is_same_v<T, int>) {
              const long long v = std::stoll(text, &used);
              if (used == text.size()) return v;
            } else if constexpr (std::is_same_v<T, uint64_t>) {
              if (!text.empty() && text[0] != '-') {
                const unsigned long long v = std::stoull(text, &used);
                if (used == text.size()) return v;
              }
            } else {
              const double v = std::stod(text, &used);
              if (used == text.size()) return v;
            }
          } catch (const std::exception&) {
          }
          throw ValidationError(where + ": value does not parse as the field's type");
        }
      },
      f.member);
}

}  // namespace

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

Task ExperimentConfig::task_kind() const { return task_from_string(task); }

double ExperimentConfig::resolved_scale() const {
  if (scale) return *scale;
  if (task_kind() == Task::depth) return 0.01;
  return encoding == "embedding" ? 0.01 : 0.1;
}

CodecSpec ExperimentConfig::codec_spec() const {
  CodecSpec s;
  s.strategy = task_kind() == Task::depth ? Encoding::continuous : encoding_from_string(encoding);
  s.num_classes = num_classes;
  s.embed_dim = embed_dim;
  s.scale = resolved_scale();
  s.max_value = max_depth;
  return s;
}

ScheduleParams ExperimentConfig::schedule_params() const {
  ScheduleParams p;
  p.kind = schedule_kind_from_string(schedule.c_str());
  p.ns = ns;
  p.ds = ds;
  p.beta_min = beta_min;
  p.beta_max = beta_max;
  p.clamp_eps = clamp_eps;
  return p;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.task = task_kind();
  m.codec = codec_spec();
  m.encoder_width = encoder_width;
  m.fpn_channels = fpn_channels;
  m.cond_channels = cond_channels;
  m.decoder.depth = decoder_depth;
  m.decoder.width = decoder_width;
  m.decoder.time_embed_dim = time_embed_dim;
  m.decoder.mlp_ratio = mlp_ratio;
  return m;
}

TimeSpec ExperimentConfig::time_spec() const { return {steps, td}; }

namespace {
constexpr uint64_t kValidationSeedOffset = 0x5EED0FF5E7ULL;
}

SyntheticSegSpec ExperimentConfig::seg_spec(bool validation) const {
  SyntheticSegSpec s;
  s.seed = validation ? data_seed + kValidationSeedOffset : data_seed;
  s.count = validation ? val_count : train_count;
  s.size = image_size;
  s.num_classes = num_classes;
  s.shapes_min = shapes_min;
  s.shapes_max = shapes_max;
  s.noise_std = noise_std;
  return s;
}

SyntheticDepthSpec ExperimentConfig::depth_spec(bool validation) const {
  SyntheticDepthSpec s;
  s.seed = validation ? data_seed + kValidationSeedOffset : data_seed;
  s.count = validation ? val_count : train_count;
  s.size = image_size;
  s.max_depth = max_depth;
  s.octaves = octaves;
  s.noise_std = depth_noise_std;
  return s;
}

Dataset ExperimentConfig::make_dataset(bool validation) const {
  return task_kind() == Task::segmentation ? gen_segmentation(seg_spec(validation))
                                           : gen_depth(depth_spec(validation));
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char* field) {
    if (!ok) bad.emplace_back(field);
  };
  auto check_throws = [&](auto&& fn, const char* field) {
    try {
      fn();
    } catch (const ValidationError&) {
      bad.emplace_back(field);
    }
  };
  check_throws([&] { task_from_string(task); }, "task");
  check_throws([&] { encoding_from_string(encoding); }, "encoding");
  check_throws([&] { schedule_kind_from_string(schedule.c_str()); }, "schedule");
  check(objective == "task" || objective == "l2", "objective");
  check(train_count >= 0, "train_count");
  check(val_count >= 0, "val_count");
  check(image_size >= 16, "image_size");
  check(num_classes >= 2, "num_classes");
  check(shapes_min >= 0, "shapes_min");
  check(shapes_max >= shapes_min, "shapes_max");
  check(noise_std >= 0, "noise_std");
  check(max_depth > 0, "max_depth");
  check(octaves >= 1, "octaves");
  check(depth_noise_std >= 0, "depth_noise_std");
  check(embed_dim >= 1, "embed_dim");
  check(!scale || *scale > 0, "scale");
  check(ns >= 0, "ns");
  check(ds >= 0, "ds");
  check(beta_min > 0 && beta_min < beta_max, "beta_min/beta_max");
  check(clamp_eps > 0, "clamp_eps");
  check(encoder_width >= 1, "encoder_width");
  check(fpn_channels >= 1, "fpn_channels");
  check(cond_channels >= 1, "cond_channels");
  check(decoder_depth >= 1, "decoder_depth");
  check(decoder_width >= 1, "decoder_width");
  check(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim");
  check(mlp_ratio >= 1, "mlp_ratio");
  check(steps >= 1, "steps");
  check(td >= 0, "td");
  check(lr >= 0, "lr");
  check(weight_decay >= 0, "weight_decay");
  check(lr_power >= 0, "lr_power");
  check(total_steps >= 0, "total_steps");
  check(self_aligned_steps >= 0 && self_aligned_steps <= total_steps, "self_aligned_steps");
  check(batch_size >= 1, "batch_size");
  check(lambda_si >= 0 && lambda_si <= 1, "lambda_si");
  check(alpha_scale > 0, "alpha_scale");
  check(log_interval >= 1, "log_interval");
  check(eval_interval >= 0, "eval_interval");
  check(checkpoint_interval >= 0, "checkpoint_interval");
  check(!output_dir.empty(), "output_dir");
  if (bad.empty()) {
    const bool seg = task == "segmentation";
    check(seg ? encoding != "continuous" : true, "encoding");
  }
  if (!bad.empty()) {
    std::string msg = "invalid config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw ValidationError(msg);
  }
}

std::filesystem::path ExperimentConfig::resolved_output_dir() const {
  std::filesystem::path p(output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv("DDP_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields())
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::optional<double>>) {
            if (this->*member)
              j[f.name] = *(this->*member);
            else
              j[f.name] = nullptr;
          } else {
            j[f.name] = this->*member;
          }
        },
        f.member);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  ExperimentConfig c;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : j.items()) {
    const FieldDef* f = find_field(key);
    if (!f) {
      unknown.push_back(key);
      continue;
    }
    assign_json(c, *f, value);
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
  }
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const FieldDef* f = find_field(key);
  if (!f) throw ValidationError("--set: unknown key '" + key + "'");
  assign_json(*this, *f, parse_override_value(*f, value));
}

void ExperimentConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set: expected key=value, got '" + a + "'");
    set(a.substr(0, eq), a.substr(eq + 1));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config.to_json().dump(2) << "\n";
}

}  // namespace ddp
