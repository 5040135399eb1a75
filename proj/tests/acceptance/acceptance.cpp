// Acceptance suite: one PASS/FAIL line per criterion.
//
// Trained runs are cached under --work-dir keyed by their full config, so a
// rerun reuses finished checkpoints instead of retraining.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddp/checkpoint.hpp"
#include "ddp/codec.hpp"
#include "ddp/config.hpp"
#include "ddp/diffusion.hpp"
#include "ddp/inference.hpp"
#include "ddp/metrics.hpp"
#include "ddp/schedule.hpp"
#include "ddp/training.hpp"
#include "../common/fixtures.hpp"

namespace fs = std::filesystem;
using namespace ddp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

// ---------------------------------------------------------------- analytic

Outcome schedule_oracle() {
  const ScheduleParams p = ScheduleParams::cosine();
  const double mid = alpha_bar_at(p, 0.5);
  double prev = alpha_bar_at(p, 0.0);
  bool monotone = true;
  for (int i = 1; i < 1000; ++i) {
    const double a = alpha_bar_at(p, i / 999.0);
    monotone = monotone && a <= prev;
    prev = a;
  }
  const double end = alpha_bar_at(p, 1.0);
  return {std::abs(mid - 0.5) <= 1e-2 && monotone && end < 1e-6,
          "alpha_bar(0.5)=" + fmt(mid, 6) + " monotone=" + (monotone ? "yes" : "no") + " alpha_bar(1)=" + sci(end)};
}

Outcome corruption_statistics() {
  Rng rng(2024);
  const ScheduleParams p = ScheduleParams::cosine();
  Feature z0(3, 1, 1, 2);
  z0.data << 0.01, -0.01, 0.005, 0.0, 0.01, -0.002;
  const int n = 10000;
  double worst_z = 0, worst_var = 0;
  for (double t : {0.25, 0.5, 0.75}) {
    const double ab = alpha_bar_at(p, t);
    Matrix sum = Matrix::Zero(3, 2), sum_sq = Matrix::Zero(3, 2);
    for (int i = 0; i < n; ++i) {
      const Matrix v = corrupt(z0, t, rng.normal_matrix(3, 2), p).values.data;
      sum += v;
      sum_sq += v.cwiseAbs2();
    }
    const Matrix mean = sum / n;
    const Matrix var = (sum_sq - n * mean.cwiseAbs2()) / (n - 1);
    const double se = std::sqrt((1 - ab) / n);
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
      worst_z = std::max(worst_z, std::abs(mean.data()[k] - std::sqrt(ab) * z0.data.data()[k]) / se);
      worst_var = std::max(worst_var, std::abs(var.data()[k] / (1 - ab) - 1));
    }
  }
  return {worst_z < 4 && worst_var < 0.05,
          "worst mean deviation " + fmt(worst_z, 2) + " SE, worst variance error " + fmt(100 * worst_var, 2) + "%"};
}

Outcome ddim_transport() {
  Rng rng(99);
  double worst = 0;
  for (const ScheduleParams& p : {ScheduleParams::cosine(), ScheduleParams::linear()})
    for (int trial = 0; trial < 100; ++trial) {
      Feature z0(4, 1, 3, 3);
      z0.data = rng.normal_matrix(4, 9) * 0.1;
      const Matrix eps = rng.normal_matrix(4, 9);
      double t_now = rng.uniform(0.01, 1.0), t_next = rng.uniform(0.0, 1.0);
      if (t_next > t_now) std::swap(t_now, t_next);
      const NoisyMap stepped = ddim_step(corrupt(z0, t_now, eps, p), z0, t_now, t_next, p);
      const NoisyMap direct = corrupt(z0, t_next, eps, p);
      worst = std::max(worst, (stepped.values.data - direct.values.data).cwiseAbs().maxCoeff());
    }
  return {worst < 1e-9, "max abs error " + sci(worst) + " over 200 draws"};
}

Outcome codec_roundtrips() {
  int checked = 0, wrong = 0;
  for (Encoding e : {Encoding::onehot, Encoding::analog_bits, Encoding::embedding})
    for (int k : {2, 3, 4, 19, 150, 256}) {
      CodecSpec s;
      s.strategy = e;
      s.num_classes = k;
      s.scale = e == Encoding::embedding ? 0.01 : 0.1;
      Rng rng(k);
      const Codec c = e == Encoding::embedding ? Codec(s, Codec::random_table(k, s.embed_dim, rng)) : Codec(s);
      for (int l = 0; l < k; ++l, ++checked) wrong += c.roundtrip_label(l) != l;
    }
  return {wrong == 0, std::to_string(checked) + " labels, " + std::to_string(wrong) + " mismatches"};
}

Outcome gradient_check() {
  double worst = 0;
  for (const char* task : {"segmentation", "depth"}) {
    ExperimentConfig c = ddp::testing::tiny_config(task);
    c.encoder_width = 3;
    c.fpn_channels = 3;
    c.cond_channels = 3;
    c.decoder_width = 4;
    c.embed_dim = 3;
    Model m(c.model_config(), 7);
    ddp::testing::randomize(m, 8);
    if (c.task == "segmentation") {
      Rng rng(9);
      m.params()[m.embedding_param()] = Codec::random_table(c.num_classes, c.embed_dim, rng);
    }
    const Dataset data = c.make_dataset(false);
    const Batch batch = Batch::gather(data, {0, 1});
    Rng rng(10);
    // 16x16 images give a 4x4 map at quarter resolution.
    const CorruptionDraw draw = CorruptionDraw::sample(rng, 2, m.config().map_channels(), 2 * 16);
    const double err = ddp::testing::worst_gradient_error(m, batch, downsampled_targets(batch, m.config().task), draw,
                                                          TrainSettings::from_config(c));
    worst = std::max(worst, err);
  }
  return {worst < 1e-4, "worst relative error " + sci(worst) + " (segmentation and depth heads)"};
}

// ---------------------------------------------------------------- trained runs

struct TrainedRun {
  ExperimentConfig config;
  Model model;
  std::vector<double> losses;
  double seconds = 0;
  bool cached = false;
};

std::vector<double> read_losses(const fs::path& log) {
  std::vector<double> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.value("kind", "") == "train") out.push_back(j.at("loss").get<double>());
  }
  return out;
}

class RunCache {
 public:
  explicit RunCache(fs::path root) : root_(std::move(root)) {}

  TrainedRun get(const std::string& name, ExperimentConfig c) {
    c.output_dir = (root_ / name).string();
    const fs::path final_ckpt = fs::path(c.output_dir) / "final.ckpt";
    if (fs::exists(final_ckpt)) {
      try {
        Checkpoint ck = read_checkpoint(final_ckpt);
        if (ck.config.to_json() == c.to_json() && ck.state.step == c.total_steps) {
          std::fprintf(stderr, "[acceptance] reusing %s\n", name.c_str());
          return {c, ck.state.model, read_losses(fs::path(c.output_dir) / "log.jsonl"), 0.0, true};
        }
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[acceptance] stale cache for %s: %s\n", name.c_str(), e.what());
      }
    }
    fs::remove_all(c.output_dir);
    std::fprintf(stderr, "[acceptance] training %s (%d steps)\n", name.c_str(), c.total_steps);
    const auto start = std::chrono::steady_clock::now();
    FitResult r = fit(c, std::nullopt, true);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "[acceptance] %s done in %.0f s\n", name.c_str(), secs);
    return {c, r.state->model, r.losses, secs, false};
  }

 private:
  fs::path root_;
};

EvalResult eval_at(const TrainedRun& run, const Dataset& val, int steps) {
  EvalOptions eo;
  eo.time = run.config.time_spec();
  eo.time.steps = steps;
  eo.seed = 1000;
  eo.uncertainty_delta = run.config.uncertainty_delta;
  return evaluate(run.model, val, run.config.schedule_params(), eo);
}

struct SegSummary {
  std::vector<double> miou1, miou3, miou10, agreement3, seconds;
};

SegSummary evaluate_seeds(RunCache& cache, const std::string& prefix, const ExperimentConfig& base,
                          const std::vector<uint64_t>& seeds, bool with_trend) {
  SegSummary s;
  const Dataset val = base.make_dataset(true);
  for (uint64_t seed : seeds) {
    ExperimentConfig c = base;
    c.seed = seed;
    const TrainedRun run = cache.get(prefix + "_seed" + std::to_string(seed), c);
    if (!run.cached) s.seconds.push_back(run.seconds);
    const EvalResult e3 = eval_at(run, val, 3);
    s.miou3.push_back(e3.iou.mean_iou);
    s.agreement3.push_back(e3.uncertainty_agreement);
    if (with_trend) {
      s.miou1.push_back(eval_at(run, val, 1).iou.mean_iou);
      s.miou10.push_back(eval_at(run, val, 10).iou.mean_iou);
    }
    std::fprintf(stderr, "[acceptance] %s seed %llu: mIoU(3)=%.4f%s\n", prefix.c_str(),
                 static_cast<unsigned long long>(seed), e3.iou.mean_iou,
                 with_trend ? (" mIoU(1)=" + fmt(s.miou1.back()) + " mIoU(10)=" + fmt(s.miou10.back())).c_str() : "");
  }
  return s;
}

std::string timing(const SegSummary& s) {
  if (s.seconds.empty()) return "cached";
  return "max train time " + fmt(*std::max_element(s.seconds.begin(), s.seconds.end()) / 60.0, 1) + " min";
}

// Reference single-pass baselines without diffusion, reported beside the fixed targets.

// Nearest class-mean color per pixel.
double color_baseline_miou(const ExperimentConfig& c) {
  const Dataset train = c.make_dataset(false), val = c.make_dataset(true);
  Matrix sums = Matrix::Zero(3, c.num_classes);
  Vector counts = Vector::Zero(c.num_classes);
  for (int i = 0; i < train.size(); ++i)
    for (size_t p = 0; p < train.labels[i].size(); ++p) {
      sums.col(train.labels[i].values[p]) += train.images[i].data.col(static_cast<Eigen::Index>(p));
      counts(train.labels[i].values[p]) += 1;
    }
  for (int k = 0; k < c.num_classes; ++k) sums.col(k) /= std::max(counts(k), 1.0);
  ConfusionMatrix cm(c.num_classes);
  for (int i = 0; i < val.size(); ++i) {
    LabelMap pred(val.labels[i].height, val.labels[i].width);
    for (size_t p = 0; p < pred.size(); ++p) {
      Eigen::Index best = 0;
      (sums.colwise() - val.images[i].data.col(static_cast<Eigen::Index>(p))).colwise().squaredNorm().minCoeff(&best);
      pred.values[p] = static_cast<int>(best);
    }
    cm.add(val.labels[i], pred);
  }
  return miou(cm).mean_iou;
}

// Per-pixel least-squares fit of log depth on color.
double color_baseline_delta1(const ExperimentConfig& c) {
  const Dataset train = c.make_dataset(false), val = c.make_dataset(true);
  auto design = [](const Feature& img) {
    Matrix x(img.data.cols(), 4);
    x.col(0).setOnes();
    x.rightCols(3) = img.data.transpose();
    return x;
  };
  Matrix xtx = Matrix::Zero(4, 4);
  Vector xty = Vector::Zero(4);
  for (int i = 0; i < train.size(); ++i) {
    const Matrix x = design(train.images[i]);
    Vector y(x.rows());
    for (Eigen::Index p = 0; p < y.size(); ++p) y(p) = std::log(train.depths[i].values[p]);
    xtx += x.transpose() * x;
    xty += x.transpose() * y;
  }
  const Vector w = xtx.ldlt().solve(xty);
  DepthAccumulator acc;
  for (int i = 0; i < val.size(); ++i) {
    const Vector logd = design(val.images[i]) * w;
    DepthMap pred(val.depths[i].height, val.depths[i].width);
    for (size_t p = 0; p < pred.size(); ++p)
      pred.values[p] = std::clamp(std::exp(logd(static_cast<Eigen::Index>(p))), 1e-3, c.max_depth);
    acc.add(pred, val.depths[i]);
  }
  return acc.result().delta1;
}

Outcome depth_criterion(RunCache& cache, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.task = "depth";
  const TrainedRun run = cache.get("depth_seed0", c);
  if (run.losses.size() < 200) return {false, "too few logged losses"};
  const std::vector<double> first(run.losses.begin(), run.losses.begin() + 20);
  const std::vector<double> last(run.losses.end() - 100, run.losses.end());
  const double ratio = median(first) / median(last);

  const Dataset val = c.make_dataset(true);
  bool ordered = true;
  EvalResult e3;
  for (int steps : {1, 3, 10}) {
    const EvalResult e = eval_at(run, val, steps);
    ordered = ordered && e.depth.delta1 <= e.depth.delta2 && e.depth.delta2 <= e.depth.delta3;
    if (steps == 3) e3 = e;
  }
  SampleOptions so;
  so.time = c.time_spec();
  for (int i = 0; i < val.size(); ++i) {
    so.seed = 2000 + static_cast<uint64_t>(i);
    const SampleTrajectory t = predict(run.model, val.images[i], c.schedule_params(), so);
    const DepthMetrics m = depth_metrics(std::get<DepthMap>(t.final_prediction), val.depths[i]);
    ordered = ordered && m.delta1 <= m.delta2 && m.delta2 <= m.delta3;
  }
  const bool pass = ratio >= 5.0 && e3.depth.delta1 > 0.90 && ordered;
  return {pass, "silog first-20 median " + fmt(median(first)) + " / last-100 median " + fmt(median(last)) + " = " +
                    fmt(ratio, 2) + "x, delta1=" + fmt(e3.depth.delta1) + " delta2=" + fmt(e3.depth.delta2) +
                    " delta3=" + fmt(e3.depth.delta3) + " REL=" + fmt(e3.depth.rel) +
                    ", ordering " + (ordered ? "holds" : "violated") +
                    ", color regression baseline delta1=" + fmt(color_baseline_delta1(c)) + (run.cached ? ", cached" : ", train " + fmt(run.seconds / 60, 1) + " min")};
}

Outcome efficiency_contract(const Model& model, const ExperimentConfig& c) {
  const Dataset val = c.make_dataset(true);
  bool ok = true;
  std::string detail;
  for (int steps : {1, 3, 10}) {
    for (int i = 0; i < 3; ++i) {
      model.reset_counters();
      SampleOptions so;
      so.time = c.time_spec();
      so.time.steps = steps;
      so.seed = static_cast<uint64_t>(i);
      const SampleTrajectory t = predict(model, val.images[i], c.schedule_params(), so);
      ok = ok && model.encode_calls() == 1 && model.decode_calls() == static_cast<uint64_t>(steps) &&
           t.decoder_calls == steps;
    }
    detail += "steps=" + std::to_string(steps) + ": encode " + std::to_string(model.encode_calls()) + ", decode " +
              std::to_string(model.decode_calls()) + "; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  int total_steps = 5000, self_aligned = 500;
  std::vector<uint64_t> seeds{0, 1, 2};
  app.add_option("--work-dir", work_dir, "Directory for cached training runs");
  app.add_option("--total-steps", total_steps, "Training budget per run");
  app.add_option("--self-aligned-steps", self_aligned, "Self-aligned phase length");
  app.add_option("--seeds", seeds, "Training seeds")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int n, const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail
              << std::endl;
  };

  report(1, "schedule oracle", schedule_oracle);
  report(2, "corruption statistics", corruption_statistics);
  report(3, "DDIM exact transport", ddim_transport);
  report(4, "codec round trips", codec_roundtrips);
  report(5, "gradient check", gradient_check);

  fs::create_directories(work_dir);
  RunCache cache(work_dir);
  ExperimentConfig base;
  base.total_steps = total_steps;
  base.self_aligned_steps = self_aligned;
  base.log_interval = 1;
  base.eval_interval = total_steps;
  base.checkpoint_interval = total_steps;

  SegSummary def;
  report(6, "toy segmentation trend", [&] {
    def = evaluate_seeds(cache, "seg_default", base, seeds, true);
    const double m1 = median(def.miou1), m3 = median(def.miou3);
    return Outcome{m3 >= m1 && m1 >= 0.80, "median mIoU(1)=" + fmt(m1) + " mIoU(3)=" + fmt(m3) + " per seed (1) " +
                                               list(def.miou1) + " (3) " + list(def.miou3) +
                                               ", color baseline mIoU=" + fmt(color_baseline_miou(base)) + ", " +
                                               timing(def)};
  });

  report(7, "ablation trends", [&] {
    ExperimentConfig lin = base;
    lin.schedule = "linear";
    ExperimentConfig coarse = base;
    coarse.scale = 0.1;
    const SegSummary l = evaluate_seeds(cache, "seg_linear", lin, seeds, false);
    const SegSummary s = evaluate_seeds(cache, "seg_scale0.1", coarse, seeds, false);
    const double cos3 = median(def.miou3), lin3 = median(l.miou3), s01 = median(s.miou3);
    return Outcome{cos3 >= lin3 && cos3 >= s01, "cosine " + fmt(cos3) + " vs linear " + fmt(lin3) +
                                                    "; scale 0.01 " + fmt(cos3) + " vs scale 0.1 " + fmt(s01)};
  });

  report(8, "self-aligned denoising", [&] {
    ExperimentConfig off = base;
    off.self_aligned_steps = 0;
    const SegSummary o = evaluate_seeds(cache, "seg_no_self_aligned", off, seeds, true);
    std::vector<double> d_on, d_off;
    for (size_t i = 0; i < seeds.size(); ++i) {
      d_on.push_back(def.miou10.at(i) - def.miou3.at(i));
      d_off.push_back(o.miou10.at(i) - o.miou3.at(i));
    }
    const double on = median(d_on), offm = median(d_off);
    return Outcome{on >= offm, "median delta enabled " + fmt(on, 5) + " vs disabled " + fmt(offm, 5) +
                                   " per seed " + list(d_on) + " vs " + list(d_off)};
  });

  report(9, "uncertainty awareness", [&] {
    double mean = 0;
    for (double a : def.agreement3) mean += a;
    mean /= static_cast<double>(def.agreement3.size());
    return Outcome{mean > 0.05, "mean point-biserial correlation " + fmt(mean) + " per seed " + list(def.agreement3)};
  });

  report(10, "toy depth", [&] { return depth_criterion(cache, base); });

  report(11, "efficiency contract", [&] {
    ExperimentConfig c = base;
    c.seed = seeds.front();
    return efficiency_contract(cache.get("seg_default_seed" + std::to_string(c.seed), c).model, c);
  });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
