#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ddp/checkpoint.hpp"
#include "ddp/cli.hpp"
#include "ddp/inference.hpp"
#include "ddp/metrics.hpp"
#include "ddp/training.hpp"

namespace py = pybind11;
using namespace ddp;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<int32_t, py::array::c_style | py::array::forcecast>;

Feature feature_from(const F64Array& a) {
  if (a.ndim() != 3) throw py::value_error("expected a (C, H, W) array");
  const auto c = static_cast<int>(a.shape(0)), h = static_cast<int>(a.shape(1)), w = static_cast<int>(a.shape(2));
  Feature f(c, 1, h, w);
  const double* src = a.data();
  for (int ch = 0; ch < c; ++ch)
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(h) * w; ++p) f.data(ch, p) = src[ch * h * w + p];
  return f;
}

F64Array array_from(const Feature& f) {
  if (f.batch != 1) throw py::value_error("expected a single item");
  F64Array out({f.channels(), f.height, f.width});
  double* dst = out.mutable_data();
  const Eigen::Index n = f.pixels_per_item();
  for (int ch = 0; ch < f.channels(); ++ch)
    for (Eigen::Index p = 0; p < n; ++p) dst[ch * n + p] = f.data(ch, p);
  return out;
}

LabelMap labels_from(const I32Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected an (H, W) label array");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + m.size(), m.values.begin());
  return m;
}

DepthMap depth_from(const F64Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected an (H, W) depth array");
  DepthMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + m.size(), m.values.begin());
  return m;
}

template <typename T>
py::array_t<T> array_from(const Grid<T>& g) {
  py::array_t<T> out({g.height, g.width});
  std::copy(g.values.begin(), g.values.end(), out.mutable_data());
  return out;
}

py::object decoded_to_py(const DecodedMap& m) {
  if (const auto* l = std::get_if<LabelMap>(&m)) return array_from(*l);
  return array_from(std::get<DepthMap>(m));
}

ScheduleParams schedule_named(const std::string& name) {
  return schedule_kind_from_string(name.c_str()) == ScheduleKind::cosine ? ScheduleParams::cosine()
                                                                          : ScheduleParams::linear();
}

py::dict json_to_dict(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

CodecSpec codec_spec(const std::string& strategy, int num_classes, int embed_dim, std::optional<double> scale,
                     double max_value) {
  CodecSpec s;
  s.strategy = encoding_from_string(strategy);
  s.num_classes = num_classes;
  s.embed_dim = embed_dim;
  s.scale = scale ? *scale : (s.strategy == Encoding::embedding ? 0.01 : 0.1);
  s.max_value = max_value;
  s.validate();
  return s;
}

Codec make_codec(const CodecSpec& s, uint64_t seed) {
  if (s.strategy != Encoding::embedding) return Codec(s);
  Rng rng(seed);
  return Codec(s, Codec::random_table(s.num_classes, s.embed_dim, rng));
}

std::vector<std::string> overrides_from(const py::object& obj) {
  std::vector<std::string> out;
  if (obj.is_none()) return out;
  if (py::isinstance<py::dict>(obj)) {
    for (auto item : obj.cast<py::dict>())
      out.push_back(py::str(item.first).cast<std::string>() + "=" + py::str(item.second).cast<std::string>());
    return out;
  }
  return obj.cast<std::vector<std::string>>();
}

py::tuple dataset_arrays(const Dataset& d) {
  const int n = d.size();
  const int h = n ? d.images[0].height : 0, w = n ? d.images[0].width : 0;
  F64Array images({n, 3, h, w});
  double* dst = images.mutable_data();
  for (int i = 0; i < n; ++i) {
    const F64Array one = array_from(d.images[i]);
    std::copy(one.data(), one.data() + 3 * h * w, dst + static_cast<size_t>(i) * 3 * h * w);
  }
  if (d.task == Task::segmentation) {
    py::array_t<int32_t> labels({n, h, w});
    for (int i = 0; i < n; ++i)
      std::copy(d.labels[i].values.begin(), d.labels[i].values.end(), labels.mutable_data() + static_cast<size_t>(i) * h * w);
    return py::make_tuple(images, labels);
  }
  F64Array depths({n, h, w});
  for (int i = 0; i < n; ++i)
    std::copy(d.depths[i].values.begin(), d.depths[i].values.end(), depths.mutable_data() + static_cast<size_t>(i) * h * w);
  return py::make_tuple(images, depths);
}

class Predictor {
 public:
  explicit Predictor(const std::string& path) : ck_(read_checkpoint(path)) {}

  py::dict predict(const F64Array& image, int steps, int td, uint64_t seed) const {
    SampleOptions so;
    so.time = ck_.config.time_spec();
    if (steps > 0) so.time.steps = steps;
    if (td >= 0) so.time.td = td;
    so.seed = seed;
    so.uncertainty_delta = ck_.config.uncertainty_delta;
    const Feature img = feature_from(image);
    SampleTrajectory traj;
    {
      py::gil_scoped_release release;
      traj = ddp::predict(ck_.state.model, img, ck_.config.schedule_params(), so);
    }
    py::list trajectory;
    for (const auto& m : traj.per_step_predictions) trajectory.append(decoded_to_py(m));
    py::dict out;
    out["final"] = decoded_to_py(traj.final_prediction);
    out["trajectory"] = trajectory;
    out["uncertainty"] = array_from(traj.uncertainty);
    out["decoder_calls"] = traj.decoder_calls;
    return out;
  }

  py::dict evaluate(int steps, int td, uint64_t seed, int limit) const {
    EvalOptions eo;
    eo.time = ck_.config.time_spec();
    if (steps > 0) eo.time.steps = steps;
    if (td >= 0) eo.time.td = td;
    eo.seed = seed;
    eo.limit = limit;
    eo.uncertainty_delta = ck_.config.uncertainty_delta;
    const Dataset val = ck_.config.make_dataset(true);
    EvalResult r;
    {
      py::gil_scoped_release release;
      r = ddp::evaluate(ck_.state.model, val, ck_.config.schedule_params(), eo);
    }
    return json_to_dict(r.to_json());
  }

  uint64_t encode_calls() const { return ck_.state.model.encode_calls(); }
  uint64_t decode_calls() const { return ck_.state.model.decode_calls(); }
  py::dict config() const { return json_to_dict(ck_.config.to_json()); }
  int64_t step() const { return ck_.state.step; }

 private:
  Checkpoint ck_;
};

}  // namespace

PYBIND11_MODULE(_ddp, m) {
  m.doc() = "Conditional diffusion for dense prediction";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("log_snr", [](double t, const std::string& s) { return log_snr(schedule_named(s), t); }, py::arg("t"),
        py::arg("schedule") = "cosine");
  m.def("alpha_bar", [](double t, const std::string& s) { return alpha_bar_at(schedule_named(s), t); }, py::arg("t"),
        py::arg("schedule") = "cosine");
  m.def("time_pairs",
        [](int steps, int td) { return time_pairs(TimeSpec{steps, td}); }, py::arg("steps"), py::arg("td") = 1);
  m.def("corrupt",
        [](const F64Array& encoded, double t, const F64Array& eps, const std::string& s) {
          return array_from(corrupt(feature_from(encoded), t, feature_from(eps).data, schedule_named(s)).values);
        },
        py::arg("encoded"), py::arg("t"), py::arg("eps"), py::arg("schedule") = "cosine");
  m.def("ddim_step",
        [](const F64Array& z, const F64Array& pred, double t_now, double t_next, const std::string& s) {
          return array_from(ddim_step({feature_from(z), t_now}, feature_from(pred), t_now, t_next, schedule_named(s)).values);
        },
        py::arg("z"), py::arg("pred_encoded"), py::arg("t_now"), py::arg("t_next"), py::arg("schedule") = "cosine");

  py::class_<Codec>(m, "Codec")
      .def(py::init([](const std::string& strategy, int num_classes, int embed_dim, std::optional<double> scale,
                       double max_value, uint64_t seed) {
             return make_codec(codec_spec(strategy, num_classes, embed_dim, scale, max_value), seed);
           }),
           py::arg("strategy") = "embedding", py::arg("num_classes") = 4, py::arg("embed_dim") = 16,
           py::arg("scale") = py::none(), py::arg("max_value") = 10.0, py::arg("seed") = 0)
      .def_property_readonly("channels", [](const Codec& c) { return c.spec().channels(); })
      .def_property_readonly("scale", [](const Codec& c) { return c.spec().scale; })
      .def("encode_labels", [](const Codec& c, const I32Array& l) { return array_from(c.encode(labels_from(l))); })
      .def("encode_depth", [](const Codec& c, const F64Array& d) { return array_from(c.encode(depth_from(d))); })
      .def("decode", [](const Codec& c, const F64Array& p) { return decoded_to_py(c.decode(feature_from(p))); })
      .def("roundtrip_label", &Codec::roundtrip_label);

  m.def("gen_segmentation",
        [](uint64_t seed, int count, int size, int num_classes) {
          SyntheticSegSpec s;
          s.seed = seed;
          s.count = count;
          s.size = size;
          s.num_classes = num_classes;
          return dataset_arrays(gen_segmentation(s));
        },
        py::arg("seed") = 0, py::arg("count") = 8, py::arg("size") = 64, py::arg("num_classes") = 4);
  m.def("gen_depth",
        [](uint64_t seed, int count, int size, double max_depth) {
          SyntheticDepthSpec s;
          s.seed = seed;
          s.count = count;
          s.size = size;
          s.max_depth = max_depth;
          return dataset_arrays(gen_depth(s));
        },
        py::arg("seed") = 0, py::arg("count") = 8, py::arg("size") = 64, py::arg("max_depth") = 10.0);

  m.def("miou",
        [](const I32Array& gt, const I32Array& pred, int num_classes) {
          ConfusionMatrix cm(num_classes);
          cm.add(labels_from(gt), labels_from(pred));
          const IouResult r = miou(cm);
          py::dict out;
          out["miou"] = r.mean_iou;
          out["macc"] = r.mean_accuracy;
          out["pixel_accuracy"] = r.pixel_accuracy;
          out["per_class"] = r.per_class;
          return out;
        },
        py::arg("gt"), py::arg("pred"), py::arg("num_classes"));
  m.def("depth_metrics",
        [](const F64Array& pred, const F64Array& gt) {
          const DepthMetrics d = depth_metrics(depth_from(pred), depth_from(gt));
          py::dict out;
          out["delta1"] = d.delta1;
          out["delta2"] = d.delta2;
          out["delta3"] = d.delta3;
          out["rel"] = d.rel;
          out["sq_rel"] = d.sq_rel;
          out["rmse"] = d.rmse;
          out["rmse_log"] = d.rmse_log;
          out["log10"] = d.log10;
          return out;
        },
        py::arg("pred"), py::arg("gt"));

  m.def("default_config", [] { return json_to_dict(ExperimentConfig{}.to_json()); });
  m.def("train",
        [](const py::object& overrides, const std::string& config_path) {
          ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
          c.apply_overrides(overrides_from(overrides));
          FitResult r;
          {
            py::gil_scoped_release release;
            r = fit(c);
          }
          py::dict out;
          out["steps"] = r.state->step;
          out["losses"] = r.losses;
          out["final_checkpoint"] = r.final_checkpoint.string();
          out["best_checkpoint"] = r.best_checkpoint.string();
          return out;
        },
        py::arg("overrides") = py::none(), py::arg("config_path") = "");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("predict", &Predictor::predict, py::arg("image"), py::arg("steps") = 0, py::arg("td") = -1,
           py::arg("seed") = 0)
      .def("evaluate", &Predictor::evaluate, py::arg("steps") = 0, py::arg("td") = -1, py::arg("seed") = 0,
           py::arg("limit") = -1)
      .def_property_readonly("encode_calls", &Predictor::encode_calls)
      .def_property_readonly("decode_calls", &Predictor::decode_calls)
      .def_property_readonly("config", &Predictor::config)
      .def_property_readonly("step", &Predictor::step);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
