#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include <json.hpp>

#include "trajformer/checkpoint.hpp"
#include "trajformer/config.hpp"
#include "trajformer/data.hpp"
#include "trajformer/error.hpp"
#include "trajformer/eval.hpp"
#include "trajformer/geo.hpp"
#include "trajformer/training.hpp"

namespace py = pybind11;
using namespace trajformer;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

nlohmann::json to_native(const py::object& obj) {
  if (obj.is_none()) return nlohmann::json::object();
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

template <typename T>
T from_dict(const py::object& obj) {
  T value{};
  if (!obj.is_none()) from_json(to_native(obj), value);
  return value;
}

template <typename T>
py::object to_dict(const T& value) {
  nlohmann::json j;
  to_json(j, value);
  return to_python(j);
}

Array points_array(const Trajectory& t) {
  Array out({t.points.size(), std::size_t{3}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    v(i, 0) = t.points[i].lat;
    v(i, 1) = t.points[i].lon;
    v(i, 2) = static_cast<double>(t.points[i].t);
  }
  return out;
}

std::vector<TrajPoint> points_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeError("points must be an [N, 3] array of (lat, lon, t)");
  auto v = a.unchecked<2>();
  std::vector<TrajPoint> pts(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    const double t = v(i, 2);
    if (t != std::floor(t)) throw DataError("timestamps must be whole seconds");
    pts[i] = {v(i, 0), v(i, 1), static_cast<std::int64_t>(t)};
  }
  return pts;
}

Array tensor_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

class Model {
 public:
  explicit Model(Checkpoint ck)
      : ckpt_(std::move(ck)), predictor_(ckpt_.model, ckpt_.params, ckpt_.norm) {}

  static Model load(const std::filesystem::path& path) { return Model(load_checkpoint(path)); }

  py::object config() const { return to_dict(ckpt_.model); }
  py::object normalization() const { return to_dict(ckpt_.norm); }
  std::uint64_t steps() const { return ckpt_.step; }
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(checkpoint_hash(ckpt_)));
    return buf;
  }

  Array predict_next(const Trajectory& t) const {
    const auto d = predictor_.predict_next(t);
    Array out(3);
    auto v = out.mutable_unchecked<1>();
    v(0) = d[target::kDlat] * ckpt_.norm.scale_lat;
    v(1) = d[target::kDlon] * ckpt_.norm.scale_lon;
    v(2) = d[target::kDt] * ckpt_.norm.dt_scale;
    return out;
  }

  Array rollout(const Trajectory& prefix, std::size_t horizon) const {
    return points_array(Trajectory{prefix.id, trajformer::rollout(predictor_, prefix, horizon)});
  }

  py::object evaluate(const std::vector<Trajectory>& trajs, const std::string& mode,
                      std::size_t horizon, double mask_ratio, std::uint64_t seed,
                      std::size_t batch_size) const {
    EvalOptions opts;
    opts.mode = parse_eval_mode(mode);
    opts.horizon = horizon;
    opts.mask_ratio = mask_ratio;
    opts.seed = seed;
    opts.batch_size = batch_size;
    return to_python(to_json(trajformer::evaluate(predictor_, from_vector(trajs), opts)));
  }

 private:
  Checkpoint ckpt_;
  ModelPredictor predictor_;
};

}  // namespace

PYBIND11_MODULE(_trajformer, m) {
  m.doc() = "Trajectory transformer: data, training, evaluation.";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init([](std::string id, const Array& points) {
             return Trajectory{std::move(id), points_from(points)};
           }),
           py::arg("id"), py::arg("points"))
      .def_readwrite("id", &Trajectory::id)
      .def_property(
          "points", [](const Trajectory& t) { return points_array(t); },
          [](Trajectory& t, const Array& a) { t.points = points_from(a); })
      .def("__len__", [](const Trajectory& t) { return t.points.size(); })
      .def("validate", &validate_trajectory)
      .def(py::self == py::self)
      .def("__repr__", [](const Trajectory& t) {
        return "Trajectory(id='" + t.id + "', n=" + std::to_string(t.points.size()) + ")";
      });

  m.def("haversine", &haversine, py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"),
        "Great-circle distance in meters.");

  m.def(
      "generate_synthetic",
      [](const py::object& config) { return generate_synthetic(from_dict<SyntheticConfig>(config)); },
      py::arg("config") = py::none());

  m.def("read_jsonl", [](const std::filesystem::path& p) { return collect(stream_jsonl(p)); });
  m.def("write_jsonl", [](const std::filesystem::path& p, std::vector<Trajectory> trajs) {
    write_jsonl(p, from_vector(std::move(trajs)));
  });

  m.def("fit_normalization", [](const std::vector<Trajectory>& trajs) {
    return to_dict(compute_center(trajs));
  });

  m.def(
      "featurize",
      [](const Trajectory& t, const py::object& norm) {
        return tensor_array(featurize(t, from_dict<NormalizationParams>(norm)).features);
      },
      py::arg("trajectory"), py::arg("norm"));

  m.def("delta_encode", [](const Trajectory& t) {
    const auto ds = delta_encode(t);
    Array deltas({ds.deltas.size(), std::size_t{3}});
    auto v = deltas.mutable_unchecked<2>();
    for (std::size_t i = 0; i < ds.deltas.size(); ++i) {
      v(i, 0) = ds.deltas[i].dlat;
      v(i, 1) = ds.deltas[i].dlon;
      v(i, 2) = static_cast<double>(ds.deltas[i].dt);
    }
    return py::make_tuple(py::make_tuple(ds.origin.lat, ds.origin.lon, ds.origin.t), deltas);
  });

  m.def(
      "train",
      [](const std::vector<Trajectory>& trajs, const py::object& model, const py::object& train,
         const py::object& norm, const std::optional<std::filesystem::path>& out) {
        const auto mc = from_dict<ModelConfig>(model);
        const auto tc = from_dict<TrainConfig>(train);
        const auto np = norm.is_none() ? compute_center(trajs) : from_dict<NormalizationParams>(norm);
        Trainer trainer(mc, tc, np);
        {
          py::gil_scoped_release release;
          trainer.train([&] { return from_vector(trajs); });
        }
        const Checkpoint ck = trainer.checkpoint();
        if (out) save_checkpoint(ck, *out);
        return Model(ck);
      },
      py::arg("trajectories"), py::arg("model") = py::none(), py::arg("train") = py::none(),
      py::arg("norm") = py::none(), py::arg("out") = py::none(),
      "Trains from scratch and returns the model; writes a checkpoint when `out` is given.");

  m.def(
      "pretext_check",
      [](const std::vector<Trajectory>& trajs, std::size_t steps, double lr, std::size_t latent,
         std::uint64_t seed) {
        const auto norm = compute_center(trajs);
        std::vector<Tensor> seqs;
        for (const auto& t : trajs) seqs.push_back(featurize(t, norm).features);
        PretextOptions opts;
        opts.steps = steps;
        opts.lr = lr;
        opts.d_latent = latent;
        opts.seed = seed;
        const auto r = pretext_autoencoder_check(seqs, opts);
        py::dict d;
        d["rmse_raw"] = r.rmse_raw;
        d["rmse_with_pe"] = r.rmse_with_pe;
        d["n_train"] = r.n_train;
        d["n_test"] = r.n_test;
        return d;
      },
      py::arg("trajectories"), py::arg("steps") = PretextOptions{}.steps,
      py::arg("lr") = PretextOptions{}.lr, py::arg("latent") = PretextOptions{}.d_latent,
      py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("normalization", &Model::normalization)
      .def_property_readonly("steps", &Model::steps)
      .def_property_readonly("hash", &Model::hash)
      .def("predict_next", &Model::predict_next, py::arg("trajectory"),
           "Next (dlat, dlon, dt) in degrees and seconds.")
      .def("rollout", &Model::rollout, py::arg("prefix"), py::arg("horizon"))
      .def("evaluate", &Model::evaluate, py::arg("trajectories"), py::arg("mode") = "next_step",
           py::arg("horizon") = 5, py::arg("mask_ratio") = kDefaultMaskRatio, py::arg("seed") = 0,
           py::arg("batch_size") = 16);
}
