#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "attnflow/attention.hpp"
#include "attnflow/config.hpp"
#include "attnflow/error.hpp"
#include "attnflow/eval.hpp"
#include "attnflow/explain.hpp"
#include "attnflow/flow.hpp"
#include "attnflow/metrics.hpp"
#include "attnflow/synth.hpp"
#include "attnflow/trainer.hpp"
#include "attnflow/version.hpp"

namespace py = pybind11;
using namespace attnflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureMap to_feature_map(const Array& a) {
  if (a.ndim() != 3) throw py::value_error("expected a C x H x W array");
  FeatureMap m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
               static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array to_array(const FeatureMap& m) {
  Array a({m.channels(), m.height(), m.width()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

py::dict metrics_row(const EpochMetrics& m) {
  py::dict d;
  d["category"] = m.category;
  d["run_id"] = m.run_id;
  d["epoch"] = m.epoch;
  d["split"] = m.split;
  d["auroc"] = m.auroc ? py::cast(*m.auroc) : py::none();
  d["mean_nll_flawless"] = m.mean_nll_flawless;
  d["mean_nll_anomalous"] = m.mean_nll_anomalous ? py::cast(*m.mean_nll_anomalous) : py::none();
  d["wall_seconds"] = m.wall_seconds;
  return d;
}

RunConfig resolve(const std::optional<std::string>& path, const std::vector<std::string>& set) {
  RunConfig cfg = path ? load_run_config(*path) : default_run_config();
  for (const auto& s : set) apply_override(cfg, s);
  cfg.train.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

py::dict train_entry(const std::optional<std::string>& config,
                     const std::vector<std::string>& set,
                     const std::optional<std::string>& checkpoint) {
  const RunConfig cfg = resolve(config, set);
  TrainResult result;
  {
    py::gil_scoped_release release;
    if (cfg.train.mode == TrainMode::images) {
      const Archive weights = load_pretrained_archive(cfg.train.backbone.pretrained_path);
      result = train(load_dataset(cfg.data_root, cfg.train.category), cfg.train, weights);
    } else {
      result = train_embeddings(load_embeddings(cfg.data_embeddings), cfg.train);
    }
    if (checkpoint) save_checkpoint(result.best, *checkpoint);
  }
  py::list rows;
  for (const auto& m : result.metrics) rows.append(metrics_row(m));
  py::dict out;
  out["metrics"] = rows;
  out["best_run"] = result.best.run_id;
  out["best_epoch"] = result.best.epoch;
  out["best_auroc"] = result.best.auroc;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attention-augmented normalizing-flow anomaly detection";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<InputError>(m, "InputError", PyExc_OSError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("version", &version);

  m.def(
      "auroc",
      [](const std::vector<double>& flawless, const std::vector<double>& anomalous) {
        return auroc(flawless, anomalous);
      },
      py::arg("flawless"), py::arg("anomalous"));

  m.def(
      "attention",
      [](const std::string& kind, const Array& x, int reduction, int spatial_kernel,
         std::uint64_t seed, double init_std) {
        AttentionConfig cfg;
        cfg.kind = parse_attention_kind(kind);
        cfg.reduction = reduction;
        cfg.spatial_kernel = spatial_kernel;
        const FeatureMap fx = to_feature_map(x);
        AttentionBlock block(cfg, fx.channels(), "attention");
        Rng rng = make_rng(seed, "python/attention");
        block.initialize(rng, init_std);
        return to_array(block.forward(fx));
      },
      py::arg("kind"), py::arg("x"), py::arg("reduction") = 16, py::arg("spatial_kernel") = 7,
      py::arg("seed") = 0, py::arg("init_std") = 0.01);

  py::class_<FlowModel>(m, "Flow")
      .def(py::init([](std::size_t dim, std::size_t blocks, double clamp, std::uint64_t seed,
                       bool randomize) {
             FlowConfig cfg;
             cfg.dim = dim;
             cfg.blocks = blocks;
             cfg.clamp = clamp;
             Rng rng = make_rng(seed, "python/flow");
             FlowModel model(cfg, rng);
             if (randomize) model.randomize(rng);
             return model;
           }),
           py::arg("dim"), py::arg("blocks") = 8, py::arg("clamp") = 3.0, py::arg("seed") = 0,
           py::arg("randomize") = false)
      .def_property_readonly("dim", &FlowModel::dim)
      .def(
          "forward",
          [](const FlowModel& f, const Matrix& y) {
            FlowResult r = f.forward(y);
            return py::make_tuple(r.z, r.log_det);
          },
          py::arg("y"), "Columns are samples; returns (z, log_det).")
      .def("inverse", &FlowModel::inverse, py::arg("z"))
      .def(
          "nll", [](const FlowModel& f, const Matrix& y) { return nll_batch(y, f); },
          py::arg("y"));

  m.def(
      "load_config",
      [](const std::optional<std::string>& path, const std::vector<std::string>& set) {
        const RunConfig cfg = resolve(path, set);
        return py::module_::import("json").attr("loads")(to_flat_json(cfg).dump());
      },
      py::arg("path") = py::none(), py::arg("set") = std::vector<std::string>{});

  m.def("train", &train_entry, py::arg("config") = py::none(),
        py::arg("set") = std::vector<std::string>{}, py::arg("checkpoint") = py::none(),
        "Trains per the config; returns per-epoch metrics and the best run/epoch.");

  m.def(
      "synth",
      [](const std::filesystem::path& out, std::uint64_t seed, std::size_t image_size,
         std::size_t train_good, std::size_t test_good, std::size_t test_defect) {
        SynthOptions o;
        o.image_size = image_size;
        o.train_good = train_good;
        o.test_good = test_good;
        o.test_defect = test_defect;
        synth_all(out, o, seed);
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("image_size") = 64,
      py::arg("train_good") = 200, py::arg("test_good") = 50, py::arg("test_defect") = 50);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static(
          "load",
          [](const std::filesystem::path& path, bool allow_weights_mismatch) {
            LoadOptions o;
            o.allow_weights_mismatch = allow_weights_mismatch;
            return load_checkpoint(path, o);
          },
          py::arg("path"), py::arg("allow_weights_mismatch") = false)
      .def_readonly("run_id", &Checkpoint::run_id)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("auroc", &Checkpoint::auroc)
      .def_readonly("probe_id", &Checkpoint::probe_id)
      .def_readonly("probe_score", &Checkpoint::probe_score)
      .def_property_readonly("seed", [](const Checkpoint& c) { return c.config.seed; })
      .def(
          "score_image",
          [](const Checkpoint& c, const std::filesystem::path& image, std::size_t n,
             std::optional<std::uint64_t> seed) {
            const auto s = scoring_seed(seed.value_or(c.config.seed));
            return anomaly_score(read_image(image), c.model, n, s, image.string()).value;
          },
          py::arg("image"), py::arg("n") = 16, py::arg("seed") = py::none())
      .def(
          "score_embeddings",
          [](const Checkpoint& c, const Matrix& y) { return embedding_scores(y, c.model); },
          py::arg("y"))
      .def(
          "gradcam",
          [](Checkpoint& c, const std::filesystem::path& image, std::size_t scale_index) {
            c.model.set_grad_enabled(true);
            const auto handles = gradcam_target_layer(c.config.backbone);
            if (scale_index >= handles.size()) throw py::index_error("scale_index");
            const ActivationMap map = gradcam(read_image(image), c.model, handles[scale_index]);
            c.model.set_grad_enabled(false);
            py::array_t<double> out({map.height, map.width});
            std::copy(map.values.begin(), map.values.end(), out.mutable_data());
            return out;
          },
          py::arg("image"), py::arg("scale_index") = 0);
}
