#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crt/artifacts.hpp"
#include "crt/config.hpp"
#include "crt/metrics.hpp"
#include "crt/trainer.hpp"

namespace py = pybind11;
using namespace crt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, std::size_t ndim, const char* what) {
  if (static_cast<std::size_t>(a.ndim()) != ndim) {
    throw ShapeError(std::string(what) + " must have " + std::to_string(ndim) + " dimensions");
  }
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<std::size_t>(a.shape(i)));
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

FeatureMap to_feature_map(const Array& a) {
  const Tensor t = to_tensor(a, 3, "features");
  const std::size_t h = t.dim(0), w = t.dim(1), l = t.dim(2);
  return FeatureMap(h, w, Tensor({h * w, l}, t.values()));
}

py::dict density_dict(const DensityReport& r) {
  py::dict d;
  d["d_intra"] = r.d_intra;
  d["d_inter"] = r.d_inter;
  d["density"] = r.density;
  return d;
}

py::dict spectral_dict(const SpectralReport& r) {
  py::dict d;
  d["spectrum"] = r.spectrum;
  d["rho"] = r.rho;
  return d;
}

py::dict dataset_dict(const Dataset& ds) {
  const std::size_t n = ds.size(), h = ds.height, w = ds.width, l = ds.dim;
  Array features({n, h, w, l});
  py::array_t<std::uint8_t> parts({n, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = ds.samples[i].feature_map.features.values();
    std::copy(v.begin(), v.end(), features.mutable_data() + i * h * w * l);
    const auto& m = ds.samples[i].part_cells;
    std::copy(m.begin(), m.end(), parts.mutable_data() + i * h * w);
  }
  py::dict d;
  d["features"] = features;
  d["labels"] = ds.labels();
  d["part_cells"] = parts;
  return d;
}

struct TrainedModel {
  ModelState model;
};

std::pair<Dataset, Dataset> splits(const RunConfig& cfg) {
  return split_classes(generate_dataset(cfg.data), cfg.train_fraction);
}

RunConfig finalized(RunConfig cfg) {
  cfg.finalize();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Coded residual transform metric-learning engine";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DegenerateError>(m, "DegenerateError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def(
      "correlation_map",
      [](const Array& features, const Array& prototypes) {
        return to_array(correlation_map(to_feature_map(features), PrototypeSet(to_tensor(prototypes, 2, "prototypes"))));
      },
      py::arg("features"), py::arg("prototypes"), "[K, H, W] correlations of an [H, W, L] map with [K, L] prototypes.");
  m.def(
      "encode_residuals",
      [](const Array& features, const Array& prototypes) {
        return to_array(
            encode_residuals(to_feature_map(features), PrototypeSet(to_tensor(prototypes, 2, "prototypes"))).codes);
      },
      py::arg("features"), py::arg("prototypes"), "[K, L] correlation-weighted residual codes.");

  m.def(
      "diversity_loss",
      [](const Array& prototypes) { return diversity_loss(PrototypeSet(to_tensor(prototypes, 2, "prototypes"))).item(); },
      py::arg("prototypes"));
  m.def(
      "similarity_matrix",
      [](const Array& e) { return to_array(similarity_matrix(to_tensor(e, 2, "embeddings")).entries); },
      py::arg("embeddings"));
  m.def(
      "ms_loss",
      [](const Array& e, const std::vector<int>& labels, double alpha, double beta, double margin, double eps) {
        LossWeights w;
        w.alpha = alpha;
        w.beta = beta;
        w.margin = margin;
        w.mining_epsilon = eps;
        return ms_loss(similarity_matrix(to_tensor(e, 2, "embeddings")), labels, w).item();
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("alpha") = 2.0, py::arg("beta") = 50.0,
      py::arg("margin") = 1.0, py::arg("mining_epsilon") = 0.1);
  m.def(
      "consistency_loss",
      [](const Array& a, const Array& b) {
        return consistency_loss(similarity_matrix(to_tensor(a, 2, "embeddings")),
                                similarity_matrix(to_tensor(b, 2, "embeddings")))
            .item();
      },
      py::arg("embeddings1"), py::arg("embeddings2"));

  m.def(
      "recall_at_k",
      [](const Array& e, const std::vector<int>& labels, const std::vector<std::size_t>& ks) {
        return recall_at_k(to_tensor(e, 2, "embeddings"), labels, ks).recalls;
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("ks") = std::vector<std::size_t>{1, 2, 4, 8});
  m.def(
      "embedding_space_density",
      [](const Array& e, const std::vector<int>& labels) {
        return density_dict(embedding_space_density(to_tensor(e, 2, "embeddings"), labels));
      },
      py::arg("embeddings"), py::arg("labels"));
  m.def(
      "spectral_decay",
      [](const Array& e, bool center) { return spectral_dict(spectral_decay(to_tensor(e, 2, "embeddings"), center)); },
      py::arg("embeddings"), py::arg("center") = true);

  py::class_<RunConfig>(m, "Config", "Run configuration; keys as in the key=value config files.")
      .def(py::init<>())
      .def_static("from_text", [](const std::string& text) { return parse_config(text); }, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def_static("keys", &RunConfig::keys)
      .def(
          "set",
          [](RunConfig& c, const std::string& key, const py::object& value) {
            std::string text = py::str(value);
            if (py::isinstance<py::bool_>(value)) text = value.cast<bool>() ? "true" : "false";
            c.set(key, text);
            return &c;
          },
          py::arg("key"), py::arg("value"), py::return_value_policy::reference_internal)
      .def("to_text", &RunConfig::to_text)
      .def_readwrite("seed", &RunConfig::seed)
      .def("__repr__", [](const RunConfig& c) { return "<crt.Config seed=" + std::to_string(c.seed) + ">"; });

  m.def(
      "generate_dataset",
      [](const RunConfig& cfg) {
        const RunConfig f = finalized(cfg);
        return dataset_dict(generate_dataset(f.data));
      },
      py::arg("config"), "Synthetic dataset as numpy arrays: features [N,H,W,L], labels, part_cells [N,H,W].");

  py::class_<TrainedModel>(m, "Model")
      .def_property_readonly("parameter_count", [](const TrainedModel& t) { return t.model.parameter_count(); })
      .def_property_readonly("branch_count", [](const TrainedModel& t) { return t.model.branches.size(); })
      .def(
          "prototypes",
          [](const TrainedModel& t, std::size_t branch) {
            if (branch < 1 || branch > t.model.branches.size()) throw ConfigError("branch out of range");
            return to_array(t.model.branches[branch - 1].prototypes.prototypes);
          },
          py::arg("branch") = 1)
      .def(
          "embed",
          [](const TrainedModel& t, const Array& features) {
            // Accepts [N, H, W, L] feature maps; returns one [N, D] array per branch.
            const Tensor x = to_tensor(features, 4, "features");
            const Tensor flat({x.dim(0), x.dim(1) * x.dim(2), x.dim(3)}, x.values());
            py::list out;
            for (const Tensor& e : t.model.forward_batch(flat)) out.append(to_array(e));
            return out;
          },
          py::arg("features"))
      .def(
          "save",
          [](const TrainedModel& t, const std::string& path) {
            Checkpoint c;
            c.model = t.model;
            save_checkpoint(c, path);
          },
          py::arg("path"));

  m.def(
      "load_model", [](const std::string& path) { return TrainedModel{load_checkpoint(path).model}; }, py::arg("path"));

  m.def(
      "train",
      [](const RunConfig& cfg) {
        const RunConfig f = finalized(cfg);
        const auto [train_set, test_set] = splits(f);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(f.make_model(), train_set, f.train);
        }
        py::list history;
        for (const StepRecord& s : r.history) {
          py::dict d;
          d["step"] = s.step;
          d["loss"] = s.total;
          d["L_div"] = s.diversity;
          d["L_ms1"] = s.ms1;
          d["L_ms2"] = s.ms2;
          d["L_con"] = s.consistency;
          history.append(d);
        }
        return py::make_tuple(TrainedModel{std::move(r.model)}, history);
      },
      py::arg("config"), "Trains on the training classes of the configured dataset. Returns (model, history).");

  m.def(
      "evaluate",
      [](const TrainedModel& t, const RunConfig& cfg) {
        const RunConfig f = finalized(cfg);
        const auto [train_set, test_set] = splits(f);
        const auto evals = evaluate(t.model, test_set, f.ks, train_set.classes());
        py::list out;
        for (const BranchEvaluation& e : evals) {
          py::dict d;
          d["ks"] = e.retrieval.ks;
          d["recall"] = e.retrieval.recalls;
          d["density"] = density_dict(e.density);
          d["spectral"] = spectral_dict(e.spectral);
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("config"), "Per-branch reports on the held-out classes.");

  m.def(
      "grad_check",
      [](const RunConfig& cfg, std::size_t coords) {
        const RunConfig f = finalized(cfg);
        const auto [train_set, test_set] = splits(f);
        Rng rng(f.seed + kBatchStream);
        const Batch batch = sample_batch(train_set, f.train.batch_classes, f.train.batch_per_class, rng);
        GradCheckOptions o;
        o.max_coords_per_group = coords;
        o.seed = f.seed;
        const GradCheckReport r = grad_check(f.make_model(), batch, f.train.loss, o);
        py::dict groups;
        for (const GroupError& g : r.groups) groups[py::str(g.group)] = g.max_relative_error;
        py::dict d;
        d["passed"] = r.passed;
        d["max_relative_error"] = r.max_relative_error;
        d["groups"] = groups;
        return d;
      },
      py::arg("config"), py::arg("coords_per_group") = 16,
      "Finite-difference check of an untrained model on one training batch.");
}
