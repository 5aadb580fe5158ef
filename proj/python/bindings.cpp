#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "necode/bounds.hpp"
#include "necode/config.hpp"
#include "necode/error.hpp"
#include "necode/firstlayer.hpp"
#include "necode/harness.hpp"
#include "necode/linalg.hpp"
#include "necode/nn.hpp"
#include "necode/pipeline.hpp"
#include "necode/recoder.hpp"

namespace py = pybind11;
using namespace necode;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const Array& a) {
  if (a.ndim() == 1) {
    return DenseMatrix(1, static_cast<std::size_t>(a.shape(0)), std::vector<double>(a.data(), a.data() + a.size()));
  }
  if (a.ndim() != 2) throw InvalidArgument("expected a 1-D or 2-D array");
  return DenseMatrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                     std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const DenseMatrix& m) {
  Array out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array to_array(const Vector& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<int> to_labels(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  return std::vector<int>(a.data(), a.data() + a.size());
}

py::dict batch_dict(const Batch& b) {
  py::dict d;
  d["inputs"] = to_array(b.inputs);
  d["labels"] = py::array_t<int>(static_cast<py::ssize_t>(b.labels.size()), b.labels.data());
  return d;
}

}  // namespace

PYBIND11_MODULE(_necode, m) {
  m.doc() = "Bindings for the necode library";
  m.attr("__version__") = std::string(tool_version());
  m.attr("EVAL_CSV_HEADER") = std::string(kEvalCsvHeader);

  py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<SubspaceError>(m, "SubspaceError");
  py::register_exception<CalibrationError>(m, "CalibrationError");
  py::register_exception<NumericalError>(m, "NumericalError");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("from_text", &parse_config, py::arg("text"))
      .def_static("from_file", &load_config, py::arg("path"))
      .def("to_ini", [](const RunConfig& c) { return to_ini(c); })
      .def_readwrite("seed", &RunConfig::seed)
      .def_property(
          "out", [](const RunConfig& c) { return c.out.string(); },
          [](RunConfig& c, const std::string& p) { c.out = p; })
      .def_property(
          "tau", [](const RunConfig& c) { return c.recoder.tau; }, [](RunConfig& c, double t) { c.recoder.tau = t; })
      .def_property(
          "target_psnr_db", [](const RunConfig& c) { return c.recoder.target_psnr_db; },
          [](RunConfig& c, std::optional<double> v) { c.recoder.target_psnr_db = v; })
      .def("model_names",
           [](const RunConfig& c) {
             std::vector<std::string> names;
             for (const auto& e : c.model_entries()) names.push_back(e.name);
             return names;
           })
      .def("validate", &RunConfig::validate);

  py::class_<TrainedModel>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const TrainedModel& t, const std::string& p) { save_model(t, p); })
      .def_property_readonly("family", [](const TrainedModel& t) { return std::string(to_string(t.spec.family)); })
      .def_property_readonly("spec_json", [](const TrainedModel& t) { return t.spec.to_json(); })
      .def_property_readonly("seed", [](const TrainedModel& t) { return t.seed; })
      .def("checksum", &TrainedModel::checksum)
      .def("predict", [](const TrainedModel& t, const Array& x) { return predict(t, to_matrix(x)).classes; })
      .def("logits", [](const TrainedModel& t, const Array& x) { return to_array(predict(t, to_matrix(x)).logits); })
      .def("accuracy", [](const TrainedModel& t, const Array& x,
                          const py::array_t<int, py::array::c_style | py::array::forcecast>& y) {
        const auto labels = to_labels(y);
        return accuracy(t, to_matrix(x), labels);
      });

  m.def(
      "svd",
      [](const Array& w) {
        const SpectralFactors f = svd(to_matrix(w));
        return py::make_tuple(to_array(f.u), to_array(f.s), to_array(f.v));
      },
      py::arg("w"), "Singular values ascending; returns (u, s, v) with w = u diag(s) v^T.");

  m.def("psnr_db", [](const Array& a, const Array& b) {
    const DenseMatrix x = to_matrix(a), y = to_matrix(b);
    return psnr_db(x.data(), y.data());
  });

  m.def(
      "dataset",
      [](const RunConfig& c) {
        const LabeledDataset d = build_dataset(c);
        py::dict out;
        out["probe"] = batch_dict(d.subset(Split::probe));
        out["train"] = batch_dict(d.subset(Split::train));
        out["eval"] = batch_dict(d.subset(Split::eval));
        out["shape"] = py::make_tuple(d.shape.channels, d.shape.height, d.shape.width);
        out["classes"] = d.classes;
        return out;
      },
      py::arg("config"), "Probe, train and eval splits of the configured dataset.");

  m.def(
      "train_grid",
      [](const RunConfig& c) {
        const LabeledDataset d = build_dataset(c);
        py::dict out;
        for (auto& nm : ensure_grid(c, d)) out[py::str(nm.name)] = std::move(nm.model);
        return out;
      },
      py::arg("config"), "Trains the grid into <out>/train, or loads it when present. Returns name -> Model.");

  m.def(
      "insensitive_subspace",
      [](const TrainedModel& model, double tau) {
        const InsensitiveSubspace s = identify_subspace(extract(model), tau);
        return py::make_tuple(to_array(s.basis), to_array(s.singulars));
      },
      py::arg("model"), py::arg("tau") = 1e-4, "Basis (n x k) and its singular values.");

  m.def(
      "recode",
      [](const TrainedModel& model, const Array& inputs,
         const py::array_t<int, py::array::c_style | py::array::forcecast>& labels, double tau,
         std::optional<double> psnr, double lambda, std::uint64_t seed) {
        RecodingConfig cfg;
        cfg.tau = tau;
        cfg.target_psnr_db = psnr;
        cfg.lambda = lambda;
        cfg.seed = seed;
        Batch b;
        b.inputs = to_matrix(inputs);
        b.labels = to_labels(labels);
        const NEBatch ne = recode_batch(b, model, cfg);
        py::dict out;
        out["recoded"] = to_array(ne.recoded);
        out["psnr_db"] = ne.mean_psnr_db();
        out["lambda"] = ne.provenance.config.lambda;
        out["rank"] = ne.provenance.rank;
        return out;
      },
      py::arg("model"), py::arg("inputs"), py::arg("labels"), py::arg("tau") = 1e-4, py::arg("psnr") = 20.0,
      py::arg("lambda_") = 1.0, py::arg("seed") = 0);

  m.def(
      "verify_retention",
      [](const TrainedModel& model, double tau, double sigma, double t, std::size_t trials, std::uint64_t seed) {
        return to_json(verify_retention(extract(model), tau, sigma, t, trials, seed));
      },
      py::arg("model"), py::arg("tau"), py::arg("sigma"), py::arg("t"), py::arg("trials") = 10000,
      py::arg("seed") = 0, "JSON report of one retention grid point.");

  m.def(
      "run_verify",
      [](const RunConfig& c) {
        const LabeledDataset d = build_dataset(c);
        const auto models = ensure_grid(c, d);
        const VerifyResult v = run_verify(c, d, models);
        write_verify(c, d, models, v);
        return verify_json(v);
      },
      py::arg("config"), "Runs the bound checks and returns bounds.json text.");

  m.def(
      "run_eval",
      [](const RunConfig& c) {
        const LabeledDataset d = build_dataset(c);
        const auto models = ensure_grid(c, d);
        const EvalReport r = run_eval(c, d, models);
        write_eval(c, d, models, r);
        return to_csv(r.rows);
      },
      py::arg("config"), "Runs the evaluation grid and returns the CSV text.");

  m.def(
      "parse_eval_csv",
      [](const std::string& text) {
        py::list rows;
        for (const EvalRow& r : parse_csv(text)) {
          py::dict d;
          d["target_model"] = r.target_model;
          d["eval_model"] = r.eval_model;
          d["psnr_db"] = r.psnr_db;
          d["preprocess"] = r.preprocess;
          d["attack"] = r.attack;
          d["clean_acc"] = r.clean_acc;
          d["recoded_acc"] = r.recoded_acc;
          d["error_rate"] = r.error_rate;
          d["rho_hat"] = r.rho_hat;
          d["gamma_hat"] = r.gamma_hat;
          d["seed"] = r.seed;
          rows.append(d);
        }
        return rows;
      },
      py::arg("text"), "Rows of an evaluation CSV as dicts keyed by column name.");

  m.def("run_report", &run_report, py::arg("config"), "Writes report/report.md and returns its text.");
}
