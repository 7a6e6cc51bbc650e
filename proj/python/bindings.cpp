#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "parameta/cli.hpp"
#include "parameta/errors.hpp"
#include "parameta/gradcheck.hpp"
#include "parameta/inference.hpp"
#include "parameta/metrics.hpp"
#include "parameta/synthetic.hpp"
#include "parameta/trainer.hpp"

namespace py = pybind11;
using namespace parameta;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) v(i, j) = m(i, j);
  return out;
}

py::dict prediction(const TaskSchema& s, std::size_t t, const TaskPrediction& p) {
  py::dict d;
  d["class"] = s.task(t).classes[p.cls];
  d["score"] = p.score;
  return d;
}

ConfusionMatrix confusion(const std::vector<std::vector<std::uint64_t>>& counts) {
  return ConfusionMatrix::from_counts(counts);
}

// Trained or loaded model plus its checkpoint JSON.
struct PyModel {
  Model model;
  nlohmann::json checkpoint;

  const TaskSchema& schema() const { return model.schema; }

  std::size_t task(const std::string& name) const { return model.schema.task_index(name); }
};

PyModel load_model(const std::string& path) {
  nlohmann::json j = read_json(path);
  return {model_from_checkpoint(j), std::move(j)};
}

}  // namespace

PYBIND11_MODULE(_parameta, m) {
  m.doc() = "Multi-task speaking-style embeddings with prototype classification";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<TaskSchema>(m, "TaskSchema")
      .def_static("from_json", [](const std::string& text) { return TaskSchema::from_json(nlohmann::json::parse(text)); })
      .def_static("load", &TaskSchema::load)
      .def("to_json", [](const TaskSchema& s) { return s.to_json().dump(); })
      .def_property_readonly("task_count", &TaskSchema::task_count)
      .def("task_names",
           [](const TaskSchema& s) {
             std::vector<std::string> out;
             for (const auto& t : s.tasks()) out.push_back(t.name);
             return out;
           })
      .def("classes", [](const TaskSchema& s, const std::string& task) { return s.task(s.task_index(task)).classes; })
      .def("__eq__", [](const TaskSchema& a, const TaskSchema& b) { return a == b; });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("schema", &Dataset::schema)
      .def("__len__", [](const Dataset& d) { return d.samples.size(); })
      .def_property_readonly("bins", &Dataset::bins)
      .def("ids",
           [](const Dataset& d) {
             std::vector<std::string> out;
             for (const auto& x : d.samples) out.push_back(x.id);
             return out;
           })
      .def("subjects",
           [](const Dataset& d) {
             std::vector<std::string> out;
             for (const auto& x : d.samples) out.push_back(x.subject);
             return out;
           })
      .def("frames", [](const Dataset& d, std::size_t i) { return to_numpy(d.samples.at(i).frames); })
      .def("labels",
           [](const Dataset& d, std::size_t i) {
             py::dict out;
             const auto& x = d.samples.at(i);
             for (std::size_t t = 0; t < d.schema.task_count(); ++t)
               out[py::str(d.schema.task(t).name)] =
                   x.labels[t] ? py::object(py::str(d.schema.task(t).classes[*x.labels[t]])) : py::object(py::none());
             return out;
           })
      .def("caption", [](const Dataset& d, std::size_t i) { return d.samples.at(i).caption; });

  m.def(
      "generate_synthetic",
      [](const TaskSchema& s, std::size_t n, std::uint64_t seed, double noise, std::size_t bins, std::size_t frames,
         std::size_t subjects) { return generate_synthetic(s, SyntheticOptions{n, bins, frames, noise, subjects, seed}); },
      py::arg("schema"), py::arg("n"), py::arg("seed") = 0, py::arg("noise") = 0.25, py::arg("bins") = 32,
      py::arg("frames") = 8, py::arg("subjects") = 40);
  m.def("load_jsonl", &load_jsonl, py::arg("path"), py::arg("schema"));
  m.def("write_jsonl", &write_jsonl, py::arg("dataset"), py::arg("path"));
  m.def("split_subject_independent", &split_subject_independent, py::arg("dataset"), py::arg("test_fraction"),
        py::arg("seed"));

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("schema", &PyModel::schema)
      .def("save", [](const PyModel& p, const std::string& path) { write_json(p.checkpoint, path); })
      .def("config", [](const PyModel& p) { return p.model.config.to_json().dump(); })
      .def("embed",
           [](const PyModel& p, const Dataset& d) {
             const Embeddings e = embed(p.model, d.samples);
             py::dict out;
             out["meta"] = to_numpy(e.meta);
             for (std::size_t t = 0; t < e.tasks.size(); ++t) out[py::str(p.schema().task(t).name)] = to_numpy(e.tasks[t]);
             return out;
           })
      .def("prototypes",
           [](const PyModel& p, const std::string& task) { return to_numpy(p.model.bank.prototypes(p.task(task))); })
      .def("classify",
           [](const PyModel& p, const Dataset& d) {
             py::list out;
             for (const auto& row : classify(p.model, d.samples)) {
               py::dict r;
               for (std::size_t t = 0; t < row.size(); ++t) r[py::str(p.schema().task(t).name)] = prediction(p.schema(), t, row[t]);
               out.append(r);
             }
             return out;
           })
      .def("classify_caption",
           [](const PyModel& p, const std::string& caption) {
             py::dict out;
             const auto r = classify_caption(p.model, caption);
             for (std::size_t t = 0; t < r.size(); ++t)
               out[py::str(p.schema().task(t).name)] = r[t] ? py::object(prediction(p.schema(), t, *r[t])) : py::object(py::none());
             return out;
           })
      .def(
          "manipulate",
          [](const PyModel& p, const Dataset& d, std::size_t index, const std::string& task, const std::string& target,
             double alpha) {
            const std::size_t t = p.task(task);
            const Manipulation r =
                manipulate(p.model, d.samples.at(index), t, p.schema().class_index(t, target), alpha);
            py::dict out;
            out["style"] = r.style.concat();
            out["source_class"] = p.schema().task(t).classes[r.report.source_class];
            out["target_class"] = target;
            out["orig_sim"] = r.report.orig_sim;
            out["manip_sim"] = r.report.manip_sim;
            out["reclass_hit"] = r.report.reclass_hit;
            out["other_tasks_stable"] = r.report.other_tasks_stable;
            return out;
          },
          py::arg("dataset"), py::arg("index"), py::arg("task"), py::arg("target_class"), py::arg("alpha") = 1.0)
      .def("evaluate", [](const PyModel& p, const Dataset& d) {
        const std::vector<std::vector<TaskMetrics>> runs{evaluate(p.model, d.samples)};
        return metrics_report(p.schema(), runs).dump();
      });

  m.def("load_model", &load_model, py::arg("path"));
  m.def(
      "train",
      [](const Dataset& d, const std::string& config_json, std::optional<std::size_t> steps,
         std::function<void(std::size_t, double)> on_step) {
        TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(config_json));
        if (steps) cfg.max_steps = *steps;
        cfg.validate();
        Trainer trainer(d, cfg);
        RunOptions opts;
        if (on_step) opts.on_step = [&](std::size_t step, const LossBreakdown& b) { on_step(step, b.total); };
        nlohmann::json ckpt;
        if (on_step) {
          ckpt = run_training(trainer, cfg.max_steps, opts);
        } else {
          py::gil_scoped_release release;
          ckpt = run_training(trainer, cfg.max_steps, opts);
        }
        return PyModel{trainer.model(), std::move(ckpt)};
      },
      py::arg("dataset"), py::arg("config") = "{}", py::arg("steps") = py::none(), py::arg("on_step") = nullptr);

  m.def("balanced_accuracy", [](const std::vector<std::vector<std::uint64_t>>& c) { return balanced_accuracy(confusion(c)); });
  m.def("macro_f1", [](const std::vector<std::vector<std::uint64_t>>& c) { return macro_f1(confusion(c)); });
  m.def("weighted_f1", [](const std::vector<std::vector<std::uint64_t>>& c) { return weighted_f1(confusion(c)); });

  m.def(
      "gradient_check",
      [](std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& r : gradient_check(seed)) out.emplace_back(r.component, r.max_relative_error);
        return out;
      },
      py::arg("seed") = 0);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = dispatch(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
