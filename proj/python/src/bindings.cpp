#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nca_arc/arc_data.hpp"
#include "nca_arc/checkpoint.hpp"
#include "nca_arc/evaluator.hpp"
#include "nca_arc/render.hpp"
#include "nca_arc/trainer.hpp"

namespace py = pybind11;
using namespace nca_arc;

namespace {

// Grids cross the boundary as lists of lists of ints.
using Rows = std::vector<std::vector<int>>;

Grid to_grid(const Rows& rows) { return Grid::from_rows(rows); }

py::dict example_dict(const TaskExample& ex) {
  py::dict d;
  d["input"] = ex.input.to_rows();
  d["output"] = ex.output.to_rows();
  return d;
}

Task make_task(const std::string& id, const std::vector<std::pair<Rows, Rows>>& train,
               const std::vector<std::pair<Rows, Rows>>& test) {
  Task t;
  t.id = id;
  for (const auto& [in, out] : train) t.train.push_back({to_grid(in), to_grid(out)});
  for (const auto& [in, out] : test) t.test.push_back({to_grid(in), to_grid(out)});
  return t;
}

py::dict result_dict(const TaskResult& r) {
  py::dict d;
  d["task_id"] = r.task_id;
  d["solved"] = r.solved;
  d["pixel_accuracy"] = r.pixel_accuracy;
  d["final_train_loss"] = r.final_train_loss;
  d["wall_time"] = r.wall_time;
  d["seed"] = r.seed;
  return d;
}

py::dict params_blocks(const ModelParams<float>& p) {
  py::dict d;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const auto shape = block_shape(p.spec, Block(b));
    py::array_t<float> a(std::vector<py::ssize_t>(shape.begin(), shape.end()));
    std::copy(p.blocks[b].begin(), p.blocks[b].end(), a.mutable_data());
    d[py::str(std::string(kBlockNames[b]))] = a;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neural cellular automata for ARC tasks";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<NonFiniteGradient>(m, "NonFiniteGradient", PyExc_ArithmeticError);

  // ---- data ----
  py::class_<Task>(m, "Task")
      .def(py::init(&make_task), py::arg("id"), py::arg("train"), py::arg("test"),
           "Build a task from (input, output) pairs of row lists.")
      .def_readonly("id", &Task::id)
      .def_property_readonly("train",
                             [](const Task& t) {
                               py::list l;
                               for (const auto& ex : t.train) l.append(example_dict(ex));
                               return l;
                             })
      .def_property_readonly("test",
                             [](const Task& t) {
                               py::list l;
                               for (const auto& ex : t.test) l.append(example_dict(ex));
                               return l;
                             })
      .def("__repr__", [](const Task& t) {
        return "<Task " + t.id + " train=" + std::to_string(t.train.size()) +
               " test=" + std::to_string(t.test.size()) + ">";
      });

  m.def("parse_task", &parse_task, py::arg("json_text"), py::arg("id") = "");
  m.def("load_task", &load_task_file, py::arg("path"));
  m.def(
      "classify", [](const Task& t) { return std::string(to_string(classify_feasibility(t).status)); },
      py::arg("task"), "One of 'feasible', 'size_mismatch', 'color_novel'.");
  m.def(
      "filter_directory",
      [](const std::filesystem::path& dir) {
        const auto load = load_task_directory(dir);
        const auto result = filter_dataset(load.tasks);
        py::dict d;
        d["size_mismatch"] = result.counts.size_mismatch;
        d["color_novel"] = result.counts.color_novel;
        d["feasible"] = result.counts.feasible;
        std::vector<std::string> ids;
        for (const auto& t : result.feasible) ids.push_back(t.id);
        d["feasible_ids"] = ids;
        d["unreadable"] = load.failures.size();
        return d;
      },
      py::arg("dir"));

  // ---- model ----
  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init([](std::size_t hidden, std::size_t filters, std::size_t width) {
             ModelSpec s{hidden, filters, width};
             s.validate();
             return s;
           }),
           py::arg("hidden_channels") = 20, py::arg("perception_filters") = 24,
           py::arg("dense_width") = 64)
      .def_readwrite("hidden_channels", &ModelSpec::hidden_channels)
      .def_readwrite("perception_filters", &ModelSpec::perception_filters)
      .def_readwrite("dense_width", &ModelSpec::dense_width)
      .def_property_readonly("total_channels", &ModelSpec::total_channels)
      .def_property_readonly("parameter_count", &ModelSpec::parameter_count)
      .def(py::self == py::self);

  py::class_<ModelParams<float>>(m, "Params")
      .def_readonly("spec", &ModelParams<float>::spec)
      .def_property_readonly("size", &ModelParams<float>::size)
      .def("blocks", &params_blocks, "Copies of every block as named numpy arrays.")
      .def(py::self == py::self);

  m.def(
      "init_params",
      [](const ModelSpec& spec, std::uint64_t seed) {
        Rng rng(seed);
        return init_params<float>(spec, rng);
      },
      py::arg("spec") = ModelSpec{}, py::arg("seed") = 0);

  // ---- training ----
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("trials_per_example", &TrainConfig::trials_per_example)
      .def_readwrite("mask_lo", &TrainConfig::mask_lo)
      .def_readwrite("mask_hi", &TrainConfig::mask_hi)
      .def_readwrite("lr_start", &TrainConfig::lr_start)
      .def_readwrite("lr_end", &TrainConfig::lr_end)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
      .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
      .def_readwrite("adam_epsilon", &TrainConfig::adam_epsilon)
      .def_readwrite("max_grad_norm", &TrainConfig::max_grad_norm)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("trials_per_job", &TrainConfig::trials_per_job)
      .def_readwrite("workers", &TrainConfig::workers)
      .def("validate", &TrainConfig::validate)
      .def("digest", &TrainConfig::digest);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_property_readonly("losses",
                             [](const TrainResult& r) {
                               std::vector<double> v;
                               for (const auto& e : r.history.epochs) v.push_back(e.mean_loss);
                               return v;
                             })
      .def_property_readonly("final_loss", [](const TrainResult& r) { return r.history.final_loss; })
      .def_property_readonly("wall_time", [](const TrainResult& r) { return r.history.wall_time; });

  m.def("lr_at", &lr_at, py::arg("epoch"), py::arg("config"));
  m.def(
      "train_task",
      [](const Task& task, const ModelSpec& spec, const TrainConfig& config,
         std::function<bool(std::size_t, double)> on_epoch) {
        TrainHooks hooks;
        if (on_epoch) {
          hooks.on_epoch = [&on_epoch](const EpochRecord& r) {
            py::gil_scoped_acquire gil;
            return on_epoch(r.epoch, r.mean_loss);
          };
        }
        py::gil_scoped_release release;
        return train_task(task, spec, config, hooks);
      },
      py::arg("task"), py::arg("spec") = ModelSpec{}, py::arg("config") = TrainConfig{},
      py::arg("on_epoch") = nullptr,
      "on_epoch(epoch, mean_loss) may return False to stop early.");

  m.def(
      "grad_check",
      [](std::size_t trials, std::uint64_t seed) {
        const auto r = grad_check(trials, seed);
        py::dict d;
        d["instances"] = r.instances.size();
        d["parameters_checked"] = r.parameters_checked;
        d["max_rel_error"] = r.max_rel_error;
        return d;
      },
      py::arg("trials") = 20, py::arg("seed") = 0);

  // ---- evaluation ----
  m.def(
      "infer",
      [](const ModelParams<float>& params, const Rows& input, std::size_t steps) {
        py::gil_scoped_release release;
        return infer(params, to_grid(input), steps).to_rows();
      },
      py::arg("params"), py::arg("grid"), py::arg("steps") = 10);
  m.def(
      "evaluate_task",
      [](const ModelParams<float>& params, const Task& task, std::size_t steps) {
        return result_dict(evaluate_task(params, task, steps));
      },
      py::arg("params"), py::arg("task"), py::arg("steps") = 10);
  m.def(
      "pixel_accuracy",
      [](const Rows& predicted, const Rows& truth) {
        return pixel_accuracy(to_grid(predicted), to_grid(truth));
      },
      py::arg("predicted"), py::arg("truth"));
  m.def(
      "spiral", [](std::size_t rows, std::size_t cols) { return spiral_output(rows, cols).to_rows(); },
      py::arg("rows"), py::arg("cols"));
  m.def(
      "scaled_spiral_check",
      [](const ModelParams<float>& params, std::size_t size, std::size_t steps) {
        py::gil_scoped_release release;
        return scaled_spiral_check(params, size, steps);
      },
      py::arg("params"), py::arg("size") = 100, py::arg("steps") = 110);

  // ---- persistence and rendering ----
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("params"),
        py::arg("train_config_digest") = "");
  m.def(
      "load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).params; },
      py::arg("path"));
  m.def(
      "render_ascii", [](const Rows& grid) { return render_ascii(to_grid(grid)); }, py::arg("grid"));
  m.def(
      "render_png",
      [](const std::vector<Rows>& grids, std::size_t cell_px, const std::filesystem::path& path) {
        std::vector<Grid> g;
        for (const auto& r : grids) g.push_back(to_grid(r));
        render_png(g, cell_px, path);
      },
      py::arg("grids"), py::arg("cell_px"), py::arg("path"));
}
