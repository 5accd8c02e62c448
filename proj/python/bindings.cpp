#include <cstring>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ccdepth/checkpoint.hpp"
#include "ccdepth/cli.hpp"
#include "ccdepth/config.hpp"
#include "ccdepth/crate.hpp"
#include "ccdepth/errors.hpp"
#include "ccdepth/evaluator.hpp"
#include "ccdepth/kitti_data.hpp"

namespace py = pybind11;
using namespace ccdepth;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Array to_array(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  Array out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
  return out;
}

// Round trip through the JSON module keeps the config schema in one place.
py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

RunConfig config_from(const py::object& o) { return o.is_none() ? RunConfig{} : run_config_from_json(py_to_json(o)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the ccdepth C++ library.";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("default_config", [] { return json_to_py(to_json(RunConfig{})); }, "Default run configuration as a dict.");
  m.def("toy_config", [] { return json_to_py(to_json(toy_run_config())); }, "Synthetic-data preset as a dict.");

  m.def(
      "count_parameters",
      [](const py::object& config) {
        auto c = count_parameters(config_from(config).network);
        py::dict d;
        d["depth_net"] = c.depth_net;
        d["pose_net"] = c.pose_net;
        d["total"] = c.total();
        return d;
      },
      py::arg("config") = py::none(), "Learnable scalars of the depth and pose networks for a run config dict.");

  m.def(
      "compute_metrics",
      [](const Array& pred, const Array& gt) {
        auto r = compute_metrics(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                                 std::span<const double>(gt.data(), static_cast<std::size_t>(gt.size())));
        py::dict d;
        const auto values = r.values();
        for (std::size_t i = 0; i < values.size(); ++i) d[py::str(MetricsReport::columns()[i])] = values[i];
        return d;
      },
      py::arg("pred"), py::arg("gt"), "Seven depth metrics over paired valid depths.");

  m.def(
      "coding_rate", [](const Array& z, double eps) { return crate::coding_rate(to_tensor(z), eps).item<double>(); },
      py::arg("z"), py::arg("eps"), "Lossy coding rate of a (d, N) token matrix.");

  m.def(
      "ista_step",
      [](const Array& z, const Array& dictionary, double eta, double lambda1) {
        return to_array(crate::ista_step(to_tensor(z), crate::Dictionary(to_tensor(dictionary)), eta, lambda1));
      },
      py::arg("z"), py::arg("dictionary"), py::arg("eta"), py::arg("lambda1"), "One nonnegative ISTA step.");

  m.def(
      "toy_scene",
      [](int index, int width, int height, std::uint64_t seed) {
        ToyConfig cfg;
        cfg.scenes = index + 1;
        cfg.width = width;
        cfg.height = height;
        cfg.seed = seed;
        auto scene = make_toy_dataset(cfg).at(static_cast<std::size_t>(index));
        py::dict d;
        d["target"] = to_array(scene.triplet.target);
        d["previous"] = to_array(scene.triplet.refs[0]);
        d["next"] = to_array(scene.triplet.refs[1]);
        d["depth"] = to_array(scene.depth);
        d["intrinsics"] = to_array(scene.triplet.intrinsics.matrix());
        return d;
      },
      py::arg("index") = 0, py::arg("width") = 128, py::arg("height") = 64, py::arg("seed") = 7,
      "One rendered synthetic triplet with its ground-truth depth.");

  m.def(
      "predict_disparity",
      [](const std::string& checkpoint, const Array& image) {
        auto [depth, pose] = networks_from_checkpoint(read_checkpoint(checkpoint));
        depth->eval();
        torch::NoGradGuard no_grad;
        auto x = to_tensor(image).to(torch::kFloat32);
        if (x.dim() != 3 || x.size(0) != 3) throw ShapeError("image: expected (3, H, W)");
        return to_array(depth->forward(x.unsqueeze(0))[0][0][0]);
      },
      py::arg("checkpoint"), py::arg("image"), "Finest-scale disparity (H, W) for a (3, H, W) image in [0, 1].");

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "ccdepth");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a ccdepth subcommand; returns (exit_code, stdout, stderr).");
}
