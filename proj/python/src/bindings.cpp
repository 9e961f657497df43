#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kplab/checkpoint.hpp"
#include "kplab/cli.hpp"
#include "kplab/distill.hpp"
#include "kplab/igpgcn.hpp"
#include "kplab/metrics.hpp"
#include "kplab/synth.hpp"

namespace py = pybind11;
using namespace kplab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::vector<double>(a.data(), a.data() + a.size()), shape);
}

Pose to_pose(const Array& coords, const std::optional<std::vector<bool>>& mask) {
  if (coords.ndim() != 2 || coords.shape(1) != 2) throw py::value_error("pose must have shape (K, 2)");
  Pose p = pose_from_tensor(to_tensor(coords));
  if (mask) {
    if (mask->size() != p.size()) throw py::value_error("mask length differs from joint count");
    p.mask = *mask;
  }
  return p;
}

Array pose_array(const Pose& p) { return to_array(pose_to_tensor(p)); }

py::dict ap_dict(const ApResult& r) {
  py::dict d;
  d["ap"] = r.ap;
  d["ap50"] = r.ap50;
  d["ap75"] = r.ap75;
  d["ar"] = r.ar;
  d["thresholds"] = r.thresholds;
  d["ap_per_threshold"] = r.ap_per_threshold;
  d["recall_per_threshold"] = r.recall_per_threshold;
  return d;
}

py::dict skeleton_dict(const SkeletonSpec& s) {
  py::dict d;
  d["k"] = s.k;
  d["edges"] = s.edges;
  d["edge_weights"] = s.edge_weights;
  d["oks_falloff"] = s.oks_falloff;
  d["joint_names"] = s.joint_names;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "kplab: keypoint distillation lab";

  py::register_exception<Error>(m, "KplabError", PyExc_RuntimeError);

  m.def("stick_figure_skeleton", [] { return skeleton_dict(stick_figure_skeleton()); });
  m.def("normalized_adjacency", [] { return to_array(normalized_adjacency(stick_figure_skeleton())); },
        "Symmetric-normalized adjacency with self loops of the stick-figure skeleton.");

  m.def(
      "oks",
      [](const Array& pred, const Array& gt, double area, std::vector<double> falloff,
         std::optional<std::vector<bool>> mask) { return oks(to_pose(pred, {}), to_pose(gt, mask), area, falloff); },
      py::arg("pred"), py::arg("gt"), py::arg("area"), py::arg("falloff"), py::arg("mask") = py::none());
  m.def(
      "pck",
      [](const Array& pred, const Array& gt, double alpha, double area, std::optional<std::vector<bool>> mask) {
        return pck(to_pose(pred, {}), to_pose(gt, mask), alpha, area);
      },
      py::arg("pred"), py::arg("gt"), py::arg("alpha"), py::arg("area"), py::arg("mask") = py::none());

  m.def(
      "average_precision",
      [](const std::vector<std::tuple<std::uint64_t, Array, double>>& preds,
         const std::vector<std::tuple<std::uint64_t, Array, double>>& truths, std::vector<double> falloff,
         std::optional<std::vector<double>> thresholds) {
        std::vector<ScoredPrediction> p;
        for (const auto& [id, pose, score] : preds) p.push_back({id, to_pose(pose, {}), score});
        std::vector<GroundTruth> g;
        for (const auto& [id, pose, area] : truths) g.push_back({id, to_pose(pose, {}), area});
        return ap_dict(thresholds ? average_precision(p, g, falloff, *thresholds) : average_precision(p, g, falloff));
      },
      py::arg("predictions"), py::arg("truths"), py::arg("falloff"), py::arg("thresholds") = py::none(),
      "predictions: [(image_id, pose, score)], truths: [(image_id, pose, area)]");

  m.def(
      "synth_sample",
      [](std::uint64_t seed, double occlusion) {
        SynthConfig c;
        c.occlusion_prob = occlusion;
        const auto s = generate_synthetic_sample(seed, c, 0);
        py::dict d;
        d["image"] = to_array(s.image);
        d["pose"] = pose_array(s.gt_pose);
        d["mask"] = s.gt_pose.mask;
        d["occluded"] = s.meta.occluded;
        d["area"] = s.area;
        return d;
      },
      py::arg("seed"), py::arg("occlusion") = 0.0);

  py::class_<PoseNet>(m, "PoseNet")
      .def_static("load", [](const std::string& path) { return posenet_from_checkpoint(load_checkpoint(path)); })
      .def_property_readonly("config", [](const PoseNet& n) { return n.config.to_json().dump(); })
      .def("predict", [](const PoseNet& n, const Array& image) {
        const auto p = predict(n, to_tensor(image));
        return py::make_tuple(pose_array(p.pose), p.confidence);
      });

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_command(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs a kplab CLI subcommand; returns (exit_code, stdout, stderr).");
}
