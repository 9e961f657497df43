#include "kplab/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace kplab {

std::size_t SkeletonSpec::degree(std::size_t i) const {
  std::size_t d = 0;
  for (std::size_t j = 0; j < k; ++j) d += adjacency[i * k + j];
  return d;
}

SkeletonSpec build_skeleton(std::vector<Edge> edges, std::size_t k, std::vector<double> falloff,
                            std::optional<std::vector<double>> weights, std::vector<std::string> names) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "skeleton needs at least one joint");
  if (falloff.size() != k)
    throw Error(ErrorKind::InvalidArgument, "falloff has " + std::to_string(falloff.size()) + " entries for " +
                                                std::to_string(k) + " joints");
  for (double f : falloff)
    if (!(f > 0.0) || !std::isfinite(f)) throw Error(ErrorKind::InvalidArgument, "falloff constants must be positive");
  if (!names.empty() && names.size() != k) throw Error(ErrorKind::InvalidArgument, "joint name count differs from k");

  std::set<Edge> seen;
  for (auto& [i, j] : edges) {
    if (i >= k || j >= k)
      throw Error(ErrorKind::IndexOutOfRange,
                  "edge (" + std::to_string(i) + "," + std::to_string(j) + ") with k=" + std::to_string(k));
    if (i == j) throw Error(ErrorKind::InvalidArgument, "self-loop on joint " + std::to_string(i));
    if (i > j) std::swap(i, j);
    if (!seen.insert({i, j}).second)
      throw Error(ErrorKind::DuplicateEdge, "edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
  }

  SkeletonSpec s;
  s.k = k;
  s.adjacency.assign(k * k, 0);
  for (auto [i, j] : edges) {
    s.adjacency[i * k + j] = 1;
    s.adjacency[j * k + i] = 1;
  }

  // Connectivity by flood fill from joint 0.
  std::vector<bool> reached(k, false);
  std::vector<std::size_t> stack{0};
  reached[0] = true;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    for (std::size_t u = 0; u < k; ++u)
      if (s.adjacency[v * k + u] && !reached[u]) {
        reached[u] = true;
        stack.push_back(u);
      }
  }
  for (std::size_t v = 0; v < k; ++v)
    if (!reached[v]) throw Error(ErrorKind::DisconnectedGraph, "joint " + std::to_string(v) + " is unreachable");

  if (weights) {
    if (weights->size() != edges.size())
      throw Error(ErrorKind::InvalidArgument, "weights count differs from edge count");
    double total = 0.0;
    for (double w : *weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidArgument, "edge weights must be positive");
      total += w;
    }
    s.edge_weights = *weights;
    for (auto& w : s.edge_weights) w /= total;
  } else {
    s.edge_weights.assign(edges.size(), edges.empty() ? 0.0 : 1.0 / static_cast<double>(edges.size()));
  }
  s.edges = std::move(edges);
  s.oks_falloff = std::move(falloff);
  if (names.empty()) {
    for (std::size_t i = 0; i < k; ++i) names.push_back("joint_" + std::to_string(i));
  }
  s.joint_names = std::move(names);
  return s;
}

SkeletonSpec stick_figure_skeleton() {
  std::vector<Edge> edges{{0, 1}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6},
                          {1, 7}, {2, 8}, {7, 9}, {8, 10}, {9, 11}, {10, 12}};
  std::vector<std::string> names{"head",       "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
                                 "left_wrist", "right_wrist",   "left_hip",       "right_hip",  "left_knee",
                                 "right_knee", "left_ankle",    "right_ankle"};
  return build_skeleton(std::move(edges), 13, std::vector<double>(13, 0.08), std::nullopt, std::move(names));
}

SkeletonSpec coco_skeleton() {
  // Published COCO sigmas; the falloff constant in the OKS exponent is 2*sigma.
  const std::vector<double> sigmas{.026, .025, .025, .035, .035, .079, .079, .072, .072,
                                   .062, .062, .107, .107, .087, .087, .089, .089};
  std::vector<double> falloff;
  for (double s : sigmas) falloff.push_back(2.0 * s);
  // COCO 1-based limb list converted to 0-based.
  const int limbs[19][2] = {{16, 14}, {14, 12}, {17, 15}, {15, 13}, {12, 13}, {6, 12}, {7, 13},
                            {6, 7},   {6, 8},   {7, 9},   {8, 10},  {9, 11},  {2, 3},  {1, 2},
                            {1, 3},   {2, 4},   {3, 5},   {4, 6},   {5, 7}};
  std::vector<Edge> edges;
  for (auto& l : limbs) edges.emplace_back(static_cast<std::size_t>(l[0] - 1), static_cast<std::size_t>(l[1] - 1));
  std::vector<std::string> names{"nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
                                 "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
                                 "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
                                 "left_ankle",    "right_ankle"};
  return build_skeleton(std::move(edges), 17, std::move(falloff), std::nullopt, std::move(names));
}

SkeletonSpec skeleton_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, std::string("skeleton config: ") + e.what());
  }
  try {
    const auto k = j.at("k").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw Error(ErrorKind::ParseError, "skeleton config: edges entries must be [i,j]");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    std::optional<std::vector<double>> weights;
    if (j.contains("weights") && !j["weights"].is_null()) weights = j["weights"].get<std::vector<double>>();
    auto falloff = j.at("falloff").get<std::vector<double>>();
    std::vector<std::string> names;
    if (j.contains("names")) names = j["names"].get<std::vector<std::string>>();
    return build_skeleton(std::move(edges), k, std::move(falloff), std::move(weights), std::move(names));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("skeleton config: ") + e.what());
  }
}

SkeletonSpec load_skeleton_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return skeleton_from_json_text(ss.str());
}

Pose Pose::all_visible(std::vector<ops::Point2> coords) {
  Pose p;
  p.mask.assign(coords.size(), true);
  p.coords = std::move(coords);
  return p;
}

Tensor pose_to_tensor(const Pose& pose) {
  std::vector<double> v;
  v.reserve(pose.size() * 2);
  for (const auto& c : pose.coords) {
    v.push_back(c.x);
    v.push_back(c.y);
  }
  return Tensor::from(std::move(v), {pose.size(), 2});
}

Pose pose_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 2) throw Error(ErrorKind::ShapeMismatch, "pose tensor must be [K,2]");
  std::vector<ops::Point2> coords(t.dim(0));
  auto d = t.data();
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = {d[2 * i], d[2 * i + 1]};
  return Pose::all_visible(std::move(coords));
}

Tensor mask_to_tensor(const Pose& pose) {
  std::vector<double> v;
  v.reserve(pose.size() * 2);
  for (std::size_t i = 0; i < pose.size(); ++i) {
    const double m = i < pose.mask.size() && pose.mask[i] ? 1.0 : 0.0;
    v.push_back(m);
    v.push_back(m);
  }
  return Tensor::from(std::move(v), {pose.size(), 2});
}

std::vector<double> edge_lengths(const Pose& pose, const SkeletonSpec& skel) {
  if (pose.size() != skel.k)
    throw Error(ErrorKind::ShapeMismatch,
                "pose has " + std::to_string(pose.size()) + " joints, skeleton " + std::to_string(skel.k));
  std::vector<double> out;
  out.reserve(skel.edges.size());
  for (auto [i, j] : skel.edges)
  {
    const double dx = pose.coords[i].x - pose.coords[j].x;
    const double dy = pose.coords[i].y - pose.coords[j].y;
    out.push_back(std::sqrt(dx * dx + dy * dy));
  }
  return out;
}

Tensor edge_lengths(const Tensor& pose, const SkeletonSpec& skel) {
  if (pose.rank() != 2 || pose.dim(0) != skel.k || pose.dim(1) != 2)
    throw Error(ErrorKind::ShapeMismatch, "pose tensor " + shape_str(pose.shape()) + " for k=" + std::to_string(skel.k));
  if (skel.edges.empty()) throw Error(ErrorKind::ShapeMismatch, "skeleton has no edges");
  std::vector<std::size_t> from, to;
  for (auto [i, j] : skel.edges) {
    from.push_back(i);
    to.push_back(j);
  }
  return ops::row_norm(ops::sub(ops::gather_rows(pose, from), ops::gather_rows(pose, to)));
}

}  // namespace kplab
