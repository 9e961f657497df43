#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kplab/ops.hpp"
#include "kplab/tensor.hpp"

namespace kplab {

using Edge = std::pair<std::size_t, std::size_t>;

// Joint graph G = (V, E) with adjacency, per-edge weights and OKS falloff.
struct SkeletonSpec {
  std::size_t k = 0;
  std::vector<Edge> edges;          // (i, j) with i < j
  std::vector<double> edge_weights;  // sums to 1 when edges is non-empty
  std::vector<std::uint8_t> adjacency;  // k*k, row-major, symmetric, zero diagonal
  std::vector<double> oks_falloff;
  std::vector<std::string> joint_names;

  bool adjacent(std::size_t i, std::size_t j) const { return adjacency[i * k + j] != 0; }
  std::size_t degree(std::size_t i) const;
};

// Validates and normalizes the edge list. Weights default to 1/|E|; explicit
// weights must be positive and are rescaled to sum to one.
SkeletonSpec build_skeleton(std::vector<Edge> edges, std::size_t k, std::vector<double> falloff,
                            std::optional<std::vector<double>> weights = std::nullopt,
                            std::vector<std::string> names = {});

// 13-joint stick figure: head, shoulders, elbows, wrists, hips, knees, ankles.
// Joint 0 (head) is the root of the 12-edge tree.
SkeletonSpec stick_figure_skeleton();
// COCO person keypoints with the standard limb skeleton and falloff 2*sigma.
SkeletonSpec coco_skeleton();

// {"k": int, "edges": [[i,j],...], "weights": optional, "falloff": [...],
//  "names": optional}
SkeletonSpec load_skeleton_config(const std::filesystem::path& path);
SkeletonSpec skeleton_from_json_text(const std::string& text);

struct Pose {
  std::vector<ops::Point2> coords;  // normalized [0,1] image space
  std::vector<bool> mask;           // true = labeled

  std::size_t size() const noexcept { return coords.size(); }
  static Pose all_visible(std::vector<ops::Point2> coords);
};

// [K,2] tensor of (x, y) rows.
Tensor pose_to_tensor(const Pose& pose);
Pose pose_from_tensor(const Tensor& t);
// [K,2] mask tensor, each joint's bit repeated over both coordinates.
Tensor mask_to_tensor(const Pose& pose);

struct SampleMeta {
  std::uint64_t id = 0;
  std::vector<bool> occluded;  // per joint; hidden in pixels, still labeled
};

struct PoseSample {
  Tensor image;  // [C,H,W] in [0,1]; undefined for label-only records
  Pose gt_pose;
  double area = 0.0;  // normalized units (fraction of the image area)
  SampleMeta meta;
};

using Dataset = std::vector<PoseSample>;

// Euclidean length of every edge in normalized coordinates.
std::vector<double> edge_lengths(const Pose& pose, const SkeletonSpec& skel);
// Differentiable variant on a [K,2] pose tensor -> [|E|].
Tensor edge_lengths(const Tensor& pose, const SkeletonSpec& skel);

}  // namespace kplab
