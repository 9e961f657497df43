#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kplab/checkpoint.hpp"
#include "kplab/metrics.hpp"
#include "kplab/posenet.hpp"

namespace kplab {

struct Stage1LossWeights {
  double alpha = 5e-5;  // feature term
  double beta = 0.1;    // pose term
  std::size_t total_epochs = 210;

  void validate() const;  // throws InvalidConfig
};

// Mean squared error between the teacher map and the 1x1-aligned student
// map. align_kernels is [C_tea, C_stu, 1, 1]. The teacher map is detached.
Tensor feature_distill_loss(const Tensor& f_tea, const Tensor& f_stu, const Tensor& align_kernels);

// Weighted absolute difference of teacher and student edge lengths. Poses
// are [K,2]; the teacher side is detached.
Tensor structure_constraint_loss(const Tensor& p_tea, const Tensor& p_stu, const SkeletonSpec& skel);
double structure_constraint_loss(const Pose& p_tea, const Pose& p_stu, const SkeletonSpec& skel);

// Per-sample pose term: sum over joints and axes of |P_tea - P_stu|, plus the
// structure term when `with_structure` is set.
Tensor sample_pose_loss(const Tensor& p_tea, const Tensor& p_stu, const SkeletonSpec& skel, bool with_structure = true);
// Batch form: mean over samples of sample_pose_loss.
Tensor pose_distill_loss(std::span<const Tensor> p_tea, std::span<const Tensor> p_stu, const SkeletonSpec& skel,
                         bool with_structure = true);
double pose_distill_loss(std::span<const Pose> p_tea, std::span<const Pose> p_stu, const SkeletonSpec& skel,
                         bool with_structure = true);

// 1 - (t - 1) / T for 1 <= t <= T; EpochOutOfRange otherwise.
double decay_weight(std::size_t t, std::size_t total);

Tensor stage1_total_loss(const Tensor& l_kl, const Tensor& l_fea, const Tensor& l_pos, const Stage1LossWeights& w,
                         std::size_t t);
double stage1_total_loss(double l_kl, double l_fea, double l_pos, const Stage1LossWeights& w, std::size_t t);

struct SchemeFlags {
  bool feature = false;
  bool pose_l1 = false;   // pose L1 without the structure term
  bool skeleton = false;  // pose L1 plus the structure term

  bool any() const { return feature || pose_l1 || skeleton; }
  bool pose() const { return pose_l1 || skeleton; }
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 210;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::vector<std::size_t> lr_steps;  // epochs after which lr is divided by 10
  double smoothing = 0.1;             // SimCC label smoothing
  double alpha = 5e-5;
  double beta = 0.1;
  SchemeFlags flags;
  std::function<void(const std::string&)> log;  // optional progress sink

  void validate() const;  // throws InvalidConfig
  Stage1LossWeights weights() const { return {alpha, beta, epochs}; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Stage1Record {
  std::size_t epoch = 0;
  double l_kl = 0.0;
  double l_fea = 0.0;
  double l_pos = 0.0;
  double gamma = 0.0;
  double l_total = 0.0;
  double val_pck = 0.0;
  double val_oks = 0.0;
};

struct Stage1Report {
  std::vector<Stage1Record> records;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  static Stage1Report from_json(const nlohmann::json& j);
};

struct TrainResult {
  Checkpoint checkpoint;
  Stage1Report report;
  EvalResult validation;  // final epoch, hard-argmax decoding
};

PoseNet posenet_from_checkpoint(const Checkpoint& ckpt);
Checkpoint posenet_checkpoint(const std::string& kind, const PoseNet& net);

std::vector<Prediction> predict_dataset(const PoseNet& net, const Dataset& data);
EvalResult evaluate_posenet(const PoseNet& net, const Dataset& data, const SkeletonSpec& skel);

// Trains a pose network from scratch on SimCC KL against encoded labels.
// Throws EmptyDataset, DivergenceDetected.
TrainResult train_teacher(const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                          const SkeletonSpec& skel, const TrainConfig& config);

// Frozen-teacher outputs per training sample, shareable between runs.
struct TeacherOutputs {
  std::vector<Tensor> pose;     // [K,2], hard argmax
  std::vector<Tensor> feature;  // finest map; empty unless requested
};
TeacherOutputs teacher_outputs(const PoseNet& teacher, const Dataset& data, bool with_features);

// Trains a student under the selected distillation terms with the teacher
// frozen. With no flags set this is the same loop as train_teacher.
// `precomputed` must come from teacher_outputs(teacher, train, ...) and carry
// features when the feature term is on.
// Throws CheckpointMismatch when teacher and student extents differ.
TrainResult run_stage1(const Checkpoint& teacher, const BackboneConfig& student, const Dataset& train,
                       const Dataset& val, const SkeletonSpec& skel, const TrainConfig& config,
                       const TeacherOutputs* precomputed = nullptr);

}  // namespace kplab
