#pragma once

#include <array>
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

// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I, as a [K,K] tensor.
Tensor normalized_adjacency(const SkeletonSpec& skel);

// relu(a_hat * x * w + b). x [K,d_in], w [d_in,d_out], b [d_out].
Tensor graph_conv(const Tensor& x, const Tensor& a_hat, const Tensor& w, const Tensor& b);

struct JointFeatures {
  std::array<Tensor, 3> levels;  // [K, C_i], coarse -> fine
};

// Bilinear samples of every pyramid level at the pose's joints.
JointFeatures gather_joint_features(const FeaturePyramid& pyramid, const Pose& pose);

struct IgpGcnConfig {
  std::size_t joints = 13;
  std::array<std::size_t, 3> feature_widths{16, 32, 64};
  std::size_t node_width = 64;
  bool regather = false;  // re-sample features at each intermediate pose

  void validate() const;
  nlohmann::json to_json() const;
  static IgpGcnConfig from_json(const nlohmann::json& j);
};

// Parameters: "embed.{w,b}", then per block i in 1..3 "block{i}.gate.{w,b}",
// "block{i}.proj.{w,b}", "block{i}.gc1.{w,b}", "block{i}.gc2.{w,b}",
// "block{i}.head.{w,b}". Heads are zero; everything else is uniform in
// +-1/sqrt(fan_in).
ParamSet init_igpgcn(const IgpGcnConfig& config, std::uint64_t seed);

struct IgpOutput {
  std::array<Tensor, 3> poses;  // [K,2] after blocks 1, 2, 3
};

// Embeds p_init [K,2], then block i gates in features[i], applies two graph
// convolutions with a residual skip and adds its head's offset to the pose.
IgpOutput igp_forward(const IgpGcnConfig& config, const ParamSet& params, const Tensor& a_hat, const Tensor& p_init,
                      const JointFeatures& features);
// Same, but block i samples `pyramid` at the pose produced by block i-1.
IgpOutput igp_forward_regather(const IgpGcnConfig& config, const ParamSet& params, const Tensor& a_hat,
                               const Tensor& p_init, const FeaturePyramid& pyramid);

struct Stage2LossWeights {
  double delta = 0.3;
  double lambda = 0.5;
  double xi = 1.0;

  void validate() const;  // throws InvalidConfig
};

struct Stage2Loss {
  Tensor total;
  std::array<Tensor, 3> levels;
};

// Per-sample masked L1 for each level; mask is [K,2] (see mask_to_tensor).
std::array<Tensor, 3> sample_stage2_levels(const Tensor& target, const IgpOutput& out, const Tensor& mask);
// Mean over the batch of the per-sample levels, combined with the weights.
Stage2Loss stage2_loss(std::span<const Tensor> targets, std::span<const IgpOutput> outputs,
                       std::span<const Tensor> masks, const Stage2LossWeights& w);

enum class Stage2Target { Teacher, GroundTruth };

struct Stage2Config {
  std::uint64_t seed = 0;
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double lr = 1e-3;
  Stage2LossWeights weights;
  std::size_t node_width = 64;
  bool regather = false;
  Stage2Target target = Stage2Target::Teacher;
  std::function<void(const std::string&)> log;

  void validate() const;
  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

struct Stage2Record {
  std::size_t epoch = 0;  // 0 is the untrained model
  double l1_gcn = 0.0;
  double l2_gcn = 0.0;
  double l3_gcn = 0.0;
  double l_total = 0.0;
  double val_oks_p3 = 0.0;
  double val_occluded_err = 0.0;
};

struct Stage2Report {
  std::vector<Stage2Record> records;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  static Stage2Report from_json(const nlohmann::json& j);
};

struct Stage2Result {
  Checkpoint checkpoint;
  Stage2Report report;
  EvalResult val_init;     // student's own poses
  EvalResult val_refined;  // P3
};

// Trains only the IGP-GCN on top of the frozen student. `teacher` may be
// null when the target is GroundTruth. Throws CheckpointMismatch,
// DivergenceDetected. A non-empty `teacher_poses` ([K,2] per training
// sample) replaces the teacher forward pass.
Stage2Result run_stage2(const Checkpoint* teacher, const Checkpoint& student, const Dataset& train, const Dataset& val,
                        const SkeletonSpec& skel, const Stage2Config& config,
                        std::span<const Tensor> teacher_poses = {});

struct RefinedPrediction {
  Pose initial;
  Pose refined;  // P3
  double confidence = 0.0;
};

// Student prediction followed by IGP-GCN refinement.
std::vector<RefinedPrediction> refine_dataset(const PoseNet& student, const Checkpoint& gcn, const Dataset& data,
                                              const SkeletonSpec& skel);

}  // namespace kplab
