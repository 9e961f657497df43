#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "json.hpp"
#include "kplab/params.hpp"
#include "kplab/skeleton.hpp"

namespace kplab {

// Three-stage strided-conv pyramid. The image is average-pooled to the
// internal resolution R, encoded down to R/4, then decoded back up with skip
// connections; the three decoder outputs are the coarse-to-fine pyramid at
// R/4, R/2 and R. widths[i] is the channel count of pyramid level i.
struct BackboneConfig {
  std::array<std::size_t, 3> widths{16, 32, 64};
  std::size_t image_channels = 3;
  std::size_t image_height = 64;
  std::size_t image_width = 48;
  std::size_t internal_height = 64;
  std::size_t internal_width = 48;
  std::size_t kernel_size = 3;
  std::size_t joints = 13;
  std::size_t k_split = 2;
  bool expectation_decode = false;  // decode by soft-argmax instead of argmax
  double head_prior = 0.0;  // > 0: coordinate heads start as a Gaussian cell-to-bin map of this gain

  void validate() const;  // throws InvalidConfig
  std::size_t x_bins() const { return image_width * k_split; }
  std::size_t y_bins() const { return image_height * k_split; }
  std::size_t pool_factor() const { return image_height / internal_height; }

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

BackboneConfig teacher_backbone();  // widths 32/64/128
BackboneConfig student_backbone();  // widths 16/32/64

struct FeaturePyramid {
  std::array<Tensor, 3> levels;  // coarse -> fine
};

struct BackboneOutput {
  FeaturePyramid pyramid;
  Tensor feature;  // final map used for feature distillation (== levels[2])
};

struct SimCCLogits {
  Tensor x_logits;  // [K, W*k_split]
  Tensor y_logits;  // [K, H*k_split]
  std::size_t k_split = 2;
};

// Convolutions use uniform(+-sqrt(6/fan_in)), heads uniform(+-1/sqrt(fan_in)),
// biases zero. With head_prior > 0 the x/y heads instead map each internal cell
// to a Gaussian bump (sigma one cell) centred on that cell's coordinate.
ParamSet init_posenet(const BackboneConfig& config, std::uint64_t seed);
ParamSet zeros_like(const ParamSet& params);

BackboneOutput forward_backbone(const BackboneConfig& config, const ParamSet& params, const Tensor& image);

// Per-joint 3x3 conv on the finest map, then one shared linear projection per
// axis from the flattened joint map to the coordinate bins.
SimCCLogits simcc_heads(const BackboneConfig& config, const Tensor& finest, const ParamSet& params);

// Argmax bin / (bins - 1), lowest index on ties; mask all true.
Pose decode_simcc(const SimCCLogits& logits);
// Softmax expectation of bin / (bins - 1); not differentiable (see soft_argmax).
Pose decode_simcc_expectation(const SimCCLogits& logits);
// Mean over joints and axes of the maximum softmax bin probability.
double simcc_confidence(const SimCCLogits& logits);
// Differentiable soft-argmax pose, [K,2].
Tensor soft_argmax(const SimCCLogits& logits);

struct SimCCTargets {
  Tensor x;  // [K, x_bins]
  Tensor y;  // [K, y_bins]
};

// One-hot at the nearest bin, smoothed to (1 - eps) at the hot bin and
// eps / (bins - 1) elsewhere.
SimCCTargets encode_simcc_targets(const Pose& pose, double smoothing, std::size_t x_bins, std::size_t y_bins);

// Sum of the per-axis kl_div terms against encoded targets.
Tensor simcc_kl_loss(const SimCCLogits& logits, const SimCCTargets& targets);

struct PoseNet {
  BackboneConfig config;
  ParamSet params;
};

struct Prediction {
  Pose pose;
  double confidence = 0.0;
};

Prediction predict(const PoseNet& net, const Tensor& image);

}  // namespace kplab
