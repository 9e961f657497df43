#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kplab/skeleton.hpp"

namespace kplab {

// COCO object keypoint similarity: mean over labeled gt joints of
// exp(-d^2 / (2 * area * k_j^2)). Throws NoLabeledJoints.
double oks(const Pose& pred, const Pose& gt, double area, std::span<const double> falloff);

// Fraction of labeled joints whose distance, divided by sqrt(area), is
// strictly below alpha. Throws NoLabeledJoints.
double pck(const Pose& pred, const Pose& gt, double alpha, double area);

struct ScoredPrediction {
  std::uint64_t image_id = 0;
  Pose pose;
  double score = 0.0;
};

struct GroundTruth {
  std::uint64_t image_id = 0;
  Pose pose;
  double area = 0.0;
};

// 0.50:0.05:0.95
std::vector<double> default_oks_thresholds();

struct ApResult {
  double ap = 0.0;    // mean over thresholds
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar = 0.0;    // mean recall over thresholds
  std::vector<double> thresholds;
  std::vector<double> ap_per_threshold;
  std::vector<double> recall_per_threshold;
};

// COCO-style evaluation for one category: predictions are visited in
// descending score order (stable on ties) and greedily matched to the
// unmatched ground truth of the same image with the highest OKS >= threshold.
// Precision is integrated at 101 recall points over its monotone envelope.
ApResult average_precision(std::span<const ScoredPrediction> predictions, std::span<const GroundTruth> truths,
                           std::span<const double> falloff, std::span<const double> thresholds);
ApResult average_precision(std::span<const ScoredPrediction> predictions, std::span<const GroundTruth> truths,
                           std::span<const double> falloff);

struct EvalResult {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar = 0.0;
  double pck = 0.0;
  double mean_oks = 0.0;
  std::vector<double> per_joint_err;  // mean normalized distance per joint
  double occluded_err = 0.0;           // mean over occluded labeled joints
  double visible_err = 0.0;            // mean over non-occluded labeled joints
  std::size_t occluded_count = 0;
  std::size_t visible_count = 0;
};

// Single-pose evaluation: predictions[i] and confidences[i] belong to
// samples[i]. Joint distances are Euclidean in normalized coordinates.
EvalResult evaluate(std::span<const Pose> predictions, std::span<const double> confidences,
                    std::span<const PoseSample> samples, const SkeletonSpec& skel, double pck_alpha = 0.1);

}  // namespace kplab
