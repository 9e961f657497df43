#include "kplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kplab {
namespace {

void check_pair(const Pose& pred, const Pose& gt) {
  if (pred.size() != gt.size() || gt.mask.size() != gt.size())
    throw Error(ErrorKind::ShapeMismatch, "prediction has " + std::to_string(pred.size()) + " joints, ground truth " +
                                              std::to_string(gt.size()));
}

double joint_distance(const Pose& a, const Pose& b, std::size_t j) {
  const double dx = a.coords[j].x - b.coords[j].x, dy = a.coords[j].y - b.coords[j].y;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

double oks(const Pose& pred, const Pose& gt, double area, std::span<const double> falloff) {
  check_pair(pred, gt);
  if (!(area > 0.0)) throw Error(ErrorKind::InvalidArgument, "OKS needs a positive area");
  if (falloff.size() != gt.size()) throw Error(ErrorKind::ShapeMismatch, "falloff count differs from joint count");
  double total = 0.0;
  std::size_t labeled = 0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (!gt.mask[j]) continue;
    const double dx = pred.coords[j].x - gt.coords[j].x, dy = pred.coords[j].y - gt.coords[j].y;
    total += std::exp(-(dx * dx + dy * dy) / (2.0 * area * falloff[j] * falloff[j]));
    ++labeled;
  }
  if (labeled == 0) throw Error(ErrorKind::NoLabeledJoints, "ground truth has no labeled joints");
  return total / static_cast<double>(labeled);
}

double pck(const Pose& pred, const Pose& gt, double alpha, double area) {
  check_pair(pred, gt);
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidArgument, "PCK alpha must be positive");
  if (!(area > 0.0)) throw Error(ErrorKind::InvalidArgument, "PCK needs a positive area");
  const double scale = std::sqrt(area);
  std::size_t hit = 0, labeled = 0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (!gt.mask[j]) continue;
    ++labeled;
    if (joint_distance(pred, gt, j) / scale < alpha) ++hit;
  }
  if (labeled == 0) throw Error(ErrorKind::NoLabeledJoints, "ground truth has no labeled joints");
  return static_cast<double>(hit) / static_cast<double>(labeled);
}

std::vector<double> default_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

ApResult average_precision(std::span<const ScoredPrediction> predictions, std::span<const GroundTruth> truths,
                           std::span<const double> falloff) {
  const auto t = default_oks_thresholds();
  return average_precision(predictions, truths, falloff, t);
}

ApResult average_precision(std::span<const ScoredPrediction> predictions, std::span<const GroundTruth> truths,
                           std::span<const double> falloff, std::span<const double> thresholds) {
  ApResult r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.ap_per_threshold.assign(thresholds.size(), 0.0);
  r.recall_per_threshold.assign(thresholds.size(), 0.0);
  const std::size_t n = predictions.size(), g = truths.size();

  if (n > 0 && g > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return predictions[a].score > predictions[b].score; });
    // OKS of every same-image pair; -1 marks pairs from different images.
    std::vector<double> sim(n * g, -1.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < g; ++q)
        if (predictions[p].image_id == truths[q].image_id)
          sim[p * g + q] = oks(predictions[p].pose, truths[q].pose, truths[q].area, falloff);

    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      const double thr = thresholds[ti];
      std::vector<bool> taken(g, false);
      std::vector<double> precision(n), recall(n);
      std::size_t tp = 0;
      for (std::size_t rank = 0; rank < n; ++rank) {
        const std::size_t p = order[rank];
        std::ptrdiff_t best = -1;
        double best_sim = thr;
        for (std::size_t q = 0; q < g; ++q) {
          const double s = sim[p * g + q];
          if (taken[q] || s < best_sim) continue;
          if (best < 0 || s > best_sim) {
            best = static_cast<std::ptrdiff_t>(q);
            best_sim = s;
          }
        }
        if (best >= 0) {
          taken[static_cast<std::size_t>(best)] = true;
          ++tp;
        }
        precision[rank] = static_cast<double>(tp) / static_cast<double>(rank + 1);
        recall[rank] = static_cast<double>(tp) / static_cast<double>(g);
      }
      for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
      double sum = 0.0;
      for (int ri = 0; ri <= 100; ++ri) {
        const double level = ri / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
      }
      r.ap_per_threshold[ti] = sum / 101.0;
      r.recall_per_threshold[ti] = static_cast<double>(tp) / static_cast<double>(g);
    }
  }

  if (!thresholds.empty()) {
    r.ap = std::accumulate(r.ap_per_threshold.begin(), r.ap_per_threshold.end(), 0.0) /
           static_cast<double>(thresholds.size());
    r.ar = std::accumulate(r.recall_per_threshold.begin(), r.recall_per_threshold.end(), 0.0) /
           static_cast<double>(thresholds.size());
  }
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    if (std::fabs(thresholds[ti] - 0.50) < 1e-9) r.ap50 = r.ap_per_threshold[ti];
    if (std::fabs(thresholds[ti] - 0.75) < 1e-9) r.ap75 = r.ap_per_threshold[ti];
  }
  return r;
}

EvalResult evaluate(std::span<const Pose> predictions, std::span<const double> confidences,
                    std::span<const PoseSample> samples, const SkeletonSpec& skel, double pck_alpha) {
  if (predictions.size() != samples.size() || confidences.size() != samples.size())
    throw Error(ErrorKind::ShapeMismatch, "evaluate: predictions, confidences and samples differ in length");
  EvalResult e;
  e.per_joint_err.assign(skel.k, 0.0);
  if (samples.empty()) return e;

  std::vector<ScoredPrediction> preds;
  std::vector<GroundTruth> truths;
  std::vector<std::size_t> joint_count(skel.k, 0);
  std::size_t hits = 0, labeled = 0;
  double occ_sum = 0.0, vis_sum = 0.0, oks_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& pred = predictions[i];
    check_pair(pred, s.gt_pose);
    if (pred.size() != skel.k) throw Error(ErrorKind::ShapeMismatch, "evaluate: pose does not match skeleton");
    preds.push_back({i, pred, confidences[i]});
    truths.push_back({i, s.gt_pose, s.area});
    oks_sum += oks(pred, s.gt_pose, s.area, skel.oks_falloff);
    const double scale = std::sqrt(s.area);
    for (std::size_t j = 0; j < skel.k; ++j) {
      if (!s.gt_pose.mask[j]) continue;
      const double d = joint_distance(pred, s.gt_pose, j);
      ++labeled;
      if (d / scale < pck_alpha) ++hits;
      e.per_joint_err[j] += d;
      ++joint_count[j];
      const bool hidden = j < s.meta.occluded.size() && s.meta.occluded[j];
      if (hidden) {
        occ_sum += d;
        ++e.occluded_count;
      } else {
        vis_sum += d;
        ++e.visible_count;
      }
    }
  }
  for (std::size_t j = 0; j < skel.k; ++j)
    if (joint_count[j]) e.per_joint_err[j] /= static_cast<double>(joint_count[j]);
  e.pck = labeled ? static_cast<double>(hits) / static_cast<double>(labeled) : 0.0;
  e.occluded_err = e.occluded_count ? occ_sum / static_cast<double>(e.occluded_count) : 0.0;
  e.visible_err = e.visible_count ? vis_sum / static_cast<double>(e.visible_count) : 0.0;
  e.mean_oks = oks_sum / static_cast<double>(samples.size());
  const auto ap = average_precision(preds, truths, skel.oks_falloff);
  e.ap = ap.ap;
  e.ap50 = ap.ap50;
  e.ap75 = ap.ap75;
  e.ar = ap.ar;
  return e;
}

}  // namespace kplab
