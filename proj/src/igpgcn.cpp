#include "kplab/igpgcn.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "kplab/distill.hpp"
#include "kplab/parallel.hpp"
#include "kplab/rng.hpp"

namespace kplab {

Tensor normalized_adjacency(const SkeletonSpec& skel) {
  const std::size_t k = skel.k;
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "skeleton has no joints");
  std::vector<double> deg(k);
  for (std::size_t i = 0; i < k; ++i) deg[i] = 1.0 + static_cast<double>(skel.degree(i));
  std::vector<double> a(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i == j || skel.adjacent(i, j)) a[i * k + j] = 1.0 / std::sqrt(deg[i] * deg[j]);
  return Tensor::from(std::move(a), {k, k});
}

Tensor graph_conv(const Tensor& x, const Tensor& a_hat, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || a_hat.rank() != 2 || w.rank() != 2 || b.rank() != 1 || a_hat.dim(0) != a_hat.dim(1) ||
      a_hat.dim(1) != x.dim(0) || w.dim(0) != x.dim(1) || b.dim(0) != w.dim(1))
    throw Error(ErrorKind::ShapeMismatch, "graph_conv: x " + shape_str(x.shape()) + ", adjacency " +
                                              shape_str(a_hat.shape()) + ", weight " + shape_str(w.shape()) +
                                              ", bias " + shape_str(b.shape()));
  return ops::relu(ops::add_row_bias(ops::matmul(ops::matmul(a_hat, x), w), b));
}

JointFeatures gather_joint_features(const FeaturePyramid& pyramid, const Pose& pose) {
  JointFeatures f;
  for (std::size_t i = 0; i < 3; ++i) f.levels[i] = ops::bilinear_sample(pyramid.levels[i], pose.coords);
  return f;
}

void IgpGcnConfig::validate() const {
  if (joints == 0 || node_width == 0) throw Error(ErrorKind::InvalidConfig, "igpgcn: joints and node width must be positive");
  for (auto w : feature_widths)
    if (w == 0) throw Error(ErrorKind::InvalidConfig, "igpgcn: feature widths must be positive");
}

nlohmann::json IgpGcnConfig::to_json() const {
  return {{"joints", joints}, {"feature_widths", feature_widths}, {"node_width", node_width}, {"regather", regather}};
}

IgpGcnConfig IgpGcnConfig::from_json(const nlohmann::json& j) {
  IgpGcnConfig c;
  try {
    c.joints = j.value("joints", c.joints);
    if (j.contains("feature_widths")) c.feature_widths = j["feature_widths"].get<std::array<std::size_t, 3>>();
    c.node_width = j.value("node_width", c.node_width);
    c.regather = j.value("regather", c.regather);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("igpgcn config: ") + e.what());
  }
  c.validate();
  return c;
}

ParamSet init_igpgcn(const IgpGcnConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamSet p;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, bool zero) {
    std::vector<double> w(in * out, 0.0);
    if (!zero) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (auto& v : w) v = rng.uniform(-bound, bound);
    }
    p.add(name + ".w", Tensor::from(std::move(w), {in, out}));
    p.add(name + ".b", Tensor::zeros({out}));
  };
  const std::size_t d = c.node_width;
  linear("embed", 2, d, false);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string b = "block" + std::to_string(i + 1);
    linear(b + ".gate", c.feature_widths[i], d, false);
    linear(b + ".proj", c.feature_widths[i], d, false);
    linear(b + ".gc1", d, d, false);
    linear(b + ".gc2", d, d, false);
    linear(b + ".head", d, 2, true);
  }
  return p;
}

namespace {

using FeatureSource = std::function<Tensor(std::size_t level, const Tensor& pose)>;

Tensor linear(const Tensor& x, const ParamSet& p, const std::string& name) {
  return ops::add_row_bias(ops::matmul(x, p.get(name + ".w")), p.get(name + ".b"));
}

IgpOutput forward_impl(const IgpGcnConfig& c, const ParamSet& p, const Tensor& a_hat, const Tensor& p_init,
                       const FeatureSource& features_at) {
  if (p_init.rank() != 2 || p_init.dim(0) != c.joints || p_init.dim(1) != 2)
    throw Error(ErrorKind::ShapeMismatch, "initial pose " + shape_str(p_init.shape()) + " is not [" +
                                              std::to_string(c.joints) + ",2]");
  if (a_hat.rank() != 2 || a_hat.dim(0) != c.joints || a_hat.dim(1) != c.joints)
    throw Error(ErrorKind::ShapeMismatch, "adjacency " + shape_str(a_hat.shape()) + " does not match joint count");
  IgpOutput out;
  Tensor x = graph_conv(p_init, a_hat, p.get("embed.w"), p.get("embed.b"));
  Tensor pose = p_init;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string b = "block" + std::to_string(i + 1);
    const Tensor j = features_at(i, pose);
    if (j.rank() != 2 || j.dim(0) != c.joints || j.dim(1) != c.feature_widths[i])
      throw Error(ErrorKind::ShapeMismatch, "joint features " + shape_str(j.shape()) + " at level " +
                                                std::to_string(i + 1) + " do not match config");
    const Tensor gate = ops::sigmoid(linear(j, p, b + ".gate"));
    const Tensor fused = ops::add(x, ops::mul(gate, linear(j, p, b + ".proj")));
    const Tensor h1 = graph_conv(fused, a_hat, p.get(b + ".gc1.w"), p.get(b + ".gc1.b"));
    const Tensor h2 = graph_conv(h1, a_hat, p.get(b + ".gc2.w"), p.get(b + ".gc2.b"));
    x = ops::add(fused, h2);
    pose = ops::add(pose, linear(x, p, b + ".head"));
    out.poses[i] = pose;
  }
  return out;
}

}  // namespace

IgpOutput igp_forward(const IgpGcnConfig& c, const ParamSet& p, const Tensor& a_hat, const Tensor& p_init,
                      const JointFeatures& features) {
  return forward_impl(c, p, a_hat, p_init, [&](std::size_t i, const Tensor&) { return features.levels[i]; });
}

IgpOutput igp_forward_regather(const IgpGcnConfig& c, const ParamSet& p, const Tensor& a_hat, const Tensor& p_init,
                               const FeaturePyramid& pyramid) {
  return forward_impl(c, p, a_hat, p_init, [&](std::size_t i, const Tensor& pose) {
    return ops::bilinear_sample(pyramid.levels[i], pose_from_tensor(pose.detach()).coords);
  });
}

void Stage2LossWeights::validate() const {
  if (!(delta >= 0.0) || !(lambda >= 0.0) || !(xi >= 0.0))
    throw Error(ErrorKind::InvalidConfig, "stage-2 weights must be non-negative");
  if (delta == 0.0 && lambda == 0.0 && xi == 0.0)
    throw Error(ErrorKind::InvalidConfig, "at least one stage-2 weight must be positive");
}

std::array<Tensor, 3> sample_stage2_levels(const Tensor& target, const IgpOutput& out, const Tensor& mask) {
  if (target.shape() != mask.shape()) throw Error(ErrorKind::ShapeMismatch, "target and mask shapes differ");
  std::array<Tensor, 3> l;
  for (std::size_t i = 0; i < 3; ++i) {
    if (out.poses[i].shape() != target.shape())
      throw Error(ErrorKind::ShapeMismatch, "refined pose " + shape_str(out.poses[i].shape()) + " vs target " +
                                                shape_str(target.shape()));
    l[i] = ops::sum(ops::abs(ops::mul(ops::sub(target.detach(), out.poses[i]), mask)));
  }
  return l;
}

Stage2Loss stage2_loss(std::span<const Tensor> targets, std::span<const IgpOutput> outputs,
                       std::span<const Tensor> masks, const Stage2LossWeights& w) {
  if (targets.empty() || targets.size() != outputs.size() || targets.size() != masks.size())
    throw Error(ErrorKind::ShapeMismatch, "stage-2 batches must be non-empty and of equal length");
  w.validate();
  Stage2Loss r;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const auto l = sample_stage2_levels(targets[n], outputs[n], masks[n]);
    for (std::size_t i = 0; i < 3; ++i) r.levels[i] = n == 0 ? l[i] : ops::add(r.levels[i], l[i]);
  }
  const double inv = 1.0 / static_cast<double>(targets.size());
  for (auto& l : r.levels) l = ops::scale(l, inv);
  r.total = ops::add(ops::add(ops::scale(r.levels[0], w.delta), ops::scale(r.levels[1], w.lambda)),
                     ops::scale(r.levels[2], w.xi));
  return r;
}

void Stage2Config::validate() const {
  weights.validate();
  if (batch == 0) throw Error(ErrorKind::InvalidConfig, "batch must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
  if (node_width == 0) throw Error(ErrorKind::InvalidConfig, "node width must be positive");
}

nlohmann::json Stage2Config::to_json() const {
  return {{"seed", seed},
          {"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"delta", weights.delta},
          {"lambda", weights.lambda},
          {"xi", weights.xi},
          {"node_width", node_width},
          {"regather", regather},
          {"target", target == Stage2Target::Teacher ? "teacher" : "ground_truth"}};
}

Stage2Config Stage2Config::from_json(const nlohmann::json& j) {
  Stage2Config c;
  try {
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.weights.delta = j.value("delta", c.weights.delta);
    c.weights.lambda = j.value("lambda", c.weights.lambda);
    c.weights.xi = j.value("xi", c.weights.xi);
    c.node_width = j.value("node_width", c.node_width);
    c.regather = j.value("regather", c.regather);
    const auto t = j.value("target", std::string("teacher"));
    if (t == "teacher")
      c.target = Stage2Target::Teacher;
    else if (t == "ground_truth")
      c.target = Stage2Target::GroundTruth;
    else
      throw Error(ErrorKind::InvalidConfig, "stage-2 target must be 'teacher' or 'ground_truth', got '" + t + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("stage-2 config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string Stage2Report::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,l1_gcn,l2_gcn,l3_gcn,l_total,val_oks_p3,val_occluded_err\n";
  for (const auto& r : records)
    os << r.epoch << ',' << r.l1_gcn << ',' << r.l2_gcn << ',' << r.l3_gcn << ',' << r.l_total << ',' << r.val_oks_p3
       << ',' << r.val_occluded_err << '\n';
  return os.str();
}

nlohmann::json Stage2Report::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records)
    rows.push_back({{"epoch", r.epoch}, {"l1_gcn", r.l1_gcn}, {"l2_gcn", r.l2_gcn}, {"l3_gcn", r.l3_gcn},
                    {"l_total", r.l_total}, {"val_oks_p3", r.val_oks_p3}, {"val_occluded_err", r.val_occluded_err}});
  return {{"records", rows}};
}

Stage2Report Stage2Report::from_json(const nlohmann::json& j) {
  Stage2Report rep;
  for (const auto& r : j.at("records"))
    rep.records.push_back({r.at("epoch").get<std::size_t>(), r.at("l1_gcn").get<double>(), r.at("l2_gcn").get<double>(),
                           r.at("l3_gcn").get<double>(), r.at("l_total").get<double>(),
                           r.at("val_oks_p3").get<double>(), r.at("val_occluded_err").get<double>()});
  return rep;
}

namespace {

struct Prepared {
  Tensor p_init;
  Pose init_pose;
  double confidence = 0.0;
  JointFeatures features;
  FeaturePyramid pyramid;  // only kept when re-gathering
  Tensor target;
  Tensor mask;
};

std::vector<Prepared> prepare(const PoseNet& student, const PoseNet* teacher, const Dataset& data, bool regather,
                              bool need_target, std::span<const Tensor> teacher_poses = {}) {
  std::vector<Prepared> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    auto& r = out[i];
    const auto bo = forward_backbone(student.config, student.params, data[i].image);
    const auto logits = simcc_heads(student.config, bo.feature, student.params);
    r.init_pose = student.config.expectation_decode ? decode_simcc_expectation(logits) : decode_simcc(logits);
    r.confidence = simcc_confidence(logits);
    r.p_init = pose_to_tensor(r.init_pose);
    if (regather)
      r.pyramid = bo.pyramid;
    else
      r.features = gather_joint_features(bo.pyramid, r.init_pose);
    r.mask = mask_to_tensor(data[i].gt_pose);
    if (!need_target) return;
    if (!teacher_poses.empty()) {
      r.target = teacher_poses[i];
    } else if (teacher) {
      const auto to = forward_backbone(teacher->config, teacher->params, data[i].image);
      r.target = pose_to_tensor(decode_simcc(simcc_heads(teacher->config, to.feature, teacher->params)));
    } else {
      r.target = pose_to_tensor(data[i].gt_pose);
    }
  });
  return out;
}

IgpOutput run_forward(const IgpGcnConfig& c, const ParamSet& p, const Tensor& a_hat, const Prepared& s) {
  return c.regather ? igp_forward_regather(c, p, a_hat, s.p_init, s.pyramid) : igp_forward(c, p, a_hat, s.p_init, s.features);
}

EvalResult evaluate_refined(const IgpGcnConfig& c, const ParamSet& p, const Tensor& a_hat,
                            const std::vector<Prepared>& prep, const Dataset& data, const SkeletonSpec& skel,
                            bool refined) {
  std::vector<Pose> poses(prep.size());
  std::vector<double> conf(prep.size());
  parallel_for(prep.size(), [&](std::size_t i) {
    poses[i] = refined ? pose_from_tensor(run_forward(c, p, a_hat, prep[i]).poses[2]) : prep[i].init_pose;
    conf[i] = prep[i].confidence;
  });
  return evaluate(poses, conf, data, skel);
}

}  // namespace

Stage2Result run_stage2(const Checkpoint* teacher, const Checkpoint& student, const Dataset& train, const Dataset& val,
                        const SkeletonSpec& skel, const Stage2Config& config,
                        std::span<const Tensor> teacher_poses) {
  config.validate();
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  const PoseNet snet = posenet_from_checkpoint(student);
  if (snet.config.joints != skel.k) throw Error(ErrorKind::CheckpointMismatch, "student joint count differs from skeleton");
  std::optional<PoseNet> tnet;
  if (config.target == Stage2Target::Teacher) {
    if (!teacher) throw Error(ErrorKind::InvalidArgument, "teacher-supervised stage 2 needs a teacher checkpoint");
    tnet = posenet_from_checkpoint(*teacher);
    const auto& a = tnet->config;
    const auto& b = snet.config;
    if (a.image_channels != b.image_channels || a.image_height != b.image_height || a.image_width != b.image_width ||
        a.joints != b.joints)
      throw Error(ErrorKind::CheckpointMismatch, "teacher and student input extents differ");
  }

  IgpGcnConfig gc;
  gc.joints = skel.k;
  gc.feature_widths = snet.config.widths;
  gc.node_width = config.node_width;
  gc.regather = config.regather;
  ParamSet params = init_igpgcn(gc, Rng::derive(config.seed, 1));
  const Tensor a_hat = normalized_adjacency(skel);
  const auto& w = config.weights;

  if (!tnet) teacher_poses = {};
  if (!teacher_poses.empty() && teacher_poses.size() != train.size())
    throw Error(ErrorKind::ShapeMismatch, "teacher poses do not cover the training set");
  const auto train_prep = prepare(snet, tnet ? &*tnet : nullptr, train, gc.regather, true, teacher_poses);
  const auto val_prep = prepare(snet, nullptr, val, gc.regather, false);

  Stage2Result result;
  if (!val.empty()) result.val_init = evaluate_refined(gc, params, a_hat, val_prep, val, skel, false);

  struct SampleOut {
    std::array<double, 3> l{};
    double total = 0.0;
    GradMap grads;
  };
  auto sample = [&](std::size_t i, bool with_grad, SampleOut& o) {
    Tape tape;
    const ParamSet p = with_grad ? params.watched(tape) : params;
    const auto out = run_forward(gc, p, a_hat, train_prep[i]);
    const auto l = sample_stage2_levels(train_prep[i].target, out, train_prep[i].mask);
    const Tensor total =
        ops::add(ops::add(ops::scale(l[0], w.delta), ops::scale(l[1], w.lambda)), ops::scale(l[2], w.xi));
    for (std::size_t k = 0; k < 3; ++k) o.l[k] = l[k].item();
    o.total = total.item();
    if (with_grad && std::isfinite(o.total)) o.grads = collect_grads(tape.backward(total), p);
  };
  auto record_val = [&](Stage2Record& rec) {
    if (val.empty()) return;
    result.val_refined = evaluate_refined(gc, params, a_hat, val_prep, val, skel, true);
    rec.val_oks_p3 = result.val_refined.mean_oks;
    rec.val_occluded_err = result.val_refined.occluded_err;
  };
  auto log = [&](const Stage2Record& rec) {
    if (!config.log) return;
    std::ostringstream os;
    os << "igpgcn epoch " << rec.epoch << "/" << config.epochs << " l1=" << rec.l1_gcn << " l2=" << rec.l2_gcn
       << " l3=" << rec.l3_gcn << " total=" << rec.l_total << " val_oks_p3=" << rec.val_oks_p3
       << " val_occluded_err=" << rec.val_occluded_err;
    config.log(os.str());
  };

  {
    Stage2Record rec;
    std::vector<SampleOut> outs(train.size());
    parallel_for(train.size(), [&](std::size_t i) { sample(i, false, outs[i]); });
    for (const auto& o : outs) {
      rec.l1_gcn += o.l[0];
      rec.l2_gcn += o.l[1];
      rec.l3_gcn += o.l[2];
      rec.l_total += o.total;
    }
    const double n = static_cast<double>(train.size());
    rec.l1_gcn /= n;
    rec.l2_gcn /= n;
    rec.l3_gcn /= n;
    rec.l_total /= n;
    record_val(rec);
    result.report.records.push_back(rec);
    log(rec);
  }

  AdamOptimizer adam(AdamConfig{config.lr});
  Rng shuffle(Rng::derive(config.seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t bad_steps = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    Stage2Record rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t b = std::min(config.batch, order.size() - start);
      std::vector<SampleOut> outs(b);
      parallel_for(b, [&](std::size_t slot) { sample(order[start + slot], true, outs[slot]); });
      GradMap g;
      bool finite = true;
      for (const auto& o : outs) {
        finite = std::isfinite(o.total);
        for (const auto& [_, t] : o.grads) finite = finite && all_finite(t.data());
        if (!finite) break;
        accumulate(g, o.grads, 1.0 / static_cast<double>(b));
      }
      if (!finite) {
        if (++bad_steps >= 3)
          throw Error(ErrorKind::DivergenceDetected,
                      "igpgcn: non-finite loss for 3 consecutive steps at epoch " + std::to_string(epoch));
        continue;
      }
      bad_steps = 0;
      adam.step(params, g);
      const double share = 1.0 / static_cast<double>(train.size());
      for (const auto& o : outs) {
        rec.l1_gcn += o.l[0] * share;
        rec.l2_gcn += o.l[1] * share;
        rec.l3_gcn += o.l[2] * share;
        rec.l_total += o.total * share;
      }
    }
    record_val(rec);
    result.report.records.push_back(rec);
    log(rec);
  }

  auto& ck = result.checkpoint;
  ck.kind = "igpgcn";
  ck.config = {{"gcn", gc.to_json()}, {"stage2", config.to_json()}};
  ck.params = std::move(params);
  ck.state = {{"epochs_completed", config.epochs},
              {"optimizer_steps", adam.step_count()},
              {"student_hash", hex64(checkpoint_hash(student))},
              {"val_init_oks", result.val_init.mean_oks},
              {"val_init_occluded_err", result.val_init.occluded_err},
              {"val_oks_p3", result.val_refined.mean_oks},
              {"val_occluded_err", result.val_refined.occluded_err},
              {"val_ap_p3", result.val_refined.ap}};
  if (teacher) ck.state["teacher_hash"] = hex64(checkpoint_hash(*teacher));
  return result;
}

std::vector<RefinedPrediction> refine_dataset(const PoseNet& student, const Checkpoint& gcn, const Dataset& data,
                                              const SkeletonSpec& skel) {
  if (gcn.kind != "igpgcn" || !gcn.config.contains("gcn"))
    throw Error(ErrorKind::CheckpointMismatch, "expected an igpgcn checkpoint, got kind '" + gcn.kind + "'");
  const auto gc = IgpGcnConfig::from_json(gcn.config["gcn"]);
  if (gc.joints != skel.k || gc.feature_widths != student.config.widths)
    throw Error(ErrorKind::CheckpointMismatch, "igpgcn checkpoint does not fit this student");
  const Tensor a_hat = normalized_adjacency(skel);
  const auto prep = prepare(student, nullptr, data, gc.regather, false);
  std::vector<RefinedPrediction> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    out[i].initial = prep[i].init_pose;
    out[i].refined = pose_from_tensor(run_forward(gc, gcn.params, a_hat, prep[i]).poses[2]);
    out[i].confidence = prep[i].confidence;
  });
  return out;
}

}  // namespace kplab
