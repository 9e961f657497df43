#include "kplab/distill.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kplab/parallel.hpp"
#include "kplab/rng.hpp"

namespace kplab {

void Stage1LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error(ErrorKind::InvalidConfig, "alpha and beta must be non-negative");
  if (total_epochs < 1) throw Error(ErrorKind::InvalidConfig, "total epochs must be at least 1");
}

Tensor feature_distill_loss(const Tensor& f_tea, const Tensor& f_stu, const Tensor& align_kernels) {
  if (f_tea.rank() != 3 || f_stu.rank() != 3 || align_kernels.rank() != 4)
    throw Error(ErrorKind::ShapeMismatch, "feature maps must be [C,H,W] and the alignment [C,C',1,1]");
  if (f_tea.dim(1) != f_stu.dim(1) || f_tea.dim(2) != f_stu.dim(2))
    throw Error(ErrorKind::ShapeMismatch, "teacher map " + shape_str(f_tea.shape()) + " and student map " +
                                              shape_str(f_stu.shape()) + " differ spatially");
  if (align_kernels.dim(0) != f_tea.dim(0) || align_kernels.dim(1) != f_stu.dim(0) || align_kernels.dim(2) != 1 ||
      align_kernels.dim(3) != 1)
    throw Error(ErrorKind::ShapeMismatch, "alignment " + shape_str(align_kernels.shape()) + " does not map " +
                                              std::to_string(f_stu.dim(0)) + " to " + std::to_string(f_tea.dim(0)) +
                                              " channels");
  const Tensor aligned = ops::conv2d(f_stu, align_kernels, 1, 0);
  return ops::mean(ops::square(ops::sub(f_tea.detach(), aligned)));
}

namespace {

void check_pose_tensor(const Tensor& p, std::size_t k, const char* who) {
  if (p.rank() != 2 || p.dim(1) != 2 || p.dim(0) != k)
    throw Error(ErrorKind::ShapeMismatch, std::string(who) + " pose " + shape_str(p.shape()) + " is not [" +
                                              std::to_string(k) + ",2]");
}

}  // namespace

Tensor structure_constraint_loss(const Tensor& p_tea, const Tensor& p_stu, const SkeletonSpec& skel) {
  check_pose_tensor(p_tea, skel.k, "teacher");
  check_pose_tensor(p_stu, skel.k, "student");
  if (skel.edges.empty()) return Tensor::scalar(0.0);
  const Tensor e_tea = edge_lengths(p_tea.detach(), skel);
  const Tensor e_stu = edge_lengths(p_stu, skel);
  const Tensor w = Tensor::from(skel.edge_weights, {skel.edges.size()});
  return ops::sum(ops::mul(ops::abs(ops::sub(e_tea, e_stu)), w));
}

double structure_constraint_loss(const Pose& p_tea, const Pose& p_stu, const SkeletonSpec& skel) {
  return structure_constraint_loss(pose_to_tensor(p_tea), pose_to_tensor(p_stu), skel).item();
}

Tensor sample_pose_loss(const Tensor& p_tea, const Tensor& p_stu, const SkeletonSpec& skel, bool with_structure) {
  check_pose_tensor(p_tea, skel.k, "teacher");
  check_pose_tensor(p_stu, skel.k, "student");
  Tensor l = ops::sum(ops::abs(ops::sub(p_tea.detach(), p_stu)));
  if (with_structure) l = ops::add(l, structure_constraint_loss(p_tea, p_stu, skel));
  return l;
}

Tensor pose_distill_loss(std::span<const Tensor> p_tea, std::span<const Tensor> p_stu, const SkeletonSpec& skel,
                         bool with_structure) {
  if (p_tea.size() != p_stu.size() || p_tea.empty())
    throw Error(ErrorKind::ShapeMismatch, "pose batches must be non-empty and of equal length");
  Tensor total = sample_pose_loss(p_tea[0], p_stu[0], skel, with_structure);
  for (std::size_t n = 1; n < p_tea.size(); ++n)
    total = ops::add(total, sample_pose_loss(p_tea[n], p_stu[n], skel, with_structure));
  return ops::scale(total, 1.0 / static_cast<double>(p_tea.size()));
}

double pose_distill_loss(std::span<const Pose> p_tea, std::span<const Pose> p_stu, const SkeletonSpec& skel,
                         bool with_structure) {
  std::vector<Tensor> a, b;
  for (const auto& p : p_tea) a.push_back(pose_to_tensor(p));
  for (const auto& p : p_stu) b.push_back(pose_to_tensor(p));
  return pose_distill_loss(a, b, skel, with_structure).item();
}

double decay_weight(std::size_t t, std::size_t total) {
  if (total < 1 || t < 1 || t > total)
    throw Error(ErrorKind::EpochOutOfRange, "epoch " + std::to_string(t) + " outside [1, " + std::to_string(total) + "]");
  return 1.0 - static_cast<double>(t - 1) / static_cast<double>(total);
}

Tensor stage1_total_loss(const Tensor& l_kl, const Tensor& l_fea, const Tensor& l_pos, const Stage1LossWeights& w,
                         std::size_t t) {
  const double g = decay_weight(t, w.total_epochs);
  return ops::add(ops::add(l_kl, ops::scale(l_fea, g * w.alpha)), ops::scale(l_pos, g * w.beta));
}

double stage1_total_loss(double l_kl, double l_fea, double l_pos, const Stage1LossWeights& w, std::size_t t) {
  const double g = decay_weight(t, w.total_epochs);
  return l_kl + g * w.alpha * l_fea + g * w.beta * l_pos;
}

void TrainConfig::validate() const {
  weights().validate();
  if (batch == 0) throw Error(ErrorKind::InvalidConfig, "batch must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
  if (!(smoothing >= 0.0) || smoothing >= 1.0) throw Error(ErrorKind::InvalidConfig, "smoothing must be in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"lr_steps", lr_steps},
          {"epsilon_smoothing", smoothing},
          {"alpha", alpha},
          {"beta", beta},
          {"scheme", {{"feature", flags.feature}, {"pose_l1", flags.pose_l1}, {"skeleton", flags.skeleton}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.lr_steps = j.value("lr_steps", c.lr_steps);
    c.smoothing = j.value("epsilon_smoothing", c.smoothing);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    if (j.contains("scheme")) {
      const auto& s = j["scheme"];
      c.flags.feature = s.value("feature", false);
      c.flags.pose_l1 = s.value("pose_l1", false);
      c.flags.skeleton = s.value("skeleton", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string Stage1Report::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,l_kl,l_fea,l_pos,gamma,l_total,val_pck,val_oks\n";
  for (const auto& r : records)
    os << r.epoch << ',' << r.l_kl << ',' << r.l_fea << ',' << r.l_pos << ',' << r.gamma << ',' << r.l_total << ','
       << r.val_pck << ',' << r.val_oks << '\n';
  return os.str();
}

nlohmann::json Stage1Report::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records)
    rows.push_back({{"epoch", r.epoch}, {"l_kl", r.l_kl}, {"l_fea", r.l_fea}, {"l_pos", r.l_pos}, {"gamma", r.gamma},
                    {"l_total", r.l_total}, {"val_pck", r.val_pck}, {"val_oks", r.val_oks}});
  return {{"records", rows}};
}

Stage1Report Stage1Report::from_json(const nlohmann::json& j) {
  Stage1Report rep;
  for (const auto& r : j.at("records"))
    rep.records.push_back({r.at("epoch").get<std::size_t>(), r.at("l_kl").get<double>(), r.at("l_fea").get<double>(),
                           r.at("l_pos").get<double>(), r.at("gamma").get<double>(), r.at("l_total").get<double>(),
                           r.at("val_pck").get<double>(), r.at("val_oks").get<double>()});
  return rep;
}

PoseNet posenet_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("backbone"))
    throw Error(ErrorKind::CheckpointMismatch, "checkpoint of kind '" + ckpt.kind + "' carries no backbone config");
  PoseNet net{BackboneConfig::from_json(ckpt.config["backbone"]), ckpt.params};
  const auto ref = init_posenet(net.config, 0);
  for (const auto& [name, t] : ref.entries())
    if (!net.params.contains(name) || net.params.get(name).shape() != t.shape())
      throw Error(ErrorKind::CheckpointMismatch, "checkpoint parameter " + name + " is missing or misshapen");
  return net;
}

Checkpoint posenet_checkpoint(const std::string& kind, const PoseNet& net) {
  Checkpoint c;
  c.kind = kind;
  c.config = {{"backbone", net.config.to_json()}};
  c.params = net.params;
  return c;
}

std::vector<Prediction> predict_dataset(const PoseNet& net, const Dataset& data) {
  std::vector<Prediction> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) { out[i] = predict(net, data[i].image); });
  return out;
}

EvalResult evaluate_posenet(const PoseNet& net, const Dataset& data, const SkeletonSpec& skel) {
  const auto preds = predict_dataset(net, data);
  std::vector<Pose> poses;
  std::vector<double> conf;
  for (const auto& p : preds) {
    poses.push_back(p.pose);
    conf.push_back(p.confidence);
  }
  return evaluate(poses, conf, data, skel);
}

namespace {

// KL against the encoded labels, restricted to labeled joints.
struct KlTarget {
  SimCCTargets targets;
  std::vector<std::size_t> rows;  // labeled joints; empty when all are
};

KlTarget make_target(const PoseSample& s, const BackboneConfig& c, double smoothing) {
  KlTarget t;
  Pose labeled;
  bool all = true;
  for (std::size_t j = 0; j < s.gt_pose.size(); ++j) {
    if (s.gt_pose.mask[j]) {
      t.rows.push_back(j);
      labeled.coords.push_back(s.gt_pose.coords[j]);
      labeled.mask.push_back(true);
    } else {
      all = false;
    }
  }
  if (t.rows.empty()) throw Error(ErrorKind::NoLabeledJoints, "sample " + std::to_string(s.meta.id) + " has no labels");
  if (all) t.rows.clear();
  t.targets = encode_simcc_targets(labeled, smoothing, c.x_bins(), c.y_bins());
  return t;
}

Tensor kl_term(const SimCCLogits& logits, const KlTarget& t) {
  if (t.rows.empty()) return simcc_kl_loss(logits, t.targets);
  SimCCLogits sub{ops::gather_rows(logits.x_logits, t.rows), ops::gather_rows(logits.y_logits, t.rows), logits.k_split};
  return simcc_kl_loss(sub, t.targets);
}

struct SampleOut {
  double kl = 0.0, fea = 0.0, pos = 0.0, total = 0.0;
  GradMap grads;
};

bool grads_finite(const GradMap& g) {
  for (const auto& [_, t] : g)
    if (!all_finite(t.data())) return false;
  return true;
}

void emit(const TrainConfig& c, const std::string& line) {
  if (c.log) c.log(line);
}

TrainResult train_loop(const std::string& kind, const BackboneConfig& bc, ParamSet params, const Dataset& train,
                       const Dataset& val, const SkeletonSpec& skel, const TrainConfig& tc,
                       const TeacherOutputs* teacher) {
  const auto weights = tc.weights();
  const bool use_fea = teacher && tc.flags.feature;
  const bool use_pos = teacher && tc.flags.pose();
  const bool with_cst = tc.flags.skeleton;

  std::vector<KlTarget> targets(train.size());
  parallel_for(train.size(), [&](std::size_t i) { targets[i] = make_target(train[i], bc, tc.smoothing); });

  AdamOptimizer adam(AdamConfig{tc.lr});
  Rng shuffle(Rng::derive(tc.seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::size_t bad_steps = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    double lr = tc.lr;
    for (auto s : tc.lr_steps)
      if (epoch > s) lr *= 0.1;
    adam.set_learning_rate(lr);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    const double gamma = decay_weight(epoch, tc.epochs);
    Stage1Record rec;
    rec.epoch = epoch;
    rec.gamma = gamma;

    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t b = std::min(tc.batch, order.size() - start);
      std::vector<SampleOut> outs(b);
      parallel_for(b, [&](std::size_t slot) {
        const std::size_t i = order[start + slot];
        Tape tape;
        const ParamSet p = params.watched(tape);
        const auto bo = forward_backbone(bc, p, train[i].image);
        const auto logits = simcc_heads(bc, bo.feature, p);
        const Tensor l_kl = kl_term(logits, targets[i]);
        Tensor total = l_kl;
        auto& o = outs[slot];
        o.kl = l_kl.item();
        if (use_fea) {
          const Tensor l_fea = feature_distill_loss(teacher->feature[i], bo.feature, p.get("align.w"));
          o.fea = l_fea.item();
          total = ops::add(total, ops::scale(l_fea, gamma * weights.alpha));
        }
        if (use_pos) {
          const Tensor l_pos = sample_pose_loss(teacher->pose[i], soft_argmax(logits), skel, with_cst);
          o.pos = l_pos.item();
          total = ops::add(total, ops::scale(l_pos, gamma * weights.beta));
        }
        o.total = total.item();
        if (std::isfinite(o.total)) o.grads = collect_grads(tape.backward(total), p);
      });

      GradMap g;
      bool finite = true;
      double kl = 0.0, fea = 0.0, pos = 0.0, tot = 0.0;
      for (const auto& o : outs) {
        finite = finite && std::isfinite(o.total) && grads_finite(o.grads);
        if (!finite) break;
        accumulate(g, o.grads, 1.0 / static_cast<double>(b));
        kl += o.kl;
        fea += o.fea;
        pos += o.pos;
        tot += o.total;
      }
      if (!finite) {
        if (++bad_steps >= 3)
          throw Error(ErrorKind::DivergenceDetected,
                      kind + ": non-finite loss for 3 consecutive steps at epoch " + std::to_string(epoch));
        continue;
      }
      bad_steps = 0;
      adam.step(params, g);
      const double share = static_cast<double>(b) / static_cast<double>(train.size());
      rec.l_kl += kl / static_cast<double>(b) * share;
      rec.l_fea += fea / static_cast<double>(b) * share;
      rec.l_pos += pos / static_cast<double>(b) * share;
      rec.l_total += tot / static_cast<double>(b) * share;
    }

    if (!val.empty()) {
      result.validation = evaluate_posenet(PoseNet{bc, params}, val, skel);
      rec.val_pck = result.validation.pck;
      rec.val_oks = result.validation.mean_oks;
    }
    result.report.records.push_back(rec);
    std::ostringstream line;
    line << kind << " epoch " << epoch << "/" << tc.epochs << " kl=" << rec.l_kl << " fea=" << rec.l_fea
         << " pos=" << rec.l_pos << " total=" << rec.l_total << " val_pck=" << rec.val_pck << " val_oks=" << rec.val_oks;
    emit(tc, line.str());
  }

  auto& ck = result.checkpoint;
  ck.kind = kind;
  ck.config = {{"backbone", bc.to_json()}, {"train", tc.to_json()}};
  ck.params = std::move(params);
  ck.state = {{"epochs_completed", tc.epochs},
              {"optimizer_steps", adam.step_count()},
              {"val_pck", result.validation.pck},
              {"val_oks", result.validation.mean_oks},
              {"val_ap", result.validation.ap}};
  return result;
}

}  // namespace

TrainResult train_teacher(const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                          const SkeletonSpec& skel, const TrainConfig& config) {
  config.validate();
  backbone.validate();
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  return train_loop("teacher", backbone, init_posenet(backbone, Rng::derive(config.seed, 1)), train, val, skel, config,
                    nullptr);
}

TeacherOutputs teacher_outputs(const PoseNet& teacher, const Dataset& data, bool with_features) {
  const auto& tc = teacher.config;
  TeacherOutputs out;
  out.pose.resize(data.size());
  if (with_features) out.feature.resize(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto bo = forward_backbone(tc, teacher.params, data[i].image);
    out.pose[i] = pose_to_tensor(decode_simcc(simcc_heads(tc, bo.feature, teacher.params)));
    if (with_features) out.feature[i] = bo.feature;
  });
  return out;
}

TrainResult run_stage1(const Checkpoint& teacher, const BackboneConfig& student, const Dataset& train,
                       const Dataset& val, const SkeletonSpec& skel, const TrainConfig& config,
                       const TeacherOutputs* precomputed) {
  config.validate();
  student.validate();
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  const PoseNet tnet = posenet_from_checkpoint(teacher);
  const auto& tc = tnet.config;
  if (tc.image_channels != student.image_channels || tc.image_height != student.image_height ||
      tc.image_width != student.image_width || tc.internal_height != student.internal_height ||
      tc.internal_width != student.internal_width || tc.joints != student.joints || tc.k_split != student.k_split)
    throw Error(ErrorKind::CheckpointMismatch, "teacher and student input extents differ");

  ParamSet params = init_posenet(student, Rng::derive(config.seed, 1));
  if (!config.flags.any()) {
    auto r = train_loop("student", student, std::move(params), train, val, skel, config, nullptr);
    r.checkpoint.state["teacher_hash"] = hex64(checkpoint_hash(teacher));
    return r;
  }

  if (config.flags.feature) {
    Rng rng(Rng::derive(config.seed, 3));
    const std::size_t cs = student.widths[2], ct = tc.widths[2];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cs));
    std::vector<double> w(ct * cs);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    params.add("align.w", Tensor::from(std::move(w), {ct, cs, 1, 1}));
  }

  TeacherOutputs computed;
  if (precomputed) {
    if (precomputed->pose.size() != train.size() ||
        (config.flags.feature && precomputed->feature.size() != train.size()))
      throw Error(ErrorKind::ShapeMismatch, "precomputed teacher outputs do not cover the training set");
  } else {
    computed = teacher_outputs(tnet, train, config.flags.feature);
  }
  auto r = train_loop("student", student, std::move(params), train, val, skel, config,
                      precomputed ? precomputed : &computed);
  r.checkpoint.state["teacher_hash"] = hex64(checkpoint_hash(teacher));
  return r;
}

}  // namespace kplab
