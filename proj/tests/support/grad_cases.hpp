#pragma once

#include <vector>

#include "gradcheck.hpp"
#include "kplab/distill.hpp"
#include "kplab/igpgcn.hpp"
#include "kplab/posenet.hpp"

namespace kplab::testing {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Random connected graph on k joints: a random tree plus a few extra edges.
inline SkeletonSpec random_skeleton(Rng& rng, std::size_t k) {
  std::vector<Edge> edges;
  for (std::size_t j = 1; j < k; ++j) edges.emplace_back(rng.below(j), j);
  for (std::size_t extra = 0; extra < k / 2; ++extra) {
    const std::size_t a = rng.below(k), b = rng.below(k);
    if (a == b) continue;
    const Edge e{std::min(a, b), std::max(a, b)};
    if (std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(e);
  }
  std::vector<double> w(edges.size());
  for (auto& x : w) x = rng.uniform(0.2, 1.0);
  return build_skeleton(edges, k, std::vector<double>(k, 0.08), w);
}

inline Tensor random_distribution(Rng& rng, std::size_t rows, std::size_t cols) {
  return ops::softmax_axis(random_tensor(rng, {rows, cols}, -2.0, 2.0), 1);
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto add = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };

  add("matmul", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t m = pick(r, 1, 5), k = pick(r, 1, 5), n = pick(r, 1, 5);
    in = {random_tensor(r, {m, k}), random_tensor(r, {k, n})};
    f = [](const std::vector<Tensor>& x) { return weighted_sum(ops::matmul(x[0], x[1]), 1); };
  });
  add("transpose", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    in = {random_tensor(r, {pick(r, 1, 5), pick(r, 1, 5)})};
    f = [](const std::vector<Tensor>& x) { return weighted_sum(ops::transpose(x[0]), 2); };
  });
  add("elementwise", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const Shape s{pick(r, 1, 4), pick(r, 1, 4)};
    in = {random_tensor(r, s), random_tensor(r, s)};
    f = [](const std::vector<Tensor>& x) {
      const Tensor a = ops::add(ops::sigmoid(x[0]), ops::relu(ops::sub(x[1], x[0])));
      const Tensor b = ops::mul(ops::abs(x[1]), ops::square(x[0]));
      return ops::add(weighted_sum(ops::scale(a, 1.7), 3), ops::mean(b));
    };
  });
  add("conv2d", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t cin = pick(r, 1, 3), cout = pick(r, 1, 3), h = pick(r, 3, 6), w = pick(r, 3, 6);
    const std::size_t k = r.bernoulli(0.5) ? 3 : 1, stride = pick(r, 1, 2), pad = k == 3 ? pick(r, 0, 1) : 0;
    in = {random_tensor(r, {cin, h, w}), random_tensor(r, {cout, cin, k, k})};
    f = [stride, pad](const std::vector<Tensor>& x) { return weighted_sum(ops::conv2d(x[0], x[1], stride, pad), 4); };
  });
  add("bias", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t c = pick(r, 1, 4), h = pick(r, 1, 4), w = pick(r, 1, 4);
    in = {random_tensor(r, {c, h, w}), random_tensor(r, {c}), random_tensor(r, {h, w}), random_tensor(r, {w})};
    f = [](const std::vector<Tensor>& x) {
      return ops::add(weighted_sum(ops::add_channel_bias(x[0], x[1]), 5), weighted_sum(ops::add_row_bias(x[2], x[3]), 6));
    };
  });
  add("resample", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t c = pick(r, 1, 3), h = 2 * pick(r, 1, 3), w = 2 * pick(r, 1, 3);
    in = {random_tensor(r, {c, h, w})};
    f = [](const std::vector<Tensor>& x) {
      return ops::add(weighted_sum(ops::upsample_nearest(x[0], 2), 7), weighted_sum(ops::avg_pool(x[0], 2), 8));
    };
  });
  add("softmax", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t axis = r.below(2);
    in = {random_tensor(r, {pick(r, 1, 5), pick(r, 2, 6)}, -3.0, 3.0)};
    f = [axis](const std::vector<Tensor>& x) { return weighted_sum(ops::softmax_axis(x[0], axis), 9); };
  });
  add("log_softmax", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t axis = r.below(2);
    in = {random_tensor(r, {pick(r, 1, 5), pick(r, 2, 6)}, -3.0, 3.0)};
    f = [axis](const std::vector<Tensor>& x) { return weighted_sum(ops::log_softmax_axis(x[0], axis), 10); };
  });
  add("kl_div", [](Rng& r, auto& in, ScalarFn& f, auto& wrt) {
    const std::size_t m = pick(r, 1, 5), n = pick(r, 2, 8);
    in = {random_tensor(r, {m, n}, -3.0, 3.0), random_distribution(r, m, n)};
    wrt = {true, false};
    f = [](const std::vector<Tensor>& x) { return ops::kl_div(ops::log_softmax_axis(x[0], 1), x[1], 1); };
  });
  add("bilinear_sample", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t c = pick(r, 1, 4), h = pick(r, 1, 6), w = pick(r, 1, 6), n = pick(r, 1, 6);
    std::vector<ops::Point2> pts(n);
    for (auto& p : pts) p = {r.uniform(-0.1, 1.1), r.uniform(-0.1, 1.1)};
    in = {random_tensor(r, {c, h, w})};
    f = [pts](const std::vector<Tensor>& x) { return weighted_sum(ops::bilinear_sample(x[0], pts), 11); };
  });
  add("rows", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t m = pick(r, 1, 5), n = pick(r, 1, 4);
    std::vector<std::size_t> idx(pick(r, 1, 6));
    for (auto& i : idx) i = r.below(m);
    in = {random_tensor(r, {m, n}), random_tensor(r, {m, pick(r, 1, 3)})};
    f = [idx](const std::vector<Tensor>& x) {
      const Tensor g = ops::gather_rows(ops::concat_cols(x[0], x[1]), idx);
      return weighted_sum(ops::row_norm(g), 12);
    };
  });
  add("graph_conv", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t k = 4, din = pick(r, 1, 5), dout = pick(r, 1, 5);
    const Tensor a = normalized_adjacency(random_skeleton(r, k));
    in = {random_tensor(r, {k, din}), random_tensor(r, {din, dout}), random_tensor(r, {dout})};
    f = [a](const std::vector<Tensor>& x) { return weighted_sum(graph_conv(x[0], a, x[1], x[2]), 13); };
  });
  add("feature_distill_loss", [](Rng& r, auto& in, ScalarFn& f, auto& wrt) {
    const std::size_t ct = pick(r, 1, 4), cs = pick(r, 1, 4), h = pick(r, 1, 4), w = pick(r, 1, 4);
    in = {random_tensor(r, {ct, h, w}), random_tensor(r, {cs, h, w}), random_tensor(r, {ct, cs, 1, 1})};
    wrt = {false, true, true};
    f = [](const std::vector<Tensor>& x) { return feature_distill_loss(x[0], x[1], x[2]); };
  });
  add("structure_constraint_loss", [](Rng& r, auto& in, ScalarFn& f, auto& wrt) {
    const std::size_t k = pick(r, 2, 6);
    const auto skel = random_skeleton(r, k);
    in = {random_tensor(r, {k, 2}, 0.0, 1.0), random_tensor(r, {k, 2}, 0.0, 1.0)};
    wrt = {false, true};
    f = [skel](const std::vector<Tensor>& x) { return structure_constraint_loss(x[0], x[1], skel); };
  });
  add("pose_distill_loss", [](Rng& r, auto& in, ScalarFn& f, auto& wrt) {
    const std::size_t k = pick(r, 2, 5), n = pick(r, 1, 3);
    const auto skel = random_skeleton(r, k);
    in.clear();
    for (std::size_t i = 0; i < 2 * n; ++i) in.push_back(random_tensor(r, {k, 2}, 0.0, 1.0));
    wrt.assign(2 * n, false);
    for (std::size_t i = n; i < 2 * n; ++i) wrt[i] = true;
    f = [skel, n](const std::vector<Tensor>& x) {
      return pose_distill_loss(std::span(x).subspan(0, n), std::span(x).subspan(n, n), skel, true);
    };
  });
  add("stage1_total_loss", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    in = {random_tensor(r, {1}, 0.0, 3.0), random_tensor(r, {1}, 0.0, 3.0), random_tensor(r, {1}, 0.0, 3.0)};
    const std::size_t total = pick(r, 1, 50), t = pick(r, 1, total);
    const Stage1LossWeights w{r.uniform(0.0, 1.0), r.uniform(0.0, 1.0), total};
    f = [w, t](const std::vector<Tensor>& x) { return stage1_total_loss(x[0], x[1], x[2], w, t); };
  });
  add("simcc", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    const std::size_t k = pick(r, 1, 4), bx = pick(r, 2, 8), by = pick(r, 2, 8);
    Pose p;
    for (std::size_t j = 0; j < k; ++j) p.coords.push_back({r.uniform(), r.uniform()});
    p.mask.assign(k, true);
    const auto targets = encode_simcc_targets(p, 0.1, bx, by);
    in = {random_tensor(r, {k, bx}, -2.0, 2.0), random_tensor(r, {k, by}, -2.0, 2.0)};
    f = [targets](const std::vector<Tensor>& x) {
      const SimCCLogits l{x[0], x[1], 2};
      return ops::add(simcc_kl_loss(l, targets), weighted_sum(soft_argmax(l), 14));
    };
  });
  add("stage2_loss", [](Rng& r, auto& in, ScalarFn& f, auto& wrt) {
    const std::size_t k = pick(r, 1, 5), n = pick(r, 1, 3);
    std::vector<Tensor> targets, masks;
    for (std::size_t i = 0; i < n; ++i) {
      targets.push_back(random_tensor(r, {k, 2}, 0.0, 1.0));
      Pose p;
      p.coords.assign(k, {});
      for (std::size_t j = 0; j < k; ++j) p.mask.push_back(r.bernoulli(0.7));
      masks.push_back(mask_to_tensor(p));
    }
    in.clear();
    for (std::size_t i = 0; i < 3 * n; ++i) in.push_back(random_tensor(r, {k, 2}, 0.0, 1.0));
    wrt.assign(in.size(), true);
    const Stage2LossWeights w{r.uniform(0.1, 1.0), r.uniform(0.1, 1.0), r.uniform(0.1, 1.0)};
    f = [targets, masks, w, n](const std::vector<Tensor>& x) {
      std::vector<IgpOutput> outs(n);
      for (std::size_t i = 0; i < n; ++i) outs[i].poses = {x[3 * i], x[3 * i + 1], x[3 * i + 2]};
      return stage2_loss(targets, outs, masks, w).total;
    };
  });
  add("igp_forward", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    IgpGcnConfig c;
    c.joints = 4;
    c.feature_widths = {2, 3, 2};
    c.node_width = 3;
    const Tensor a = normalized_adjacency(random_skeleton(r, c.joints));
    ParamSet p = init_igpgcn(c, r.next());
    for (auto& [name, t] : p.entries()) t = random_tensor(r, t.shape(), -0.8, 0.8);
    const Tensor p_init = random_tensor(r, {c.joints, 2}, 0.0, 1.0);
    JointFeatures jf;
    for (std::size_t i = 0; i < 3; ++i) jf.levels[i] = random_tensor(r, {c.joints, c.feature_widths[i]});
    std::vector<std::string> names;
    in.clear();
    for (const auto& [name, t] : p.entries()) {
      names.push_back(name);
      in.push_back(t);
    }
    in.push_back(jf.levels[0]);
    in.push_back(jf.levels[1]);
    in.push_back(jf.levels[2]);
    f = [c, a, p_init, names](const std::vector<Tensor>& x) {
      ParamSet q;
      for (std::size_t i = 0; i < names.size(); ++i) q.add(names[i], x[i]);
      const JointFeatures feats{{x[names.size()], x[names.size() + 1], x[names.size() + 2]}};
      const auto out = igp_forward(c, q, a, p_init, feats);
      return ops::add(weighted_sum(out.poses[2], 15), weighted_sum(out.poses[0], 16));
    };
  });
  add("posenet", [](Rng& r, auto& in, ScalarFn& f, auto&) {
    BackboneConfig c;
    c.widths = {2, 2, 3};
    c.image_channels = 1;
    c.image_height = c.image_width = c.internal_height = c.internal_width = 4;
    c.joints = 2;
    const ParamSet p = init_posenet(c, r.next());
    std::vector<std::string> names;
    in.clear();
    for (const auto& [name, t] : p.entries()) {
      names.push_back(name);
      in.push_back(random_tensor(r, t.shape(), -0.7, 0.7));
    }
    const Tensor image = random_tensor(r, {1, 4, 4}, 0.0, 1.0);
    Pose gt;
    gt.coords = {{r.uniform(), r.uniform()}, {r.uniform(), r.uniform()}};
    gt.mask = {true, true};
    const auto targets = encode_simcc_targets(gt, 0.1, c.x_bins(), c.y_bins());
    f = [c, names, image, targets](const std::vector<Tensor>& x) {
      ParamSet q;
      for (std::size_t i = 0; i < names.size(); ++i) q.add(names[i], x[i]);
      const auto out = forward_backbone(c, q, image);
      return simcc_kl_loss(simcc_heads(c, out.feature, q), targets);
    };
  });
  return cases;
}

}  // namespace kplab::testing
