#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "kplab/distill.hpp"
#include "kplab/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

using namespace kplab;
using namespace kplab::testing;

namespace {

Tensor pose_tensor(std::initializer_list<double> v, std::size_t k) { return Tensor::from(std::vector<double>(v), {k, 2}); }

Tensor random_pose_tensor(Rng& rng, std::size_t k) {
  std::vector<double> v(2 * k);
  for (auto& e : v) e = rng.uniform();
  return Tensor::from(v, {k, 2});
}

Tensor identity_align(std::size_t c) {
  std::vector<double> k(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) k[i * c + i] = 1.0;
  return Tensor::from(k, {c, c, 1, 1});
}

}  // namespace

TEST_CASE("feature loss examples") {
  Rng rng(1);
  const Tensor f = random_tensor(rng, {3, 4, 5});
  CHECK(feature_distill_loss(f, f, identity_align(3)).item() == 0.0);
  std::vector<double> shifted(f.data().begin(), f.data().end());
  for (auto& v : shifted) v += 0.5;
  CHECK(feature_distill_loss(Tensor::from(shifted, f.shape()), f, identity_align(3)).item() ==
        doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(feature_distill_loss(f, random_tensor(rng, {3, 4, 4}), identity_align(3)), Error);
}

TEST_CASE("feature loss gradient reaches the student and alignment, never the teacher") {
  Rng rng(2);
  const Tensor tea = random_tensor(rng, {2, 3, 3}), stu = random_tensor(rng, {3, 3, 3}),
               align = random_tensor(rng, {2, 3, 1, 1});
  auto fn = [](const std::vector<Tensor>& in) { return feature_distill_loss(in[0], in[1], in[2]); };
  CHECK(gradcheck(fn, {tea, stu, align}, {false, true, true}) < 1e-6);
  Tape tape;
  const Tensor t = tape.watch(tea), s = tape.watch(stu), a = tape.watch(align);
  const auto grads = tape.backward(feature_distill_loss(t, s, a));
  CHECK(!grads.has(t));
  CHECK(grads.has(s));
  CHECK(grads.has(a));
}

TEST_CASE("structure loss examples") {
  const auto one = build_skeleton({{0, 1}}, 2, {0.1, 0.1});
  CHECK(structure_constraint_loss(pose_tensor({0, 0, 0.3, 0.4}, 2), pose_tensor({0, 0, 0.18, 0.24}, 2), one).item() ==
        doctest::Approx(0.2).epsilon(1e-14));
  const auto stick = stick_figure_skeleton();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = random_pose_tensor(rng, 13), q = random_pose_tensor(rng, 13);
    CHECK(structure_constraint_loss(p, p, stick).item() == 0.0);
    std::vector<double> moved(p.data().begin(), p.data().end());
    for (auto& v : moved) v += 0.1;
    CHECK(structure_constraint_loss(p, Tensor::from(moved, {13, 2}), stick).item() == doctest::Approx(0.0));
    const double base = structure_constraint_loss(p, q, stick).item();
    CHECK(base >= 0.0);
    // Translating either pose leaves the loss unchanged.
    std::vector<double> mq(q.data().begin(), q.data().end());
    for (std::size_t i = 0; i < mq.size(); ++i) mq[i] += (i % 2 ? -0.3 : 0.7);
    CHECK(structure_constraint_loss(p, Tensor::from(mq, {13, 2}), stick).item() ==
          doctest::Approx(base).epsilon(1e-12));
    // Left/right mirror of the joint labels is a graph automorphism.
    const std::size_t mirror[13] = {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11};
    std::vector<double> pm(26), qm(26);
    for (std::size_t j = 0; j < 13; ++j)
      for (std::size_t a = 0; a < 2; ++a) {
        pm[mirror[j] * 2 + a] = p[j * 2 + a];
        qm[mirror[j] * 2 + a] = q[j * 2 + a];
      }
    CHECK(structure_constraint_loss(Tensor::from(pm, {13, 2}), Tensor::from(qm, {13, 2}), stick).item() ==
          doctest::Approx(base).epsilon(1e-12));
  }
  CHECK_THROWS_AS(structure_constraint_loss(random_pose_tensor(rng, 12), random_pose_tensor(rng, 13), stick), Error);
}

TEST_CASE("pose loss examples") {
  const auto single = build_skeleton({}, 1, {0.1});
  const std::vector<Tensor> tea{pose_tensor({0.5, 0.5}, 1)}, stu{pose_tensor({0.4, 0.6}, 1)};
  CHECK(pose_distill_loss(tea, stu, single).item() == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(pose_distill_loss(tea, tea, single).item() == 0.0);

  const auto stick = stick_figure_skeleton();
  Rng rng(4);
  std::vector<Tensor> a, b;
  for (int n = 0; n < 4; ++n) {
    a.push_back(random_pose_tensor(rng, 13));
    b.push_back(random_pose_tensor(rng, 13));
  }
  CHECK(pose_distill_loss(a, a, stick).item() == 0.0);
  double previous = 1e300;
  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::vector<Tensor> mid;
    for (std::size_t n = 0; n < a.size(); ++n) mid.push_back(ops::add(ops::scale(b[n], 1.0 - s), ops::scale(a[n], s)));
    const double v = pose_distill_loss(a, mid, stick).item();
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous == doctest::Approx(0.0).epsilon(1e-12));
  // Batch form is the mean of the per-sample form.
  double mean = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) mean += sample_pose_loss(a[n], b[n], stick).item() / 4.0;
  CHECK(pose_distill_loss(a, b, stick).item() == doctest::Approx(mean).epsilon(1e-14));
  CHECK(pose_distill_loss(a, b, stick, false).item() < pose_distill_loss(a, b, stick, true).item());
}

TEST_CASE("decay weight") {
  CHECK(decay_weight(1, 7) == 1.0);
  CHECK(decay_weight(210, 210) == doctest::Approx(1.0 / 210.0).epsilon(1e-15));
  CHECK(decay_weight(6, 10) == 0.5);
  CHECK_THROWS_AS(decay_weight(0, 10), Error);
  CHECK_THROWS_AS(decay_weight(11, 10), Error);
}

TEST_CASE("stage-1 total loss") {
  const Stage1LossWeights w{5e-5, 0.1, 210};
  CHECK(stage1_total_loss(1.0, 100.0, 2.0, w, 1) == doctest::Approx(1.205).epsilon(1e-15));
  CHECK(stage1_total_loss(1.3, 7.0, 9.0, Stage1LossWeights{0.0, 0.0, 10}, 4) == 1.3);
  const double d1 = stage1_total_loss(0.0, 100.0, 2.0, w, 1), dt = stage1_total_loss(0.0, 100.0, 2.0, w, 210);
  CHECK(dt == doctest::Approx(d1 / 210.0).epsilon(1e-14));
  const Tensor t = stage1_total_loss(Tensor::scalar(1.0), Tensor::scalar(100.0), Tensor::scalar(2.0), w, 1);
  CHECK(t.item() == doctest::Approx(1.205).epsilon(1e-15));
}

TEST_CASE("training on one sample overfits") {
  const auto data = generate_dataset(5, 1, tiny_synth());
  TrainConfig cfg = tiny_train(200);
  cfg.batch = 1;
  const auto r = train_teacher(tiny_student(), data, data, stick_figure_skeleton(), cfg);
  REQUIRE(r.report.records.size() == 200);
  double lo = 1e300;
  for (const auto& rec : r.report.records) lo = std::min(lo, rec.l_total);
  const double first = r.report.records.front().l_total, last = r.report.records.back().l_total;
  MESSAGE("single-sample loss " << first << " -> " << last << " (min " << lo << ")");
  CHECK(last <= 1.05 * lo);
  CHECK(last < 0.2 * first);
}

TEST_CASE("training rejects empty data") {
  CHECK_THROWS_AS(train_teacher(tiny_student(), {}, {}, stick_figure_skeleton(), tiny_train(1)), Error);
}

TEST_CASE("stage 1 with every flag off is the baseline loop") {
  const auto train = generate_dataset(6, 24, tiny_synth(0.3));
  const auto val = generate_dataset(7, 8, tiny_synth(0.3), 1000000);
  const auto skel = stick_figure_skeleton();
  const auto teacher = train_teacher(tiny_teacher(), train, val, skel, tiny_train(2, 3));
  const auto base = train_teacher(tiny_student(), train, val, skel, tiny_train(3, 4));
  const auto s1 = run_stage1(teacher.checkpoint, tiny_student(), train, val, skel, tiny_train(3, 4));
  CHECK(base.checkpoint.params.hash() == s1.checkpoint.params.hash());
  for (std::size_t e = 0; e < 3; ++e) CHECK(base.report.records[e].l_total == s1.report.records[e].l_total);
  const auto again = train_teacher(tiny_student(), train, val, skel, tiny_train(3, 4));
  CHECK(checkpoint_hash(again.checkpoint) == checkpoint_hash(base.checkpoint));
}

TEST_CASE("stage 1 leaves the teacher untouched and reports every epoch") {
  const auto train = generate_dataset(8, 16, tiny_synth(0.3));
  const auto val = generate_dataset(9, 8, tiny_synth(0.3), 1000000);
  const auto skel = stick_figure_skeleton();
  const auto teacher = train_teacher(tiny_teacher(), train, val, skel, tiny_train(1, 3));
  const auto before = checkpoint_hash(teacher.checkpoint);
  TrainConfig cfg = tiny_train(4, 5);
  cfg.flags = {true, false, true};
  const auto r = run_stage1(teacher.checkpoint, tiny_student(), train, val, skel, cfg);
  CHECK(checkpoint_hash(teacher.checkpoint) == before);
  REQUIRE(r.report.records.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& rec = r.report.records[e];
    CHECK(rec.epoch == e + 1);
    CHECK(rec.gamma == decay_weight(e + 1, 4));
    CHECK(rec.l_fea > 0.0);
    CHECK(rec.l_pos > 0.0);
    CHECK(std::isfinite(rec.val_pck));
  }
  CHECK(r.checkpoint.params.contains("align.w"));
  CHECK(r.checkpoint.state.at("teacher_hash").get<std::string>() == hex64(checkpoint_hash(teacher.checkpoint)));

  const auto shared = teacher_outputs(posenet_from_checkpoint(teacher.checkpoint), train, true);
  CHECK(checkpoint_hash(run_stage1(teacher.checkpoint, tiny_student(), train, val, skel, cfg, &shared).checkpoint) ==
        checkpoint_hash(r.checkpoint));
  const auto no_features = teacher_outputs(posenet_from_checkpoint(teacher.checkpoint), train, false);
  CHECK_THROWS_AS(run_stage1(teacher.checkpoint, tiny_student(), train, val, skel, cfg, &no_features), Error);

  const auto csv = r.report.to_csv();
  CHECK(csv.rfind("epoch,l_kl,l_fea,l_pos,gamma,l_total,val_pck,val_oks\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(Stage1Report::from_json(r.report.to_json()).to_csv() == csv);
}

TEST_CASE("stage 1 rejects a teacher with different extents") {
  const auto data = generate_dataset(10, 4, tiny_synth());
  const auto skel = stick_figure_skeleton();
  const auto teacher = train_teacher(tiny_teacher(), data, data, skel, tiny_train(1));
  BackboneConfig other = student_backbone();
  try {
    run_stage1(teacher.checkpoint, other, data, data, skel, tiny_train(1));
    FAIL("expected CheckpointMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CheckpointMismatch);
  }
}

TEST_CASE("train config json round trip") {
  TrainConfig c = tiny_train(12, 77);
  c.lr_steps = {5, 9};
  c.flags = {true, true, false};
  c.alpha = 0.5;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  TrainConfig bad = c;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
