#include <chrono>
#include <cmath>

#include "doctest.h"
#include "kplab/posenet.hpp"
#include "kplab/rng.hpp"
#include "kplab/synth.hpp"

using namespace kplab;

namespace {

SimCCLogits one_hot_logits(std::size_t k, std::size_t xb, std::size_t yb, std::size_t hot_x, std::size_t hot_y) {
  std::vector<double> x(k * xb, 0.0), y(k * yb, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    x[j * xb + hot_x] = 5.0;
    y[j * yb + hot_y] = 5.0;
  }
  return {Tensor::from(x, {k, xb}), Tensor::from(y, {k, yb}), 2};
}

}  // namespace

TEST_CASE("pyramid extents and logit shapes for the default input") {
  const BackboneConfig cfg = student_backbone();
  const ParamSet p = init_posenet(cfg, 1);
  const auto sample = generate_synthetic_sample(1, SynthConfig{});
  const auto out = forward_backbone(cfg, p, sample.image);
  CHECK(out.pyramid.levels[0].shape() == Shape{16, 16, 12});
  CHECK(out.pyramid.levels[1].shape() == Shape{32, 32, 24});
  CHECK(out.pyramid.levels[2].shape() == Shape{64, 64, 48});
  const auto logits = simcc_heads(cfg, out.feature, p);
  CHECK(logits.x_logits.shape() == Shape{13, 96});
  CHECK(logits.y_logits.shape() == Shape{13, 128});
  CHECK_THROWS_AS(forward_backbone(cfg, p, Tensor::zeros({3, 32, 24})), Error);
}

TEST_CASE("teacher and student logits share a shape") {
  BackboneConfig t = teacher_backbone(), s = student_backbone();
  t.internal_height = s.internal_height = 16;
  t.internal_width = s.internal_width = 12;
  const auto img = generate_synthetic_sample(2, SynthConfig{}).image;
  const auto lt = simcc_heads(t, forward_backbone(t, init_posenet(t, 1), img).feature, init_posenet(t, 1));
  const auto ls = simcc_heads(s, forward_backbone(s, init_posenet(s, 1), img).feature, init_posenet(s, 1));
  CHECK(lt.x_logits.shape() == ls.x_logits.shape());
  CHECK(lt.y_logits.shape() == ls.y_logits.shape());
  for (std::size_t i = 0; i < 3; ++i) CHECK(t.widths[i] > s.widths[i]);
}

TEST_CASE("zero weights give zero features and uniform bins") {
  BackboneConfig cfg = student_backbone();
  cfg.internal_height = 16;
  cfg.internal_width = 12;
  const ParamSet z = zeros_like(init_posenet(cfg, 3));
  const auto out = forward_backbone(cfg, z, Tensor::zeros({3, 64, 48}));
  for (const auto& level : out.pyramid.levels)
    for (std::size_t i = 0; i < level.numel(); ++i) REQUIRE(level[i] == 0.0);
  const auto logits = simcc_heads(cfg, out.feature, z);
  for (std::size_t i = 0; i < logits.x_logits.numel(); ++i) REQUIRE(logits.x_logits[i] == 0.0);
  CHECK(simcc_confidence(logits) == doctest::Approx(0.5 * (1.0 / 96 + 1.0 / 128)));
}

TEST_CASE("forward pass is bit-reproducible") {
  const BackboneConfig cfg = student_backbone();
  const PoseNet net{cfg, init_posenet(cfg, 9)};
  const auto img = generate_synthetic_sample(4, SynthConfig{}).image;
  const auto a = predict(net, img), b = predict(net, img);
  for (std::size_t j = 0; j < 13; ++j) {
    CHECK(a.pose.coords[j].x == b.pose.coords[j].x);
    CHECK(a.pose.coords[j].y == b.pose.coords[j].y);
  }
  CHECK(a.confidence == b.confidence);
}

TEST_CASE("forward pass of either model fits the per-image budget") {
  const auto img = generate_synthetic_sample(4, SynthConfig{}).image;
  for (BackboneConfig cfg : {teacher_backbone(), student_backbone()}) {
    cfg.internal_height = 16;
    cfg.internal_width = 12;
    const PoseNet net{cfg, init_posenet(cfg, 9)};
    predict(net, img);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 5; ++i) predict(net, img);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 5;
    MESSAGE("widths " << cfg.widths[2] << " forward: " << ms << " ms");
    CHECK(ms < 50.0);
  }
}

TEST_CASE("decode boundaries and ties") {
  auto first = decode_simcc(one_hot_logits(2, 96, 128, 0, 0));
  CHECK(first.coords[0].x == 0.0);
  CHECK(first.coords[1].y == 0.0);
  auto last = decode_simcc(one_hot_logits(2, 96, 128, 95, 127));
  CHECK(last.coords[0].x == 1.0);
  CHECK(last.coords[1].y == 1.0);
  const SimCCLogits flat{Tensor::zeros({1, 10}), Tensor::zeros({1, 10}), 2};
  CHECK(decode_simcc(flat).coords[0].x == 0.0);
  for (bool m : last.mask) CHECK(m);
}

TEST_CASE("target encoding") {
  const Pose p = Pose::all_visible({{0.5, 0.25}});
  const auto hard = encode_simcc_targets(p, 0.0, 96, 128);
  double sum = 0.0;
  for (std::size_t i = 0; i < 96; ++i) {
    CHECK((hard.x[i] == 0.0 || hard.x[i] == 1.0));
    sum += hard.x[i];
  }
  CHECK(sum == 1.0);
  const auto soft = encode_simcc_targets(p, 0.1, 96, 128);
  std::size_t hot = 0;
  for (std::size_t i = 0; i < 96; ++i) {
    if (soft.x[i] == doctest::Approx(0.9)) ++hot;
    else CHECK(soft.x[i] == doctest::Approx(0.1 / 95).epsilon(1e-12));
  }
  CHECK(hot == 1);
  CHECK_THROWS_AS(encode_simcc_targets(p, 1.0, 96, 128), Error);

  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ops::Point2> c;
    for (int j = 0; j < 13; ++j) c.push_back({rng.uniform(), rng.uniform()});
    const Pose q = Pose::all_visible(c);
    const auto t = encode_simcc_targets(q, rng.uniform(0.01, 0.5), 96, 128);
    for (std::size_t j = 0; j < 13; ++j) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t b = 0; b < 96; ++b) sx += t.x.at(j, b);
      for (std::size_t b = 0; b < 128; ++b) sy += t.y.at(j, b);
      REQUIRE(std::fabs(sx - 1.0) < 1e-12);
      REQUIRE(std::fabs(sy - 1.0) < 1e-12);
    }
    // Targets as logits: log of the distribution decodes to the hot bin.
    auto log_of = [](const Tensor& d) {
      std::vector<double> v(d.data().begin(), d.data().end());
      for (auto& e : v) e = std::log(e);
      return Tensor::from(v, d.shape());
    };
    const SimCCLogits logits{log_of(t.x), log_of(t.y), 2};
    const Pose back = decode_simcc(logits);
    for (std::size_t j = 0; j < 13; ++j) {
      REQUIRE(std::fabs(back.coords[j].x - q.coords[j].x) <= 0.5 / 95 + 1e-12);
      REQUIRE(std::fabs(back.coords[j].y - q.coords[j].y) <= 0.5 / 127 + 1e-12);
    }
  }
}

TEST_CASE("soft-argmax follows a sharp distribution") {
  const auto logits = one_hot_logits(1, 11, 11, 3, 7);
  SimCCLogits sharp{ops::scale(logits.x_logits, 20.0), ops::scale(logits.y_logits, 20.0), 2};
  const Tensor p = soft_argmax(sharp);
  CHECK(p.shape() == Shape{1, 2});
  CHECK(p[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("backbone config round-trips through json") {
  BackboneConfig c = teacher_backbone();
  c.internal_height = 16;
  c.internal_width = 12;
  const auto back = BackboneConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  BackboneConfig bad = c;
  bad.internal_height = 13;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("head prior maps each cell to the bin at its centre") {
  BackboneConfig c = student_backbone();
  c.internal_height = 16;
  c.internal_width = 12;
  c.head_prior = 2.0;
  const auto p = init_posenet(c, 1);
  const Tensor& wx = p.get("head.x.w");
  const Tensor& wy = p.get("head.y.w");
  const std::size_t xb = c.x_bins(), yb = c.y_bins();
  for (std::size_t r = 0; r < c.internal_height; ++r)
    for (std::size_t q = 0; q < c.internal_width; ++q) {
      const std::size_t cell = r * c.internal_width + q;
      std::size_t bx = 0, by = 0;
      for (std::size_t b = 0; b < xb; ++b)
        if (wx[cell * xb + b] > wx[cell * xb + bx]) bx = b;
      for (std::size_t b = 0; b < yb; ++b)
        if (wy[cell * yb + b] > wy[cell * yb + by]) by = b;
      CHECK(std::fabs(bx / double(xb - 1) - (q + 0.5) / c.internal_width) <= 0.5 / (xb - 1));
      CHECK(std::fabs(by / double(yb - 1) - (r + 0.5) / c.internal_height) <= 0.5 / (yb - 1));
      CHECK(wx[cell * xb + bx] == doctest::Approx(2.0).epsilon(0.01));
    }
  CHECK(BackboneConfig::from_json(c.to_json()).head_prior == 2.0);
  c.head_prior = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}
