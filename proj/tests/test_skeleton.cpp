#include <cmath>

#include "doctest.h"
#include "kplab/error.hpp"
#include "kplab/rng.hpp"
#include "kplab/skeleton.hpp"
#include "kplab/synth.hpp"

using namespace kplab;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

Pose random_pose(Rng& rng, std::size_t k) {
  std::vector<ops::Point2> c;
  for (std::size_t i = 0; i < k; ++i) c.push_back({rng.uniform(), rng.uniform()});
  return Pose::all_visible(c);
}

}  // namespace

TEST_CASE("two-joint skeleton") {
  const auto s = build_skeleton({{0, 1}}, 2, {0.1, 0.1});
  CHECK(s.adjacency == std::vector<std::uint8_t>{0, 1, 1, 0});
  REQUIRE(s.edge_weights.size() == 1);
  CHECK(s.edge_weights[0] == 1.0);
}

TEST_CASE("stick figure has uniform edge weights") {
  const auto s = stick_figure_skeleton();
  CHECK(s.k == 13);
  REQUIRE(s.edges.size() == 12);
  for (double w : s.edge_weights) CHECK(w == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("skeleton construction errors") {
  CHECK(kind_of([] { build_skeleton({{0, 1}}, 3, {1, 1, 1}); }) == ErrorKind::DisconnectedGraph);
  CHECK(kind_of([] { build_skeleton({{0, 3}}, 3, {1, 1, 1}); }) == ErrorKind::IndexOutOfRange);
  CHECK(kind_of([] { build_skeleton({{0, 1}, {1, 0}}, 2, {1, 1}); }) == ErrorKind::DuplicateEdge);
  CHECK(kind_of([] { skeleton_from_json_text("{\"k\": 2,"); }) == ErrorKind::ParseError);
}

TEST_CASE("adjacency is symmetric with zero trace and degree row sums") {
  for (const auto& s : {stick_figure_skeleton(), coco_skeleton()}) {
    for (std::size_t i = 0; i < s.k; ++i) {
      CHECK(s.adjacency[i * s.k + i] == 0);
      std::size_t row = 0;
      for (std::size_t j = 0; j < s.k; ++j) {
        CHECK(s.adjacency[i * s.k + j] == s.adjacency[j * s.k + i]);
        row += s.adjacency[i * s.k + j];
      }
      std::size_t incident = 0;
      for (auto [a, b] : s.edges) incident += (a == i) + (b == i);
      CHECK(row == incident);
      CHECK(s.degree(i) == incident);
    }
  }
}

TEST_CASE("custom weights from a config are normalized") {
  const auto s = skeleton_from_json_text(R"({"k":3,"edges":[[0,1],[1,2]],"weights":[1,3],"falloff":[0.1,0.1,0.1]})");
  CHECK(s.edge_weights[0] == doctest::Approx(0.25));
  CHECK(s.edge_weights[1] == doctest::Approx(0.75));
}

TEST_CASE("edge lengths") {
  const auto s = build_skeleton({{0, 1}}, 2, {0.1, 0.1});
  CHECK(edge_lengths(Pose::all_visible({{0, 0}, {0.3, 0.4}}), s)[0] == doctest::Approx(0.5).epsilon(1e-15));
  const auto stick = stick_figure_skeleton();
  for (double e : edge_lengths(Pose::all_visible(std::vector<ops::Point2>(13, {0.4, 0.6})), stick)) CHECK(e == 0.0);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = random_pose(rng, 13);
    const double dx = rng.uniform(-1, 1), dy = rng.uniform(-1, 1), scale = rng.uniform(0.2, 3.0);
    Pose moved = p, scaled = p;
    for (auto& c : moved.coords) c = {c.x + dx, c.y + dy};
    for (auto& c : scaled.coords) c = {c.x * scale, c.y * scale};
    const auto e = edge_lengths(p, stick), em = edge_lengths(moved, stick), es = edge_lengths(scaled, stick);
    for (std::size_t i = 0; i < e.size(); ++i) {
      const auto [a, b] = stick.edges[i];
      CHECK(e[i] == doctest::Approx(std::hypot(p.coords[a].x - p.coords[b].x, p.coords[a].y - p.coords[b].y)));
      CHECK(em[i] == doctest::Approx(e[i]).epsilon(1e-12));
      CHECK(es[i] == doctest::Approx(e[i] * scale).epsilon(1e-12));
    }
  }
}

TEST_CASE("tensor and pose edge lengths agree") {
  Rng rng(8);
  const auto stick = stick_figure_skeleton();
  const Pose p = random_pose(rng, 13);
  const auto a = edge_lengths(p, stick);
  const Tensor b = edge_lengths(pose_to_tensor(p), stick);
  REQUIRE(b.numel() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-14));
}

TEST_CASE("synthetic samples are pure functions of seed and config") {
  SynthConfig cfg;
  cfg.occlusion_prob = 0.3;
  const auto a = generate_synthetic_sample(42, cfg), b = generate_synthetic_sample(42, cfg);
  REQUIRE(a.image.numel() == b.image.numel());
  for (std::size_t i = 0; i < a.image.numel(); ++i) REQUIRE(a.image[i] == b.image[i]);
  for (std::size_t j = 0; j < 13; ++j) {
    CHECK(a.gt_pose.coords[j].x == b.gt_pose.coords[j].x);
    CHECK(a.gt_pose.coords[j].y == b.gt_pose.coords[j].y);
  }
  CHECK(a.image.shape() == Shape{3, 64, 48});
  for (std::size_t i = 0; i < a.image.numel(); ++i) {
    REQUIRE(a.image[i] >= 0.0);
    REQUIRE(a.image[i] <= 1.0);
  }
}

TEST_CASE("synthetic coordinates stay in range and labels survive occlusion") {
  SynthConfig cfg;
  cfg.occlusion_prob = 0.3;
  const auto data = generate_dataset(3, 1000, cfg);
  std::size_t hidden = 0, total = 0;
  for (const auto& s : data) {
    CHECK(s.area > 0.0);
    for (std::size_t j = 0; j < 13; ++j) {
      REQUIRE(s.gt_pose.mask[j]);
      REQUIRE(s.gt_pose.coords[j].x >= 0.05);
      REQUIRE(s.gt_pose.coords[j].x <= 0.95);
      REQUIRE(s.gt_pose.coords[j].y >= 0.05);
      REQUIRE(s.gt_pose.coords[j].y <= 0.95);
    }
    CHECK(!s.meta.occluded[0]);
    for (std::size_t j = 1; j < 13; ++j) {
      hidden += s.meta.occluded[j];
      ++total;
    }
  }
  const double frac = static_cast<double>(hidden) / static_cast<double>(total);
  CHECK(frac >= 0.25);
  CHECK(frac <= 0.35);
}

TEST_CASE("occlusion probability zero draws no occluders") {
  SynthConfig cfg;
  for (const auto& s : generate_dataset(4, 200, cfg))
    for (bool o : s.meta.occluded) CHECK(!o);
  SynthConfig bad;
  bad.occlusion_prob = 1.5;
  CHECK(kind_of([&] { generate_synthetic_sample(1, bad); }) == ErrorKind::InvalidConfig);
}
