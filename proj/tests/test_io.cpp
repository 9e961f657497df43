#include <cmath>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "kplab/checkpoint.hpp"
#include "kplab/coco.hpp"
#include "kplab/posenet.hpp"
#include "kplab/report.hpp"
#include "kplab/synth.hpp"
#include "support/tempdir.hpp"
#include "support/tiny.hpp"

using namespace kplab;
using namespace kplab::testing;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

EvalResult sample_metrics() {
  EvalResult r;
  r.ap = 0.61;
  r.ap50 = 0.9;
  r.ap75 = 0.55;
  r.ar = 0.7;
  r.pck = 0.8125;
  r.mean_oks = 0.66;
  r.per_joint_err = {0.01, 0.02, 0.0300000001};
  r.occluded_err = 0.04;
  r.visible_err = 0.015;
  r.occluded_count = 12;
  r.visible_count = 27;
  return r;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir("ckpt");
  Checkpoint c;
  c.kind = "student";
  c.config = {{"backbone", tiny_student().to_json()}};
  c.params = init_posenet(tiny_student(), 5);
  c.state = {{"epochs_completed", 3}};
  save_checkpoint(c, dir / "m.kpckpt");
  const auto back = load_checkpoint(dir / "m.kpckpt");
  CHECK(back.kind == "student");
  CHECK(back.config == c.config);
  CHECK(back.state == c.state);
  CHECK(back.params.hash() == c.params.hash());
  CHECK(checkpoint_hash(back) == checkpoint_hash(c));
  CHECK(file_hash(dir / "m.kpckpt") == checkpoint_hash(c));
  CHECK(hex64(255) == "00000000000000ff");

  std::string bytes = serialize_checkpoint(c);
  CHECK(kind_of([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == ErrorKind::ParseError);
  CHECK(kind_of([&] { deserialize_checkpoint("{\"format\":\"other\"}\n"); }) == ErrorKind::ParseError);
  CHECK(kind_of([&] { load_checkpoint(dir / "missing.kpckpt"); }) == ErrorKind::IoError);
}

TEST_CASE("COCO export and reload") {
  TempDir dir("coco");
  const auto data = generate_dataset(3, 6, tiny_synth(0.3));
  const auto skel = stick_figure_skeleton();
  export_coco_keypoints(data, skel, dir / "set.json");
  const auto back = load_coco_keypoints(dir / "set.json");
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].area == doctest::Approx(data[i].area).epsilon(1e-12));
    CHECK(back[i].meta.occluded == data[i].meta.occluded);
    for (std::size_t j = 0; j < 13; ++j) {
      CHECK(std::fabs(back[i].gt_pose.coords[j].x - data[i].gt_pose.coords[j].x) < 1e-9);
      CHECK(std::fabs(back[i].gt_pose.coords[j].y - data[i].gt_pose.coords[j].y) < 1e-9);
    }
    REQUIRE(back[i].image.shape() == data[i].image.shape());
    for (std::size_t p = 0; p < data[i].image.numel(); ++p)
      REQUIRE(std::fabs(back[i].image[p] - data[i].image[p]) < 1e-6);
  }
}

TEST_CASE("COCO ingestion of handwritten files") {
  TempDir dir("cocoin");
  const std::string cats = R"("categories":[{"id":1,"name":"person","keypoints":["a","b"],"skeleton":[[1,2]]}])";
  write_text(dir / "ok.json", R"({"images":[{"id":7,"width":320,"height":240}],"annotations":[
    {"id":1,"image_id":7,"keypoints":[160,120,2, 0,0,0],"num_keypoints":1,"area":7680},
    {"id":2,"image_id":7,"keypoints":[0,0,0, 0,0,0],"num_keypoints":0,"area":100}],)" + cats + "}");
  const auto d = load_coco_keypoints(dir / "ok.json");
  REQUIRE(d.size() == 1);
  CHECK(d[0].gt_pose.coords[0].x == 0.5);
  CHECK(d[0].gt_pose.coords[0].y == 0.5);
  CHECK(d[0].gt_pose.mask[0]);
  CHECK(!d[0].gt_pose.mask[1]);
  CHECK(d[0].area == doctest::Approx(0.1));

  write_text(dir / "orphan.json", R"({"images":[],"annotations":[
    {"id":1,"image_id":3,"keypoints":[1,1,2, 2,2,2],"num_keypoints":2,"area":10}],)" + cats + "}");
  CHECK(kind_of([&] { load_coco_keypoints(dir / "orphan.json"); }) == ErrorKind::MissingImageRecord);
  write_text(dir / "broken.json", "{\"images\": [\n  {\"id\": 1,,}\n]}");
  try {
    load_coco_keypoints(dir / "broken.json");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("metrics json parses back") {
  const auto r = sample_metrics();
  const auto back = metrics_from_json(nlohmann::json::parse(metrics_to_json(r).dump()));
  CHECK(back.ap == r.ap);
  CHECK(back.per_joint_err == r.per_joint_err);
  CHECK(back.occluded_count == r.occluded_count);
  CHECK(metrics_to_json(back) == metrics_to_json(r));
  TempDir dir("metrics");
  write_metrics_json(r, dir / "m.json");
  CHECK(metrics_to_json(read_metrics_json(dir / "m.json")) == metrics_to_json(r));
  const auto csv = metrics_to_csv(r);
  CHECK(csv.find("joint_2,") != std::string::npos);
}

TEST_CASE("csv tables and curves") {
  const auto t = parse_csv("epoch,a,b\n1,0.5,2\n2,0.25,3\n");
  CHECK(t.column("a") == std::vector<double>{0.5, 0.25});
  CHECK_THROWS_AS(t.column("c"), Error);
  CHECK(kind_of([] { parse_csv("epoch,a\n1,x\n"); }) == ErrorKind::ParseError);
  const auto curves = curves_from_csv(t);
  REQUIRE(curves.size() == 2);
  CHECK(curves[1].label == "b");
  CHECK(curves[1].x == std::vector<double>{1, 2});
}

TEST_CASE("reports are byte-identical for identical inputs") {
  TempDir a("ra"), b("rb");
  const auto curves = curves_from_csv(parse_csv("epoch,loss\n1,3\n2,2\n3,1.5\n"));
  const auto r = sample_metrics();
  write_report(r, curves, "loss", {a / "m.json", a / "m.csv", a / "c.svg"});
  write_report(r, curves, "loss", {b / "m.json", b / "m.csv", b / "c.svg"});
  for (const char* f : {"m.json", "m.csv", "c.svg"}) CHECK(read_file(a / f) == read_file(b / f));
  CHECK(read_file(a / "c.svg").find("<polyline") != std::string::npos);
  CHECK(kind_of([&] { write_report(r, curves, "x", {a / "m.json" / "x.json", a / "x.csv", a / "x.svg"}); }) ==
        ErrorKind::IoError);
}

TEST_CASE("empty chart still has axes") {
  const auto svg = render_svg({}, "nothing");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("<line") != std::string::npos);
  CHECK(svg.find("<polyline") == std::string::npos);
}
