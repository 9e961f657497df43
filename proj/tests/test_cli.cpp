#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "kplab/report.hpp"
#include "support/pipeline.hpp"
#include "support/tempdir.hpp"

using namespace kplab;
using namespace kplab::testing;

namespace {

std::filesystem::path write_config(const TempDir& dir) {
  const auto p = dir / "lab.json";
  std::ofstream(p) << tiny_lab_config();
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 1, runtime failures with 2") {
  TempDir dir("cli-codes");
  const auto cfg = write_config(dir);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"no-such-command"}).code == 1);
  CHECK(run_cli({"gen-data", "--occlusion", "2"}).code == 1);
  CHECK(run_cli({"train-teacher", "--config", cfg.string()}).code == 1);
  const auto missing = run_cli({"train-teacher", "--config", cfg.string(), "--dataset", (dir / "nothing").string(),
                                "--out", (dir / "t").string(), "--quiet"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("error [") != std::string::npos);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("gen-data writes both splits and a manifest") {
  TempDir dir("cli-gen");
  const auto cfg = write_config(dir);
  const auto r = run_cli({"gen-data", "--config", cfg.string(), "--out", (dir / "d").string(), "--count", "5",
                          "--val-count", "3", "--quiet"});
  REQUIRE(r.code == 0);
  for (const char* f : {"train.json", "train.images.bin", "val.json", "val.images.bin", "manifest.json"})
    CHECK(std::filesystem::exists(dir / "d" / f));
  const auto m = nlohmann::json::parse(read_file(dir / "d" / "manifest.json"));
  CHECK(m.at("command") == "gen-data");
  for (const auto& o : m.at("outputs"))
    CHECK(o.at("hash").get<std::string>() == hex64(file_hash(dir / "d" / o.at("path").get<std::string>())));
}

TEST_CASE("every subcommand byte-reproduces its outputs") {
  TempDir dir("cli-det");
  const auto cfg = write_config(dir);
  ScopedEnv epoch("SOURCE_DATE_EPOCH", "1700000000");
  std::map<std::string, std::string> first;
  {
    ScopedEnv threads("KPLAB_THREADS", "1");
    REQUIRE(run_all_subcommands(cfg, dir / "a") == "");
    first = snapshot(dir / "a");
  }
  {
    ScopedEnv threads("KPLAB_THREADS", "3");
    REQUIRE(run_all_subcommands(cfg, dir / "b") == "");
  }
  const auto second = snapshot(dir / "b");
  REQUIRE(first.size() == second.size());
  CHECK(first.size() > 20);
  for (const auto& [name, bytes] : first) {
    CAPTURE(name);
    REQUIRE(second.count(name) == 1);
    if (name.ends_with("manifest.json")) {
      // Manifests name their own directory; compare with the root stripped.
      auto strip = [&](std::string s, const std::string& root) {
        for (std::size_t p; (p = s.find(root)) != std::string::npos;) s.erase(p, root.size());
        return s;
      };
      CHECK(strip(bytes, (dir / "a").string()) == strip(second.at(name), (dir / "b").string()));
    } else {
      CHECK(bytes == second.at(name));
    }
  }
}

TEST_CASE("eval agrees with the metrics stage 2 wrote") {
  TempDir dir("cli-eval");
  const auto cfg = write_config(dir);
  REQUIRE(run_all_subcommands(cfg, dir.path()) == "");
  const auto from_eval = read_metrics_json(dir / "eval/metrics.json");
  const auto stage2 = nlohmann::json::parse(read_file(dir / "stage2/stage2_metrics.json"));
  const auto from_stage2 = metrics_from_json(stage2.at("refined"));
  CHECK(from_eval.ap == from_stage2.ap);
  CHECK(from_eval.occluded_err == from_stage2.occluded_err);
  CHECK(std::filesystem::exists(dir / "charts/teacher_report.svg"));
  CHECK(std::filesystem::exists(dir / "ablation/ablation.md"));
}
