#pragma once

// Runs every CLI subcommand in sequence into one directory tree and collects
// the produced files, so two runs can be compared byte for byte.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kplab/checkpoint.hpp"
#include "kplab/cli.hpp"

namespace kplab::testing {

inline const char* tiny_lab_config() {
  return R"({
  "data": {"seed": 3, "train_count": 24, "val_count": 8,
           "synth": {"height": 16, "width": 12, "thickness_min": 0.8, "thickness_max": 1.2, "occlusion_prob": 0.3}},
  "teacher": {"backbone": {"widths": [8, 12, 16], "image_height": 16, "image_width": 12},
              "train": {"seed": 5, "epochs": 2, "batch": 8, "lr": 0.003}},
  "student": {"backbone": {"widths": [4, 6, 8], "image_height": 16, "image_width": 12},
              "train": {"epochs": 2, "batch": 8, "lr": 0.003, "alpha": 0.01, "beta": 0.1}},
  "stage2": {"epochs": 2, "batch": 8, "node_width": 8}
})";
}

struct CommandResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CommandResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CommandResult r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Relative path -> file bytes for everything under `root`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), root).generic_string()] = read_file(e.path());
  return files;
}

// Every subcommand once. Returns the first failing command line, or empty.
inline std::string run_all_subcommands(const std::filesystem::path& config, const std::filesystem::path& root,
                                       std::size_t ablation_seeds = 1) {
  const std::string cfg = config.string(), r = root.string();
  const std::string data = r + "/data", teacher = r + "/teacher/teacher.kpckpt",
                    student = r + "/stage1/student.kpckpt", gcn = r + "/stage2/igpgcn.kpckpt";
  const std::vector<std::vector<std::string>> commands = {
      {"gen-data", "--config", cfg, "--out", data, "--quiet"},
      {"train-teacher", "--config", cfg, "--dataset", data, "--out", r + "/teacher", "--quiet"},
      {"distill-stage1", "--config", cfg, "--dataset", data, "--teacher", teacher, "--out", r + "/stage1", "--quiet"},
      {"distill-stage2", "--config", cfg, "--dataset", data, "--teacher", teacher, "--student", student, "--out",
       r + "/stage2", "--quiet"},
      {"eval", "--config", cfg, "--dataset", data, "--student", student, "--gcn", gcn, "--out", r + "/eval",
       "--quiet"},
      {"ablation", "--config", cfg, "--dataset", data, "--teacher", teacher, "--seeds",
       std::to_string(ablation_seeds), "--out", r + "/ablation", "--quiet"},
      {"report", r + "/teacher/teacher_report.csv", r + "/stage2/stage2_report.csv", "--out", r + "/charts",
       "--quiet"},
  };
  for (const auto& c : commands) {
    const auto res = run_cli(c);
    if (res.code != 0) {
      std::string line;
      for (const auto& a : c) line += a + " ";
      return line + "-> exit " + std::to_string(res.code) + ": " + res.err;
    }
  }
  return {};
}

// Sets an environment variable for the lifetime of the object.
class ScopedEnv {
 public:
  ScopedEnv(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) {
      had_ = true;
      old_ = old;
    }
    ::setenv(name, value.c_str(), 1);
  }
  ~ScopedEnv() {
    if (had_) ::setenv(name_, old_.c_str(), 1);
    else ::unsetenv(name_);
  }
  ScopedEnv(const ScopedEnv&) = delete;
  ScopedEnv& operator=(const ScopedEnv&) = delete;

 private:
  const char* name_;
  bool had_ = false;
  std::string old_;
};

}  // namespace kplab::testing
