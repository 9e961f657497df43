#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kplab/distill.hpp"
#include "kplab/igpgcn.hpp"
#include "kplab/synth.hpp"

namespace kplab {

struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t train_count = 2000;
  std::size_t val_count = 500;
  SynthConfig synth;
};

nlohmann::json synth_to_json(const SynthConfig& c);
SynthConfig synth_from_json(const nlohmann::json& j);

// Everything a run needs besides seeds and paths. Missing JSON fields keep
// their defaults.
struct LabConfig {
  DataConfig data;
  BackboneConfig teacher = teacher_backbone();
  BackboneConfig student = student_backbone();
  TrainConfig teacher_train;
  TrainConfig student_train;
  Stage2Config stage2;
  nlohmann::json skeleton;  // null: 13-joint stick figure

  nlohmann::json to_json() const;
  static LabConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;  // FNV-1a of the canonical JSON
};

LabConfig load_lab_config(const std::filesystem::path& path);
SkeletonSpec lab_skeleton(const LabConfig& config);

// Deterministic synthetic splits: the validation split uses a different
// derived seed and ids starting at 1000000.
Dataset make_train_split(const DataConfig& config);
Dataset make_val_split(const DataConfig& config);

// Rows of the ablation table: which stage-1 terms are on and whether (and
// against what) the IGP-GCN is trained.
struct SchemeSpec {
  std::string name;
  SchemeFlags stage1;
  bool gcn = false;
  Stage2Target target = Stage2Target::Teacher;
  std::string student_from;  // scheme whose stage-1 student the GCN refines
};

const std::vector<SchemeSpec>& ablation_schemes();
const SchemeSpec& find_scheme(const std::string& name);  // InvalidArgument if unknown

struct SchemeRun {
  EvalResult result;  // hard-argmax student, or P3 for GCN schemes
  EvalResult initial;  // student poses before refinement (GCN schemes only)
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> schemes;
  std::vector<std::vector<SchemeRun>> runs;  // [scheme][seed]

  double mean_ap(const std::string& scheme) const;
  double mean_of(const std::string& scheme, const std::function<double(const SchemeRun&)>& f) const;
  std::string to_csv() const;
  std::string to_markdown() const;
  nlohmann::json to_json() const;
};

struct TrendCheck {
  bool pass = false;
  double gain = 0.0;  // scheme-6 minus baseline, AP points
  std::size_t ties = 0;
  std::string detail;
};

// baseline <= scheme-2 <= scheme-4 and baseline <= scheme-1 <= scheme-5 <=
// scheme-6 on mean AP, with at most one adjacent pair reversed by no more
// than `tie_points`, and scheme-6 ahead of baseline by at least `min_gain`.
TrendCheck check_ablation_trend(const AblationTable& table, double tie_points = 0.5, double min_gain = 1.0);

// Trains every scheme for every seed against a fixed teacher and data. Jobs
// run through parallel_for; results do not depend on the thread count.
AblationTable run_ablation(const LabConfig& config, const Checkpoint& teacher, const Dataset& train, const Dataset& val,
                           const SkeletonSpec& skel, std::span<const std::uint64_t> seeds,
                           const std::function<void(const std::string&)>& log = {});

}  // namespace kplab
