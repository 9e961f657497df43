#include "kplab/experiment.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include "kplab/parallel.hpp"
#include "kplab/rng.hpp"

namespace kplab {

nlohmann::json synth_to_json(const SynthConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"channels", c.channels},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"rotation_max_deg", c.rotation_max_deg},
          {"limb_angle_scale", c.limb_angle_scale},
          {"thickness_min", c.thickness_min},
          {"thickness_max", c.thickness_max},
          {"noise", c.noise},
          {"occlusion_prob", c.occlusion_prob},
          {"occluder_min", c.occluder_min},
          {"occluder_max", c.occluder_max}};
}

SynthConfig synth_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    c.scale_min = j.value("scale_min", c.scale_min);
    c.scale_max = j.value("scale_max", c.scale_max);
    c.rotation_max_deg = j.value("rotation_max_deg", c.rotation_max_deg);
    c.limb_angle_scale = j.value("limb_angle_scale", c.limb_angle_scale);
    c.thickness_min = j.value("thickness_min", c.thickness_min);
    c.thickness_max = j.value("thickness_max", c.thickness_max);
    c.noise = j.value("noise", c.noise);
    c.occlusion_prob = j.value("occlusion_prob", c.occlusion_prob);
    c.occluder_min = j.value("occluder_min", c.occluder_min);
    c.occluder_max = j.value("occluder_max", c.occluder_max);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json LabConfig::to_json() const {
  return {{"data",
           {{"seed", data.seed},
            {"train_count", data.train_count},
            {"val_count", data.val_count},
            {"synth", synth_to_json(data.synth)}}},
          {"teacher", {{"backbone", teacher.to_json()}, {"train", teacher_train.to_json()}}},
          {"student", {{"backbone", student.to_json()}, {"train", student_train.to_json()}}},
          {"stage2", stage2.to_json()},
          {"skeleton", skeleton}};
}

LabConfig LabConfig::from_json(const nlohmann::json& j) {
  LabConfig c;
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "lab config must be a JSON object");
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      c.data.seed = d.value("seed", c.data.seed);
      c.data.train_count = d.value("train_count", c.data.train_count);
      c.data.val_count = d.value("val_count", c.data.val_count);
      if (d.contains("synth")) c.data.synth = synth_from_json(d["synth"]);
    }
    auto model = [&](const char* key, BackboneConfig& bb, TrainConfig& tc) {
      if (!j.contains(key)) return;
      const auto& m = j[key];
      if (m.contains("backbone")) {
        auto merged = bb.to_json();
        merged.update(m["backbone"]);
        if (!m["backbone"].contains("internal_height")) merged["internal_height"] = merged["image_height"];
        if (!m["backbone"].contains("internal_width")) merged["internal_width"] = merged["image_width"];
        bb = BackboneConfig::from_json(merged);
      }
      if (m.contains("train")) tc = TrainConfig::from_json(m["train"]);
    };
    model("teacher", c.teacher, c.teacher_train);
    model("student", c.student, c.student_train);
    if (j.contains("stage2")) c.stage2 = Stage2Config::from_json(j["stage2"]);
    if (j.contains("skeleton")) c.skeleton = j["skeleton"];
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("lab config: ") + e.what());
  }
  if (c.data.synth.height != c.teacher.image_height || c.data.synth.width != c.teacher.image_width ||
      c.data.synth.channels != c.teacher.image_channels)
    throw Error(ErrorKind::InvalidConfig, "synthetic image extents differ from the teacher input");
  return c;
}

std::uint64_t LabConfig::hash() const {
  const auto s = to_json().dump();
  return fnv1a(s.data(), s.size());
}

LabConfig load_lab_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return LabConfig::from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

SkeletonSpec lab_skeleton(const LabConfig& config) {
  if (config.skeleton.is_null()) return stick_figure_skeleton();
  return skeleton_from_json_text(config.skeleton.dump());
}

Dataset make_train_split(const DataConfig& c) {
  return generate_dataset(Rng::derive(c.seed, 0), c.train_count, c.synth, 0);
}

Dataset make_val_split(const DataConfig& c) {
  return generate_dataset(Rng::derive(c.seed, 1), c.val_count, c.synth, 1000000);
}

const std::vector<SchemeSpec>& ablation_schemes() {
  static const std::vector<SchemeSpec> schemes = {
      {"baseline", {}, false, Stage2Target::Teacher, ""},
      {"scheme-1", {}, true, Stage2Target::GroundTruth, "baseline"},
      {"scheme-2", {true, false, false}, false, Stage2Target::Teacher, ""},
      {"scheme-3", {true, true, false}, false, Stage2Target::Teacher, ""},
      {"scheme-4", {true, false, true}, false, Stage2Target::Teacher, ""},
      {"scheme-5", {}, true, Stage2Target::Teacher, "baseline"},
      {"scheme-6", {true, false, true}, true, Stage2Target::Teacher, "scheme-4"},
  };
  return schemes;
}

const SchemeSpec& find_scheme(const std::string& name) {
  for (const auto& s : ablation_schemes())
    if (s.name == name) return s;
  throw Error(ErrorKind::InvalidArgument, "unknown scheme '" + name + "'");
}

double AblationTable::mean_of(const std::string& scheme, const std::function<double(const SchemeRun&)>& f) const {
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    if (schemes[i] != scheme) continue;
    double s = 0.0;
    for (const auto& r : runs[i]) s += f(r);
    return runs[i].empty() ? 0.0 : s / static_cast<double>(runs[i].size());
  }
  throw Error(ErrorKind::InvalidArgument, "scheme '" + scheme + "' not in table");
}

double AblationTable::mean_ap(const std::string& scheme) const {
  return mean_of(scheme, [](const SchemeRun& r) { return r.result.ap; });
}

namespace {

struct Column {
  const char* name;
  double (*get)(const SchemeRun&);
};

const Column kColumns[] = {
    {"ap", [](const SchemeRun& r) { return r.result.ap; }},
    {"ap50", [](const SchemeRun& r) { return r.result.ap50; }},
    {"ap75", [](const SchemeRun& r) { return r.result.ap75; }},
    {"ar", [](const SchemeRun& r) { return r.result.ar; }},
    {"pck", [](const SchemeRun& r) { return r.result.pck; }},
    {"mean_oks", [](const SchemeRun& r) { return r.result.mean_oks; }},
    {"occluded_err", [](const SchemeRun& r) { return r.result.occluded_err; }},
    {"visible_err", [](const SchemeRun& r) { return r.result.visible_err; }},
};

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "scheme,seeds";
  for (const auto& c : kColumns) os << ',' << c.name;
  os << ",ap_std\n";
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    os << schemes[i] << ',' << runs[i].size();
    for (const auto& c : kColumns) os << ',' << fixed(mean_of(schemes[i], c.get), 6);
    const double m = mean_ap(schemes[i]);
    double var = 0.0;
    for (const auto& r : runs[i]) var += (r.result.ap - m) * (r.result.ap - m);
    os << ',' << fixed(runs[i].size() > 1 ? std::sqrt(var / static_cast<double>(runs[i].size() - 1)) : 0.0, 6) << '\n';
  }
  return os.str();
}

std::string AblationTable::to_markdown() const {
  std::ostringstream os;
  os << "| scheme | OKS-AP | AP50 | AP75 | AR | PCK@0.1 | occluded err |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& s : schemes) {
    auto pts = [&](double (*g)(const SchemeRun&)) { return fixed(100.0 * mean_of(s, g), 2); };
    os << "| " << s << " | " << pts(kColumns[0].get) << " | " << pts(kColumns[1].get) << " | "
       << pts(kColumns[2].get) << " | " << pts(kColumns[3].get) << " | " << pts(kColumns[4].get) << " | "
       << fixed(mean_of(s, kColumns[6].get), 5) << " |\n";
  }
  return os.str();
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t s = 0; s < runs[i].size(); ++s) {
      nlohmann::json r = {{"seed", seeds[s]}};
      for (const auto& c : kColumns) r[c.name] = c.get(runs[i][s]);
      if (find_scheme(schemes[i]).gcn) r["initial_occluded_err"] = runs[i][s].initial.occluded_err;
      per_seed.push_back(r);
    }
    nlohmann::json row = {{"scheme", schemes[i]}, {"seeds", per_seed}};
    for (const auto& c : kColumns) row[std::string("mean_") + c.name] = mean_of(schemes[i], c.get);
    rows.push_back(row);
  }
  return {{"rows", rows}};
}

TrendCheck check_ablation_trend(const AblationTable& t, double tie_points, double min_gain) {
  TrendCheck out;
  auto ap = [&](const char* s) { return 100.0 * t.mean_ap(s); };
  const std::pair<const char*, const char*> pairs[] = {{"baseline", "scheme-2"}, {"scheme-2", "scheme-4"},
                                                       {"baseline", "scheme-1"}, {"scheme-1", "scheme-5"},
                                                       {"scheme-5", "scheme-6"}};
  std::ostringstream os;
  bool ok = true;
  for (const auto& [a, b] : pairs) {
    const double d = ap(b) - ap(a);
    os << a << "->" << b << " " << (d >= 0 ? "+" : "") << fixed(d, 2) << "; ";
    if (d >= 0.0) continue;
    if (-d <= tie_points)
      ++out.ties;
    else
      ok = false;
  }
  out.gain = ap("scheme-6") - ap("baseline");
  os << "scheme-6 - baseline " << fixed(out.gain, 2) << " AP points";
  out.pass = ok && out.ties <= 1 && out.gain >= min_gain;
  out.detail = os.str();
  return out;
}

AblationTable run_ablation(const LabConfig& config, const Checkpoint& teacher, const Dataset& train, const Dataset& val,
                           const SkeletonSpec& skel, std::span<const std::uint64_t> seeds,
                           const std::function<void(const std::string&)>& log) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidArgument, "ablation needs at least one seed");
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    log(line);
  };

  const auto& schemes = ablation_schemes();
  std::vector<const SchemeSpec*> stage1, stage2;
  for (const auto& s : schemes) (s.gcn ? stage2 : stage1).push_back(&s);

  // Stage-1 students, [stage1 scheme][seed].
  std::vector<std::vector<Checkpoint>> students(stage1.size(), std::vector<Checkpoint>(seeds.size()));
  std::map<std::string, std::vector<SchemeRun>> runs;
  for (const auto& s : schemes) runs[s.name].resize(seeds.size());

  bool any_feature = false;
  for (const auto* s : stage1) any_feature = any_feature || s->stage1.feature;
  TeacherOutputs tout = teacher_outputs(posenet_from_checkpoint(teacher), train, any_feature);

  parallel_for(stage1.size() * seeds.size(), [&](std::size_t job) {
    const auto& sc = *stage1[job / seeds.size()];
    const std::size_t si = job % seeds.size();
    TrainConfig tc = config.student_train;
    tc.seed = seeds[si];
    tc.flags = sc.stage1;
    tc.log = nullptr;
    auto r = run_stage1(teacher, config.student, train, val, skel, tc, &tout);
    runs.at(sc.name)[si].result = r.validation;
    students[job / seeds.size()][si] = std::move(r.checkpoint);
    say(sc.name + " seed " + std::to_string(seeds[si]) + ": AP " + fixed(100.0 * r.validation.ap, 2));
  });

  auto student_of = [&](const std::string& name, std::size_t si) -> const Checkpoint& {
    for (std::size_t i = 0; i < stage1.size(); ++i)
      if (stage1[i]->name == name) return students[i][si];
    throw Error(ErrorKind::InvalidArgument, "no stage-1 scheme named " + name);
  };

  std::vector<Tensor>().swap(tout.feature);

  parallel_for(stage2.size() * seeds.size(), [&](std::size_t job) {
    const auto& sc = *stage2[job / seeds.size()];
    const std::size_t si = job % seeds.size();
    Stage2Config s2 = config.stage2;
    s2.seed = seeds[si];
    s2.target = sc.target;
    s2.log = nullptr;
    auto r = run_stage2(&teacher, student_of(sc.student_from, si), train, val, skel, s2, tout.pose);
    runs.at(sc.name)[si] = {r.val_refined, r.val_init};
    say(sc.name + " seed " + std::to_string(seeds[si]) + ": AP " + fixed(100.0 * r.val_refined.ap, 2) +
        " (student " + fixed(100.0 * r.val_init.ap, 2) + ")");
  });

  AblationTable table;
  table.seeds.assign(seeds.begin(), seeds.end());
  for (const auto& s : schemes) {
    table.schemes.push_back(s.name);
    table.runs.push_back(runs[s.name]);
  }
  return table;
}

}  // namespace kplab
