#include "kplab/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "kplab/coco.hpp"
#include "kplab/experiment.hpp"
#include "kplab/report.hpp"

namespace kplab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string dataset;
  std::string teacher;
  std::string student;
  std::string gcn;
  std::string scheme;
  std::string split = "val";
  std::string gcn_target = "teacher";
  std::size_t seeds = 5;
  std::optional<std::size_t> count;
  std::optional<std::size_t> val_count;
  std::optional<double> occlusion;
  std::vector<std::string> inputs;
  bool quiet = false;
};

std::int64_t now_epoch() {
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      return std::stoll(s);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "SOURCE_DATE_EPOCH is not an integer");
    }
  }
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

class Run {
 public:
  Run(std::string command, const Options& o, std::ostream& err) : command_(std::move(command)), o_(o), err_(err) {
    started_ = now_epoch();
    out_ = o.out;
    fs::create_directories(out_);
    config_ = o.config.empty() ? LabConfig{} : load_lab_config(o.config);
    if (!o.config.empty()) inputs_[o.config] = hex64(file_hash(o.config));
  }

  LabConfig& config() { return config_; }
  const fs::path& out() const { return out_; }

  std::function<void(const std::string&)> logger() {
    if (o_.quiet) return {};
    return [this](const std::string& line) { err_ << line << '\n'; };
  }
  void say(const std::string& line) {
    if (!o_.quiet) err_ << line << '\n';
  }

  void input(const fs::path& p) { inputs_[p.string()] = hex64(file_hash(p)); }

  void write(const std::string& name, const std::string& bytes) {
    write_file_atomic(out_ / name, bytes);
    outputs_.push_back(name);
  }
  void write_checkpoint(const std::string& name, const Checkpoint& ck) { write(name, serialize_checkpoint(ck)); }
  void produced(const std::string& name) { outputs_.push_back(name); }

  void finish(std::uint64_t seed) {
    json outputs = json::array();
    for (const auto& name : outputs_) outputs.push_back({{"path", name}, {"hash", hex64(file_hash(out_ / name))}});
    json inputs = json::object();
    for (const auto& [k, v] : inputs_) inputs[k] = v;
    const json manifest = {{"command", command_},
                           {"config_hash", hex64(config_.hash())},
                           {"config", config_.to_json()},
                           {"seed", seed},
                           {"timestamps", {{"started", started_}, {"finished", now_epoch()}}},
                           {"inputs", inputs},
                           {"outputs", outputs}};
    write_file_atomic(out_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::string command_;
  const Options& o_;
  std::ostream& err_;
  std::int64_t started_ = 0;
  fs::path out_;
  LabConfig config_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

Dataset load_split(Run& run, const std::string& dir, const std::string& split) {
  if (dir.empty()) throw Error(ErrorKind::InvalidArgument, "--dataset is required");
  const fs::path p = fs::path(dir) / (split + ".json");
  run.input(p);
  auto d = load_coco_keypoints(p);
  if (d.empty()) throw Error(ErrorKind::EmptyDataset, p.string() + " holds no annotated samples");
  for (const auto& s : d)
    if (!s.image.defined()) throw Error(ErrorKind::ParseError, p.string() + " has no image sidecar");
  return d;
}

Checkpoint load_ckpt(Run& run, const std::string& path, const char* flag) {
  if (path.empty()) throw Error(ErrorKind::InvalidArgument, std::string("--") + flag + " is required");
  run.input(path);
  return load_checkpoint(path);
}

std::string report_svg(const CsvTable& t, const std::string& title) {
  return render_svg(curves_from_csv(t), title);
}

int cmd_gen_data(const Options& o, std::ostream& err) {
  Run run("gen-data", o, err);
  auto& d = run.config().data;
  if (o.seed) d.seed = *o.seed;
  if (o.count) d.train_count = *o.count;
  if (o.val_count) d.val_count = *o.val_count;
  if (o.occlusion) {
    d.synth.occlusion_prob = *o.occlusion;
    d.synth.validate();
  }
  const auto skel = lab_skeleton(run.config());
  if (d.train_count > 0) {
    export_coco_keypoints(make_train_split(d), skel, run.out() / "train.json");
    run.produced("train.json");
    run.produced("train.images.bin");
  }
  if (d.val_count > 0) {
    export_coco_keypoints(make_val_split(d), skel, run.out() / "val.json");
    run.produced("val.json");
    run.produced("val.images.bin");
  }
  run.say("wrote " + std::to_string(d.train_count) + " train and " + std::to_string(d.val_count) + " val samples to " +
          run.out().string());
  run.finish(d.seed);
  return 0;
}

void write_stage1(Run& run, const std::string& stem, const TrainResult& r) {
  run.write_checkpoint(stem + ".kpckpt", r.checkpoint);
  run.write(stem + "_report.csv", r.report.to_csv());
  run.write(stem + "_report.json", r.report.to_json().dump(2) + "\n");
  run.write(stem + "_report.svg", report_svg(parse_csv(r.report.to_csv()), stem + " training"));
  run.write(stem + "_metrics.json", metrics_to_json(r.validation).dump(2) + "\n");
}

int cmd_train_teacher(const Options& o, std::ostream& err) {
  Run run("train-teacher", o, err);
  auto tc = run.config().teacher_train;
  if (o.seed) tc.seed = *o.seed;
  tc.log = run.logger();
  run.config().teacher_train = tc;
  const auto skel = lab_skeleton(run.config());
  const auto train = load_split(run, o.dataset, "train");
  const auto val = load_split(run, o.dataset, "val");
  const auto r = train_teacher(run.config().teacher, train, val, skel, tc);
  write_stage1(run, "teacher", r);
  run.say("teacher val PCK@0.1 " + std::to_string(r.validation.pck) + ", OKS-AP " + std::to_string(r.validation.ap));
  run.finish(tc.seed);
  return 0;
}

int cmd_stage1(const Options& o, std::ostream& err) {
  Run run("distill-stage1", o, err);
  const auto& sc = find_scheme(o.scheme.empty() ? "scheme-4" : o.scheme);
  if (sc.gcn) throw Error(ErrorKind::InvalidArgument, sc.name + " is a stage-2 scheme; use distill-stage2");
  auto tc = run.config().student_train;
  if (o.seed) tc.seed = *o.seed;
  tc.flags = sc.stage1;
  tc.log = run.logger();
  run.config().student_train = tc;
  const auto teacher = load_ckpt(run, o.teacher, "teacher");
  const auto skel = lab_skeleton(run.config());
  const auto train = load_split(run, o.dataset, "train");
  const auto val = load_split(run, o.dataset, "val");
  const auto r = run_stage1(teacher, run.config().student, train, val, skel, tc);
  write_stage1(run, "student", r);
  run.say(sc.name + " student val OKS-AP " + std::to_string(r.validation.ap));
  run.finish(tc.seed);
  return 0;
}

int cmd_stage2(const Options& o, std::ostream& err) {
  Run run("distill-stage2", o, err);
  auto s2 = run.config().stage2;
  if (o.seed) s2.seed = *o.seed;
  if (o.gcn_target == "teacher")
    s2.target = Stage2Target::Teacher;
  else if (o.gcn_target == "ground_truth")
    s2.target = Stage2Target::GroundTruth;
  else
    throw Error(ErrorKind::InvalidArgument, "--target must be teacher or ground_truth");
  s2.log = run.logger();
  run.config().stage2 = s2;
  std::optional<Checkpoint> teacher;
  if (s2.target == Stage2Target::Teacher) teacher = load_ckpt(run, o.teacher, "teacher");
  const auto student = load_ckpt(run, o.student, "student");
  const auto skel = lab_skeleton(run.config());
  const auto train = load_split(run, o.dataset, "train");
  const auto val = load_split(run, o.dataset, "val");
  const auto r = run_stage2(teacher ? &*teacher : nullptr, student, train, val, skel, s2);
  run.write_checkpoint("igpgcn.kpckpt", r.checkpoint);
  run.write("stage2_report.csv", r.report.to_csv());
  run.write("stage2_report.json", r.report.to_json().dump(2) + "\n");
  run.write("stage2_report.svg", report_svg(parse_csv(r.report.to_csv()), "stage-2 training"));
  run.write("stage2_metrics.json",
            json{{"initial", metrics_to_json(r.val_init)}, {"refined", metrics_to_json(r.val_refined)}}.dump(2) + "\n");
  run.say("stage 2 val OKS-AP " + std::to_string(r.val_init.ap) + " -> " + std::to_string(r.val_refined.ap) +
          ", occluded error " + std::to_string(r.val_init.occluded_err) + " -> " +
          std::to_string(r.val_refined.occluded_err));
  run.finish(s2.seed);
  return 0;
}

int cmd_eval(const Options& o, std::ostream& err) {
  Run run("eval", o, err);
  if (o.split != "train" && o.split != "val") throw Error(ErrorKind::InvalidArgument, "--split must be train or val");
  const std::string& model = !o.student.empty() ? o.student : o.teacher;
  if (model.empty()) throw Error(ErrorKind::InvalidArgument, "eval needs --student or --teacher");
  const auto ck = load_ckpt(run, model, o.student.empty() ? "teacher" : "student");
  const auto net = posenet_from_checkpoint(ck);
  const auto skel = lab_skeleton(run.config());
  const auto data = load_split(run, o.dataset, o.split);
  EvalResult r;
  if (!o.gcn.empty()) {
    const auto gcn = load_ckpt(run, o.gcn, "gcn");
    const auto refined = refine_dataset(net, gcn, data, skel);
    std::vector<Pose> poses;
    std::vector<double> conf;
    for (const auto& p : refined) {
      poses.push_back(p.refined);
      conf.push_back(p.confidence);
    }
    r = evaluate(poses, conf, data, skel);
  } else {
    r = evaluate_posenet(net, data, skel);
  }
  run.write("metrics.json", metrics_to_json(r).dump(2) + "\n");
  run.write("metrics.csv", metrics_to_csv(r));
  run.say(o.split + ": OKS-AP " + std::to_string(r.ap) + ", AP50 " + std::to_string(r.ap50) + ", PCK@0.1 " +
          std::to_string(r.pck));
  run.finish(o.seed.value_or(0));
  return 0;
}

int cmd_ablation(const Options& o, std::ostream& err, std::ostream& out) {
  Run run("ablation", o, err);
  if (o.seeds == 0) throw Error(ErrorKind::InvalidArgument, "--seeds must be positive");
  const auto skel = lab_skeleton(run.config());
  const auto train = load_split(run, o.dataset, "train");
  const auto val = load_split(run, o.dataset, "val");
  Checkpoint teacher;
  if (!o.teacher.empty()) {
    teacher = load_ckpt(run, o.teacher, "teacher");
  } else {
    auto tc = run.config().teacher_train;
    tc.log = run.logger();
    auto r = train_teacher(run.config().teacher, train, val, skel, tc);
    teacher = std::move(r.checkpoint);
    run.write_checkpoint("teacher.kpckpt", teacher);
  }
  const std::uint64_t base = o.seed.value_or(1);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.seeds; ++i) seeds.push_back(base + i);
  const auto table = run_ablation(run.config(), teacher, train, val, skel, seeds, run.logger());
  const auto trend = check_ablation_trend(table);
  run.write("ablation.csv", table.to_csv());
  run.write("ablation.md", table.to_markdown());
  auto j = table.to_json();
  j["trend"] = {{"pass", trend.pass}, {"gain", trend.gain}, {"ties", trend.ties}, {"detail", trend.detail}};
  run.write("ablation.json", j.dump(2) + "\n");
  out << table.to_markdown() << "trend: " << (trend.pass ? "holds" : "does not hold") << " (" << trend.detail << ")\n";
  run.finish(base);
  return 0;
}

int cmd_report(const Options& o, std::ostream& err) {
  Run run("report", o, err);
  if (o.inputs.empty()) throw Error(ErrorKind::InvalidArgument, "report needs at least one CSV input");
  for (const auto& in : o.inputs) {
    run.input(in);
    const fs::path p(in);
    run.write(p.stem().string() + ".svg", report_svg(parse_csv(read_file(p)), p.stem().string()));
  }
  run.finish(o.seed.value_or(0));
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"kplab: two-stage pose distillation laboratory", "kplab"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "lab config JSON")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "seed override");
    c->add_option("--out", o.out, "output directory");
    c->add_flag("--quiet", o.quiet, "suppress progress output");
  };
  auto* gen = app.add_subcommand("gen-data", "render the synthetic train/val splits");
  common(gen);
  gen->add_option("--count", o.count, "training samples");
  gen->add_option("--val-count", o.val_count, "validation samples");
  gen->add_option("--occlusion", o.occlusion, "per-joint occlusion probability")->check(CLI::Range(0.0, 1.0));

  auto* tt = app.add_subcommand("train-teacher", "train the teacher network");
  common(tt);
  tt->add_option("--dataset", o.dataset, "dataset directory")->required();

  auto* s1 = app.add_subcommand("distill-stage1", "feature and skeleton-aware pose distillation");
  common(s1);
  s1->add_option("--dataset", o.dataset, "dataset directory")->required();
  s1->add_option("--teacher", o.teacher, "teacher checkpoint")->required();
  s1->add_option("--scheme", o.scheme, "baseline, scheme-2, scheme-3 or scheme-4 (default)");

  auto* s2 = app.add_subcommand("distill-stage2", "train the IGP-GCN refiner on a frozen student");
  common(s2);
  s2->add_option("--dataset", o.dataset, "dataset directory")->required();
  s2->add_option("--teacher", o.teacher, "teacher checkpoint");
  s2->add_option("--student", o.student, "student checkpoint")->required();
  s2->add_option("--target", o.gcn_target, "teacher or ground_truth");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  common(ev);
  ev->add_option("--dataset", o.dataset, "dataset directory")->required();
  ev->add_option("--teacher", o.teacher, "teacher checkpoint");
  ev->add_option("--student", o.student, "student checkpoint");
  ev->add_option("--gcn", o.gcn, "IGP-GCN checkpoint refining the student");
  ev->add_option("--split", o.split, "train or val");

  auto* ab = app.add_subcommand("ablation", "baseline and schemes 1-6 over several seeds");
  common(ab);
  ab->add_option("--dataset", o.dataset, "dataset directory")->required();
  ab->add_option("--teacher", o.teacher, "teacher checkpoint (trained from the config when absent)");
  ab->add_option("--seeds", o.seeds, "number of seeds");

  auto* rp = app.add_subcommand("report", "render CSV reports as SVG charts");
  common(rp);
  rp->add_option("inputs", o.inputs, "CSV files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "usage error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  auto* sub = app.get_subcommands().front();
  try {
    const auto name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(o, err);
    if (name == "train-teacher") return cmd_train_teacher(o, err);
    if (name == "distill-stage1") return cmd_stage1(o, err);
    if (name == "distill-stage2") return cmd_stage2(o, err);
    if (name == "eval") return cmd_eval(o, err);
    if (name == "ablation") return cmd_ablation(o, err, out);
    return cmd_report(o, err);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int run_command(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace kplab
