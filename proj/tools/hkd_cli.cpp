// hkd: command-line driver for data generation, training, distillation,
// evaluation and the supervision ablation.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "hkd/checkpoint.hpp"
#include "hkd/experiment.hpp"
#include "hkd/gradcheck.hpp"
#include "hkd/run_config.hpp"
#include "hkd/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run configuration file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed", c.seed, "run seed (overrides train.seed; ablate runs only this seed)");
  cmd->add_option("--set", c.set, "extra key=value assignments applied after the config file");
}

hkd::RunConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? hkd::RunConfig{} : hkd::load_run_config(c.config);
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw hkd::ConfigError("--set expects key=value, got '" + kv + "'");
    hkd::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.ablate_seeds = {*c.seed};
  }
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "run.cfg") << hkd::write_run_config(cfg);
  return cfg;
}

std::ofstream open_log(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

hkd::StepCallback json_logger(std::ofstream& os, std::size_t steps_per_epoch) {
  return [&os, steps_per_epoch](const hkd::StepRecord& r) {
    json j{{"epoch", r.epoch},           {"step", r.step},         {"lr", r.lr}, {"grad_norm", r.grad_norm},
           {"det_loss", r.detection_loss}, {"rpn_loss", r.rpn_loss}, {"pd", r.distill.pd},
           {"rd", r.distill.rd},           {"ld", r.distill.ld},     {"distill", r.distill.total},
           {"total", r.total_loss}};
    os << j.dump() << '\n';
    if ((r.step + 1) % steps_per_epoch == 0) {
      std::cerr << "epoch " << r.epoch << " done (step " << r.step + 1 << ", last loss " << r.total_loss << ")\n";
    }
  };
}

void print_params(const hkd::RunConfig& cfg) {
  const auto t = hkd::parameter_count(cfg.teacher);
  const auto s = hkd::parameter_count(cfg.student);
  std::printf("parameters: teacher %zu, student %zu, ratio %.2f\n", t, s, static_cast<double>(t) / static_cast<double>(s));
}

void write_metrics(const fs::path& path, const std::string& model, const hkd::EvalOutcome& e) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "model\tMR-reasonable\tMR-small\n"
     << model << '\t' << hkd::format_percent(e.mr.reasonable) << '\t' << hkd::format_percent(e.mr.small) << '\n';
}

void report_eval(const fs::path& dir, const std::string& model, const hkd::EvalOutcome& e) {
  write_metrics(dir / "metrics.tsv", model, e);
  if (!e.reasonable.points.empty()) hkd::write_curve_tsv(dir / "curve_reasonable.tsv", e.reasonable);
  if (!e.small.points.empty()) hkd::write_curve_tsv(dir / "curve_small.tsv", e.small);
  std::printf("%s\tMR-reasonable %s\tMR-small %s\n", model.c_str(), hkd::format_percent(e.mr.reasonable).c_str(),
              hkd::format_percent(e.mr.small).c_str());
}

int cmd_gradcheck(std::uint64_t seed) {
  hkd::GradcheckOptions opts;
  opts.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  auto results = hkd::run_op_gradchecks(opts);
  results.push_back(hkd::run_end_to_end_gradcheck(opts));
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-28s %s  max rel err %.3e (tol %.0e, %zu instances)\n", r.name.c_str(), r.passed() ? "ok  " : "FAIL",
                r.max_rel_error, r.tolerance, r.instances);
    ok = ok && r.passed();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu checks, %s, %.1f s\n", results.size(), ok ? "all passed" : "FAILURES", secs);
  return ok ? 0 : 1;
}

int cmd_gen_data(const hkd::RunConfig& cfg, bool images) {
  print_params(cfg);
  const auto data = hkd::generate_dataset(cfg.dataset);
  for (const auto& [split, scenes] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    const auto dir = cfg.out_dir / "data" / split;
    fs::create_directories(dir);
    hkd::write_annotations(dir / "annotations.txt", hkd::annotations_of(*scenes));
    if (images) {
      for (const auto& s : *scenes) hkd::write_ppm(dir / (s.id + ".ppm"), s);
    }
    std::size_t boxes = 0;
    for (const auto& s : *scenes) boxes += s.annotations.size();
    std::printf("%s: %zu scenes, %zu boxes -> %s\n", split, scenes->size(), boxes, dir.c_str());
  }
  return 0;
}

int cmd_train_teacher(const hkd::RunConfig& cfg) {
  print_params(cfg);
  const auto data = hkd::generate_dataset(cfg.dataset);
  auto log = open_log(cfg.out_dir / "teacher_log.jsonl");
  const auto ckpt = cfg.out_dir / "teacher.ckpt";
  auto result = hkd::train_teacher(data.train, cfg.teacher, cfg.train, ckpt, json_logger(log, data.train.size()));
  std::printf("teacher checkpoint %s sha256 %s\n", ckpt.c_str(), hkd::file_sha256(ckpt).c_str());
  report_eval(cfg.out_dir, "teacher", hkd::evaluate_model(result.model, data.test, cfg.eval));
  return 0;
}

int cmd_distill(const hkd::RunConfig& cfg, const std::string& teacher_path) {
  print_params(cfg);
  const fs::path teacher_ckpt = teacher_path.empty() ? cfg.out_dir / "teacher.ckpt" : fs::path(teacher_path);
  if (!fs::exists(teacher_ckpt)) throw std::runtime_error("teacher checkpoint " + teacher_ckpt.string() + " not found");
  const auto data = hkd::generate_dataset(cfg.dataset);
  auto log = open_log(cfg.out_dir / "student_log.jsonl");
  const auto ckpt = cfg.out_dir / "student.ckpt";
  std::printf("distillation %s\n", cfg.train.distill.flags_str().c_str());
  auto result = hkd::distill_student(data.train, cfg.teacher, teacher_ckpt, cfg.student, cfg.train, ckpt,
                                     json_logger(log, data.train.size()));
  std::printf("student checkpoint %s sha256 %s\n", ckpt.c_str(), hkd::file_sha256(ckpt).c_str());
  report_eval(cfg.out_dir, "student", hkd::evaluate_model(result.model, data.test, cfg.eval));
  return 0;
}

int cmd_eval(const hkd::RunConfig& cfg, const std::string& dets, const std::string& gt, const std::string& checkpoint,
             const std::string& role) {
  if (!dets.empty() || !gt.empty()) {
    if (dets.empty() || gt.empty()) throw std::runtime_error("file mode needs both --dets and --gt");
    report_eval(cfg.out_dir, "detections", hkd::evaluate_detections(hkd::read_detections(dets), hkd::read_annotations(gt), cfg.eval));
    return 0;
  }
  const bool is_teacher = role == "teacher";
  const fs::path ckpt = checkpoint.empty() ? cfg.out_dir / (is_teacher ? "teacher.ckpt" : "student.ckpt") : fs::path(checkpoint);
  hkd::Detector net(is_teacher ? cfg.teacher : cfg.student, 0);
  net.load(ckpt);
  const auto data = hkd::generate_dataset(cfg.dataset);
  auto outcome = hkd::evaluate_model(net, data.test, cfg.eval);
  hkd::write_detections(cfg.out_dir / "detections.txt", outcome.detections);
  report_eval(cfg.out_dir, role, outcome);
  return 0;
}

int cmd_ablate(const hkd::RunConfig& cfg) {
  print_params(cfg);
  const auto data = hkd::generate_dataset(cfg.dataset);
  auto report = hkd::run_ablation(cfg, data, cfg.out_dir, [](const std::string& m) { std::cerr << m << '\n'; });
  const auto table = hkd::ablation_table(report);
  std::ofstream(cfg.out_dir / "ablation.tsv") << table;
  std::ofstream(cfg.out_dir / "ablation_seeds.tsv") << hkd::ablation_seed_table(report);
  std::printf("parameter ratio (teacher / student) %.2f\n%s", report.parameter_ratio(), table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical knowledge distillation for two-stage pedestrian detectors"};
  app.require_subcommand(1);

  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--seed", gc_seed, "seed for the random instances");

  Common gen_c, teach_c, dist_c, eval_c, abl_c;
  bool images = false;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark and write annotations");
  add_common(gen, gen_c);
  gen->add_flag("--images", images, "also write each scene as a PPM image");

  auto* teach = app.add_subcommand("train-teacher", "train the teacher detector");
  add_common(teach, teach_c);

  std::string teacher_path;
  auto* dist = app.add_subcommand("distill", "train the student with the distillation objective");
  add_common(dist, dist_c);
  dist->add_option("--teacher", teacher_path, "teacher checkpoint (default <out>/teacher.ckpt)");

  std::string dets, gt, checkpoint, role = "student";
  auto* ev = app.add_subcommand("eval", "score detections (--dets/--gt) or a checkpoint on the test split");
  add_common(ev, eval_c);
  ev->add_option("--dets", dets, "detections file: image_id x1 y1 x2 y2 score");
  ev->add_option("--gt", gt, "annotations file: image_id x1 y1 x2 y2 visibility");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--role", role, "network configuration of the checkpoint")->check(CLI::IsMember({"teacher", "student"}));

  auto* abl = app.add_subcommand("ablate", "run the eight supervision configurations over the configured seeds");
  add_common(abl, abl_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
    if (gen->parsed()) return cmd_gen_data(resolve(gen_c), images);
    if (teach->parsed()) return cmd_train_teacher(resolve(teach_c));
    if (dist->parsed()) return cmd_distill(resolve(dist_c), teacher_path);
    if (ev->parsed()) return cmd_eval(resolve(eval_c), dets, gt, checkpoint, role);
    if (abl->parsed()) return cmd_ablate(resolve(abl_c));
  } catch (const std::exception& e) {
    std::cerr << "hkd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
