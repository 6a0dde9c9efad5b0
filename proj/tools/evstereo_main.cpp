#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evstereo/config.hpp"
#include "evstereo/errors.hpp"
#include "evstereo/evaluation.hpp"
#include "evstereo/events.hpp"
#include "evstereo/gradsuite.hpp"
#include "evstereo/pipeline.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/synthgen.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace evstereo;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes.data(), bytes.size()));
  return buf;
}

// Events by extension: .evt1 carries its own sensor size (checked against the
// calibration), anything else is read as CSV with the calibrated size.
EventStream load_events_any(const std::string& path, const StereoRig& rig) {
  EventStream s;
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".evt1") == 0) {
    s = load_events_evt1(path);
    contract(s.width == rig.width && s.height == rig.height,
             path + ": sensor size does not match the calibration");
  } else {
    s = load_events_csv(path, rig.width, rig.height);
  }
  validate_stream(s);
  return s;
}

std::string join_instants(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

void cmd_synth(const std::string& scene_path, const std::string& out_dir) {
  SceneSpec scene = load_scene(scene_path);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  StereoEvents ev = render_events(scene);
  save_events_evt1(out_dir + "/left.evt1", ev.left);
  save_events_evt1(out_dir + "/right.evt1", ev.right);
  save_calibration(out_dir + "/calibration.json", scene.rig);

  // The finest slicing protocol's instants; every coarser protocol over the
  // full duration queries a subset of them.
  std::vector<int64_t> instants = blind_time_instants(0, scene.duration_us, 20);
  save_annotations(out_dir + "/annotations.json", emit_ground_truth(scene, instants));

  nlohmann::json files = nlohmann::json::object();
  for (const char* name : {"left.evt1", "right.evt1", "calibration.json", "annotations.json"}) {
    std::string bytes = file_bytes(out_dir + "/" + name);
    files[name] = {{"fnv1a64", hash_hex(bytes)}, {"bytes", bytes.size()}};
  }
  std::ofstream mf(out_dir + "/manifest.json", std::ios::binary);
  if (!mf) throw IoError("cannot write " + out_dir + "/manifest.json");
  mf << nlohmann::json{{"files", files}}.dump(2) << "\n";

  std::printf("wrote %s: %zu left events, %zu right events, ground truth at %zu instants\n",
              out_dir.c_str(), ev.left.events.size(), ev.right.events.size(), instants.size());
}

struct LoadedRun {
  RunConfig cfg;
  StereoRig rig;
  EventStream left, right;
};

LoadedRun load_run_inputs(const std::string& config_path) {
  LoadedRun r;
  r.cfg = load_config(config_path);
  r.rig = load_calibration(r.cfg.calibration);
  r.left = load_events_any(r.cfg.events_left, r.rig);
  r.right = load_events_any(r.cfg.events_right, r.rig);
  return r;
}

void cmd_train_toy(const std::string& config_path, int64_t steps, std::string out_dir) {
  LoadedRun run = load_run_inputs(config_path);
  const RunConfig& cfg = run.cfg;
  if (out_dir.empty()) out_dir = cfg.weights_dir;
  contract(!out_dir.empty(), "no weights directory: set --out or the config weights_dir");

  int64_t n_events = int64_t(run.left.events.size() + run.right.events.size());
  contract(n_events <= cfg.max_train_events,
           "refusing to train on " + std::to_string(n_events) + " events (cap " +
               std::to_string(cfg.max_train_events) +
               "): this build trains desk-scale synthetic scenes only");

  auto gt_frames = load_annotations(cfg.annotations);
  std::map<int64_t, const GroundTruthFrame*> by_t;
  for (const auto& f : gt_frames) by_t[f.t_us] = &f;

  std::vector<int64_t> instants =
      blind_time_instants(cfg.t_start_us, cfg.t_end_us, cfg.time_slice);
  std::vector<int64_t> missing;
  for (int64_t tau : instants)
    if (!by_t.count(tau)) missing.push_back(tau);
  contract(missing.empty(), "annotations have no frame at: " + join_instants(missing));

  auto covered = [&](const EventStream& s, int64_t tau) {
    if (s.empty()) return true;
    return tau > s.t_first() && tau - int64_t(cfg.motion_scale) * cfg.dtau_us <= s.t_last();
  };
  std::vector<TrainSample> samples;
  for (int64_t tau : instants) {
    if (!covered(run.left, tau) || !covered(run.right, tau)) continue;
    BlindWindow w{tau, cfg.dtau_us, cfg.motion_scale, cfg.time_slice};
    samples.push_back({accumulate_motion_scaled(run.left, w, cfg.backbone.bins),
                       accumulate_motion_scaled(run.right, w, cfg.backbone.bins),
                       by_t.at(tau)->boxes});
  }
  contract(!samples.empty(), "no instant's lookback window overlaps the event streams");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::ofstream log(out_dir + "/loss_log.csv", std::ios::binary);
  if (!log) throw IoError("cannot write " + out_dir + "/loss_log.csv");
  log << "step,depth_init,depth_refine,aux_2d,cls,reg_global,reg_local,total\n";

  auto params = init_model_params(cfg);
  AdamWState opt;
  for (int64_t i = 0; i < steps; ++i) {
    LossBreakdown lb = train_step(params, opt, cfg, run.rig, samples[size_t(i) % samples.size()]);
    char row[256];
    std::snprintf(row, sizeof(row),
                  "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, lb.depth_init,
                  lb.depth_refine, lb.aux_2d, lb.cls, lb.reg_global, lb.reg_local, lb.total);
    log << row;
    if ((i + 1) % 100 == 0 || i + 1 == steps)
      std::fprintf(stderr, "step %" PRId64 "/%" PRId64 " total %.6g\n", i + 1, steps, lb.total);
  }
  log.close();
  save_model(out_dir, cfg, params);
  std::printf("trained %" PRId64 " steps on %zu instants; weights in %s\n", steps,
              samples.size(), out_dir.c_str());
}

void cmd_infer(const std::string& config_path, std::string weights_dir,
               const std::string& out_path) {
  LoadedRun run = load_run_inputs(config_path);
  if (weights_dir.empty()) weights_dir = run.cfg.weights_dir;
  contract(!weights_dir.empty(), "no weights directory: set --weights or the config weights_dir");
  auto params = load_model(weights_dir, run.cfg);

  std::vector<int64_t> skipped;
  auto frames = run_inference(params, run.cfg, run.rig, run.left, run.right, &skipped);
  for (int64_t tau : skipped)
    std::fprintf(stderr, "warning: skipped instant %" PRId64 ": lookback window outside the recorded span\n",
                 tau);
  save_detections(out_path, frames);
  std::printf("wrote %zu frames (%zu skipped) to %s\n", frames.size(), skipped.size(),
              out_path.c_str());
}

void cmd_eval(const std::string& config_path, const std::string& det_path,
              std::string ann_path, const std::string& out_path) {
  RunConfig cfg = load_config(config_path);
  if (ann_path.empty()) ann_path = cfg.annotations;
  contract(!ann_path.empty(), "no annotations: set --annotations or the config annotations path");

  auto det_frames = load_detections(det_path);
  auto gt_frames = load_annotations(ann_path);
  std::map<int64_t, DetectionFrame> det_by_t;
  for (const auto& f : det_frames) det_by_t[f.t_us] = f;
  std::map<int64_t, GroundTruthFrame> gt_by_t;
  for (const auto& f : gt_frames) gt_by_t[f.t_us] = f;

  std::vector<int64_t> instants =
      blind_time_instants(cfg.t_start_us, cfg.t_end_us, cfg.time_slice);
  std::set<int64_t> wanted(instants.begin(), instants.end());
  std::vector<int64_t> gt_missing, det_missing, det_extra;
  for (int64_t tau : instants) {
    if (!gt_by_t.count(tau)) gt_missing.push_back(tau);
    if (!det_by_t.count(tau)) det_missing.push_back(tau);
  }
  for (const auto& f : det_frames)
    if (!wanted.count(f.t_us)) det_extra.push_back(f.t_us);
  contract(gt_missing.empty(), "annotations missing instants: " + join_instants(gt_missing));
  contract(det_missing.empty(), "detections missing instants: " + join_instants(det_missing));
  contract(det_extra.empty(),
           "detections carry frames outside the protocol: " + join_instants(det_extra));

  std::vector<DetectionFrame> dets;
  std::vector<GroundTruthFrame> gts;
  for (int64_t tau : instants) {
    dets.push_back(det_by_t.at(tau));
    gts.push_back(gt_by_t.at(tau));
  }

  std::vector<APResult> results;
  for (int class_id : {0, 1}) {
    double thr = class_id == 0 ? 0.7 : 0.5;
    for (Difficulty diff : {Difficulty::easy, Difficulty::moderate})
      for (ApMetric metric : {ApMetric::ap_3d, ApMetric::ap_bev})
        results.push_back(ap_compute(dets, gts, class_id, thr, diff, metric));
  }
  save_results_csv(out_path, results, cfg.motion_scale, cfg.time_slice);
  for (const auto& r : results)
    std::printf("%s %s %s: %.2f\n", class_name(r.class_id), difficulty_name(r.difficulty),
                metric_name(r.metric), r.value);
  std::printf("wrote %zu rows to %s\n", results.size(), out_path.c_str());
}

void cmd_gradcheck(uint64_t seed, const std::string& fault_op, double fault_scale) {
  if (!fault_op.empty())
    std::printf("fault injected: backward of '%s' scaled by %g\n", fault_op.c_str(), fault_scale);
  GradReport report = run_gradient_suite(seed, 1e-5, fault_op, fault_scale);
  for (const auto& c : report.cases)
    std::printf("%-44s %s  max_rel_err %.3e\n", c.name.c_str(), c.ok ? "ok  " : "FAIL",
                c.rel_err);
  const GradCase& w = report.worst();
  std::printf("%zu paths checked, worst %s at %.3e\n", report.cases.size(), w.name.c_str(),
              w.rel_err);
  contract(report.all_ok, "gradient check failed: " + w.name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-stereo 3D object detection toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "render a scene into an event dataset");
  std::string scene_path, out_dir;
  synth->add_option("scene", scene_path, "scene JSON")->required();
  synth->add_option("out_dir", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train-toy", "overfit the model on a synthetic scene");
  std::string train_config, train_out;
  int64_t steps = 0;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--steps", steps, "optimizer steps")->required()->check(CLI::NonNegativeNumber);
  train->add_option("--out", train_out, "weights directory (default: config weights_dir)");

  auto* infer = app.add_subcommand("infer", "detect at every blind-time instant");
  std::string infer_config, infer_weights, infer_out = "detections.json";
  infer->add_option("--config", infer_config, "run config JSON")->required();
  infer->add_option("--weights", infer_weights, "weights directory (default: config weights_dir)");
  infer->add_option("--out", infer_out, "detections JSON path");

  auto* eval = app.add_subcommand("eval", "score detections against annotations");
  std::string eval_config, eval_dets, eval_anns, eval_out = "results.csv";
  eval->add_option("--config", eval_config, "run config JSON")->required();
  eval->add_option("--detections", eval_dets, "detections JSON")->required();
  eval->add_option("--annotations", eval_anns, "annotations JSON (default: config annotations)");
  eval->add_option("--out", eval_out, "results CSV path");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient path");
  uint64_t grad_seed = 0;
  std::string fault_op;
  double fault_scale = 1.02;
  grad->add_option("--seed", grad_seed, "suite seed");
  grad->add_option("--inject-fault", fault_op)->group("");
  grad->add_option("--fault-scale", fault_scale)->group("");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) cmd_synth(scene_path, out_dir);
    if (train->parsed()) cmd_train_toy(train_config, steps, train_out);
    if (infer->parsed()) cmd_infer(infer_config, infer_weights, infer_out);
    if (eval->parsed()) cmd_eval(eval_config, eval_dets, eval_anns, eval_out);
    if (grad->parsed()) cmd_gradcheck(grad_seed, fault_op, fault_scale);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
