#include "evstereo/config.hpp"

#include <fstream>
#include <sstream>

#include "evstereo/errors.hpp"
#include "json.hpp"

namespace evstereo {

void validate_config(const RunConfig& cfg) {
  contract(cfg.dtau_us > 0, "config: dtau_us must be positive");
  contract(cfg.motion_scale == 1 || cfg.motion_scale == 2 || cfg.motion_scale == 4,
           "config: motion_scale must be 1, 2 or 4");
  contract(cfg.time_slice == 10 || cfg.time_slice == 20,
           "config: time_slice must be 10 or 20");
  contract(cfg.t_end_us > cfg.t_start_us, "config: active period must be non-empty");
  validate_depth_grid(cfg.depth);
  validate_detection_grid(cfg.detection);
  contract(cfg.backbone.bins >= 1, "config: voxel bins must be positive");
  contract(cfg.backbone.mid1 > 0 && cfg.backbone.mid2 > 0 && cfg.backbone.channels > 0,
           "config: backbone widths must be positive");
  contract(cfg.backbone.channels == cfg.detector.channels,
           "config: backbone and detector channel widths must match");
  contract(cfg.detector.ny == cfg.detection.ny(),
           "config: detector.ny must match the detection grid height");
  contract(cfg.nms_score_threshold >= 0.0 && cfg.nms_iou_threshold > 0.0 &&
               cfg.nms_iou_threshold <= 1.0,
           "config: NMS thresholds out of range");
  contract(cfg.nms_max_out > 0, "config: nms_max_out must be positive");
  contract(cfg.learning_rate > 0.0, "config: learning rate must be positive");
  contract(cfg.max_train_events > 0, "config: training event cap must be positive");
}

namespace {

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["paths"] = {{"events_left", c.events_left},
                {"events_right", c.events_right},
                {"calibration", c.calibration},
                {"annotations", c.annotations},
                {"weights_dir", c.weights_dir}};
  j["dtau_us"] = c.dtau_us;
  j["motion_scale"] = c.motion_scale;
  j["time_slice"] = c.time_slice;
  j["t_start_us"] = c.t_start_us;
  j["t_end_us"] = c.t_end_us;
  j["depth_grid"] = {{"z_min_m", c.depth.z_min_m},
                     {"step_m", c.depth.step_m},
                     {"levels", c.depth.levels}};
  j["detection_grid"] = {{"x_min_m", c.detection.x_min_m}, {"x_max_m", c.detection.x_max_m},
                         {"y_min_m", c.detection.y_min_m}, {"y_max_m", c.detection.y_max_m},
                         {"z_min_m", c.detection.z_min_m}, {"z_max_m", c.detection.z_max_m},
                         {"voxel_m", c.detection.voxel_m}};
  j["backbone"] = {{"bins", c.backbone.bins},
                   {"mid1", c.backbone.mid1},
                   {"mid2", c.backbone.mid2},
                   {"channels", c.backbone.channels}};
  j["detector"] = {{"channels", c.detector.channels},
                   {"ny", c.detector.ny},
                   {"head_mid", c.detector.head_mid},
                   {"align_mid", c.detector.align_mid},
                   {"k_roi", c.detector.k_roi}};
  j["nms"] = {{"score_threshold", c.nms_score_threshold},
              {"iou_threshold", c.nms_iou_threshold},
              {"max_out", c.nms_max_out}};
  j["seed"] = c.seed;
  j["learning_rate"] = c.learning_rate;
  j["max_train_events"] = c.max_train_events;
  return j;
}

RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.events_left = p.value("events_left", std::string());
      c.events_right = p.value("events_right", std::string());
      c.calibration = p.value("calibration", std::string());
      c.annotations = p.value("annotations", std::string());
      c.weights_dir = p.value("weights_dir", std::string());
    }
    c.dtau_us = j.value("dtau_us", c.dtau_us);
    c.motion_scale = j.value("motion_scale", c.motion_scale);
    c.time_slice = j.value("time_slice", c.time_slice);
    c.t_start_us = j.value("t_start_us", c.t_start_us);
    c.t_end_us = j.value("t_end_us", c.t_end_us);
    if (j.contains("depth_grid")) {
      const auto& d = j.at("depth_grid");
      c.depth.z_min_m = d.value("z_min_m", c.depth.z_min_m);
      c.depth.step_m = d.value("step_m", c.depth.step_m);
      c.depth.levels = d.value("levels", c.depth.levels);
    }
    if (j.contains("detection_grid")) {
      const auto& d = j.at("detection_grid");
      c.detection.x_min_m = d.value("x_min_m", c.detection.x_min_m);
      c.detection.x_max_m = d.value("x_max_m", c.detection.x_max_m);
      c.detection.y_min_m = d.value("y_min_m", c.detection.y_min_m);
      c.detection.y_max_m = d.value("y_max_m", c.detection.y_max_m);
      c.detection.z_min_m = d.value("z_min_m", c.detection.z_min_m);
      c.detection.z_max_m = d.value("z_max_m", c.detection.z_max_m);
      c.detection.voxel_m = d.value("voxel_m", c.detection.voxel_m);
    }
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      c.backbone.bins = b.value("bins", c.backbone.bins);
      c.backbone.mid1 = b.value("mid1", c.backbone.mid1);
      c.backbone.mid2 = b.value("mid2", c.backbone.mid2);
      c.backbone.channels = b.value("channels", c.backbone.channels);
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      c.detector.channels = d.value("channels", c.detector.channels);
      c.detector.ny = d.value("ny", c.detector.ny);
      c.detector.head_mid = d.value("head_mid", c.detector.head_mid);
      c.detector.align_mid = d.value("align_mid", c.detector.align_mid);
      c.detector.k_roi = d.value("k_roi", c.detector.k_roi);
    }
    if (j.contains("nms")) {
      const auto& n = j.at("nms");
      c.nms_score_threshold = n.value("score_threshold", c.nms_score_threshold);
      c.nms_iou_threshold = n.value("iou_threshold", c.nms_iou_threshold);
      c.nms_max_out = n.value("max_out", c.nms_max_out);
    }
    c.seed = j.value("seed", c.seed);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_train_events = j.value("max_train_events", c.max_train_events);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config: mistyped field: ") + e.what());
  }
  validate_config(c);
  return c;
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad config JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_json(buf.str());
  } catch (const IoError& e) {
    throw IoError("in " + path + ": " + e.what());
  }
}

void save_config(const std::string& path, const RunConfig& cfg) {
  validate_config(cfg);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << config_to_json(cfg);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace evstereo
