#pragma once

#include <cstdint>
#include <string>

#include "evstereo/backbone.hpp"
#include "evstereo/detector.hpp"
#include "evstereo/geometry.hpp"

namespace evstereo {

// One JSON file driving synthesis consumers, training, inference and
// evaluation. Defaults describe the desk-scale setup; every field serializes.
struct RunConfig {
  // Input and output locations, resolved relative to the working directory.
  std::string events_left;
  std::string events_right;
  std::string calibration;
  std::string annotations;
  std::string weights_dir;

  // Slicing protocol.
  int64_t dtau_us = 10000;
  int motion_scale = 1;  // one of 1, 2, 4
  int time_slice = 10;   // one of 10, 20
  int64_t t_start_us = 0;
  int64_t t_end_us = 100000;

  // Geometry.
  DepthGrid depth;
  DetectionGrid detection;

  // Model widths. backbone.channels must equal detector.channels: the fused
  // voxel volume feeds the detector unchanged.
  BackboneConfig backbone;
  DetectorConfig detector;

  // Detection filtering.
  double nms_score_threshold = 0.3;
  double nms_iou_threshold = 0.5;
  int64_t nms_max_out = 100;

  // Training.
  uint64_t seed = 0;
  double learning_rate = 1e-3;
  // The trainer refuses inputs above this many events; this codebase trains
  // at desk scale only.
  int64_t max_train_events = 2000000;
};

// Structural checks: positive windows, enumerated protocol values, valid
// grids, matching channel widths. Does not touch the filesystem.
void validate_config(const RunConfig& cfg);

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

// The JSON object form used by both the config file and the weight-dir
// embedded architecture record.
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);

}  // namespace evstereo
