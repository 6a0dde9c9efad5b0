#include "evstereo/geometry.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "evstereo/errors.hpp"

namespace evstereo {

void validate_rig(const StereoRig& rig) {
  contract(rig.fx > 0 && rig.fy > 0, "focal lengths must be positive");
  contract(rig.baseline_m > 0, "baseline must be positive");
  contract(rig.width > 0 && rig.height > 0, "image size must be positive");
}

StereoRig load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("calibration is not valid JSON: " + path + ": " + e.what());
  }
  StereoRig rig;
  try {
    rig.fx = j.at("fx").get<double>();
    rig.fy = j.at("fy").get<double>();
    rig.cx = j.at("cx").get<double>();
    rig.cy = j.at("cy").get<double>();
    rig.baseline_m = j.at("baseline_m").get<double>();
    rig.width = j.at("width").get<int32_t>();
    rig.height = j.at("height").get<int32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("calibration missing required field: " + std::string(e.what()));
  }
  validate_rig(rig);
  return rig;
}

void save_calibration(const std::string& path, const StereoRig& rig) {
  validate_rig(rig);
  nlohmann::json j;
  j["fx"] = rig.fx;
  j["fy"] = rig.fy;
  j["cx"] = rig.cx;
  j["cy"] = rig.cy;
  j["baseline_m"] = rig.baseline_m;
  j["width"] = rig.width;
  j["height"] = rig.height;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write calibration: " + path);
  out << j.dump(2) << '\n';
}

void validate_depth_grid(const DepthGrid& g) {
  contract(g.step_m > 0, "depth step must be positive");
  contract(g.levels >= 2, "depth grid needs at least two levels");
  contract(g.z_min_m > 0, "nearest depth level must be positive");
}

double disparity_for_depth(const StereoRig& rig, double z_m) {
  contract(z_m > 0, "depth must be positive");
  return rig.fx * rig.baseline_m / z_m;
}

namespace {
int64_t extent_of(double lo, double hi, double voxel) {
  return int64_t(std::llround((hi - lo) / voxel));
}
}  // namespace

int64_t DetectionGrid::nx() const { return extent_of(x_min_m, x_max_m, voxel_m); }
int64_t DetectionGrid::ny() const { return extent_of(y_min_m, y_max_m, voxel_m); }
int64_t DetectionGrid::nz() const { return extent_of(z_min_m, z_max_m, voxel_m); }

void validate_detection_grid(const DetectionGrid& g) {
  contract(g.voxel_m > 0, "voxel edge must be positive");
  contract(g.x_max_m > g.x_min_m && g.y_max_m > g.y_min_m && g.z_max_m > g.z_min_m,
           "detection ranges must be non-empty");
  contract(g.z_min_m > 0, "detection volume must lie in front of the camera");
  contract(g.nx() >= 1 && g.ny() >= 1 && g.nz() >= 1, "detection grid extents must be positive");
  // the y extent is halved once by the detector's height collapse
  contract(g.ny() % 2 == 0, "detection grid height extent must be even");
}

}  // namespace evstereo
