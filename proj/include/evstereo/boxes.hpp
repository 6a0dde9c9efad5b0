#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace evstereo {

/// Oriented 3D box in the left camera frame (x right, y down, z forward).
/// (x, y, z) is the box center, (h, w, l) are the extents along y, x and z
/// before rotation, and yaw rotates about the y axis.
struct Box7 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double h = 0.0;
  double w = 0.0;
  double l = 0.0;
  double yaw = 0.0;
};

/// Regression target relative to an anchor: (dx, dy, dz, dh, dw, dl, dyaw).
using BoxOffset = std::array<double, 7>;

/// Wraps an angle to the interval (-pi, pi].
double wrap_angle(double theta);

/// Throws ContractError unless all extents are positive and finite and the
/// yaw lies in (-pi, pi].
void validate_box(const Box7& box);

/// Applies a regression offset to an anchor:
///   center    anchor + delta
///   extents   anchor * exp(delta)
///   yaw       anchor + (pi/2) * tanh(delta), wrapped to (-pi, pi]
/// Extents stay positive and the yaw stays within pi/2 of the anchor for
/// every input, so decoded boxes always validate.
Box7 decode_box(const Box7& anchor, const BoxOffset& offset);

/// Inverts decode_box for a reachable target. The wrapped yaw difference
/// must be strictly inside (-pi/2, pi/2); otherwise throws ContractError.
/// The tanh input is clamped to +/-(1 - 1e-7) to keep atanh finite.
BoxOffset encode_box(const Box7& anchor, const Box7& target);

/// Footprint corners of the box in the ground plane, counter-clockwise in
/// (x, z). Local axes: w spans x, l spans z; yaw maps local (xl, zl) to
///   x = cx + xl*cos(yaw) + zl*sin(yaw)
///   z = cz - xl*sin(yaw) + zl*cos(yaw)
std::array<std::array<double, 2>, 4> bev_corners(const Box7& box);

/// True when the ground-plane point lies inside or on the footprint.
bool box_contains_bev(const Box7& box, double x, double z);

/// One scored detection. class_id: 0 = vehicle, 1 = pedestrian.
struct Detection {
  Box7 box;
  int class_id = 0;
  double score = 0.0;
};

const char* class_name(int class_id);
int class_id_from_name(const std::string& name);

/// Detections for one blind-time instant.
struct DetectionFrame {
  int64_t t_us = 0;
  std::vector<Detection> detections;
};

/// JSON serialization: {"frames":[{"t_us":..,"detections":[{"t_us":..,
/// "class":"vehicle","score":..,"box":[x,y,z,h,w,l,yaw]},..]},..]}.
void save_detections(const std::string& path, const std::vector<DetectionFrame>& frames);
std::vector<DetectionFrame> load_detections(const std::string& path);

}  // namespace evstereo
