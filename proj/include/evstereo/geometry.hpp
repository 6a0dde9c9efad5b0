#pragma once

#include <cstdint>
#include <string>

namespace evstereo {

// Rectified stereo pair: pure horizontal disparity, left camera is the
// reference. Camera frame: x right, y down, z forward; yaw rotates about y.
struct StereoRig {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double baseline_m = 0.0;
  int32_t width = 0;
  int32_t height = 0;
};

void validate_rig(const StereoRig& rig);
StereoRig load_calibration(const std::string& path);
void save_calibration(const std::string& path, const StereoRig& rig);

// Depth hypothesis levels d(w) = z_min + w * step_m for w = 0..levels-1.
struct DepthGrid {
  double z_min_m = 2.0;
  double step_m = 0.5;
  int32_t levels = 24;

  double depth_of_index(double w) const { return z_min_m + w * step_m; }
  double index_of_depth(double z) const { return (z - z_min_m) / step_m; }
  double z_max_m() const { return depth_of_index(levels - 1); }
};

void validate_depth_grid(const DepthGrid& g);

// disparity in sensor pixels: fx * baseline / z. z must be positive.
double disparity_for_depth(const StereoRig& rig, double z_m);

// Axis-aligned detection volume in the camera frame, quantized into cubic
// voxels. Extents are range / voxel_m rounded to the nearest integer; voxel
// centers sit at range_min + (i + 0.5) * voxel_m.
struct DetectionGrid {
  double x_min_m = -30.4, x_max_m = 30.4;
  double y_min_m = -1.0, y_max_m = 3.0;
  double z_min_m = 2.0, z_max_m = 56.9;
  double voxel_m = 0.2;

  int64_t nx() const;
  int64_t ny() const;
  int64_t nz() const;
  double center_x(int64_t i) const { return x_min_m + (double(i) + 0.5) * voxel_m; }
  double center_y(int64_t i) const { return y_min_m + (double(i) + 0.5) * voxel_m; }
  double center_z(int64_t i) const { return z_min_m + (double(i) + 0.5) * voxel_m; }
};

void validate_detection_grid(const DetectionGrid& g);

// Sensor-pixel coordinate of column u in a feature map downsampled by
// `stride`, with the feature sample centered on its stride x stride footprint.
inline double feature_to_pixel(double u_feat, int stride) {
  return u_feat * stride + 0.5 * (stride - 1);
}
inline double pixel_to_feature(double u_px, int stride) {
  return (u_px - 0.5 * (stride - 1)) / stride;
}

}  // namespace evstereo
