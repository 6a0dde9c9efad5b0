#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evstereo/boxes.hpp"

namespace evstereo {

enum class Difficulty { easy = 0, moderate = 1 };
enum class ApMetric { ap_3d = 0, ap_bev = 1 };

const char* difficulty_name(Difficulty d);
Difficulty difficulty_from_name(const std::string& name);
const char* metric_name(ApMetric m);

/// Intersection area of two convex polygons, each given counter-clockwise.
double convex_intersection_area(const std::vector<std::array<double, 2>>& a,
                                const std::vector<std::array<double, 2>>& b);

/// Overlap of the rotated ground-plane footprints divided by their union.
/// Symmetric, in [0, 1]. Degenerate boxes are rejected by validation.
double rotated_iou_bev(const Box7& a, const Box7& b);

/// Footprint overlap times vertical interval overlap, over the union volume.
double iou_3d(const Box7& a, const Box7& b);

/// One annotated box. Difficulty buckets are cumulative: the moderate
/// bucket also contains easy boxes.
struct GtBox {
  Box7 box;
  int class_id = 0;
  Difficulty difficulty = Difficulty::easy;
};

struct GroundTruthFrame {
  int64_t t_us = 0;
  std::vector<GtBox> boxes;
};

/// JSON: {"frames":[{"t_us":..,"boxes":[{"class":..,"difficulty":..,
/// "box":[x,y,z,h,w,l,yaw]},..]},..]}.
void save_annotations(const std::string& path, const std::vector<GroundTruthFrame>& frames);
std::vector<GroundTruthFrame> load_annotations(const std::string& path);

struct APResult {
  int class_id = 0;
  Difficulty difficulty = Difficulty::easy;
  ApMetric metric = ApMetric::ap_3d;
  double value = 0.0;  // in [0, 100]
};

/// 40-point interpolated average precision, scaled to [0, 100].
///
/// Every detection frame must have a ground-truth frame with the same t_us.
/// Per frame, detections of the class are taken in descending score
/// (ties by x then z ascending) and each matches the highest-IoU unmatched
/// in-bucket ground truth at or above the threshold. Detections that miss
/// the bucket but overlap an out-of-bucket box of the class at or above the
/// threshold are dropped rather than counted as false positives. The curve
/// ranks all kept detections globally by the same ordering. No ground truth
/// in the bucket gives AP 0.
APResult ap_compute(const std::vector<DetectionFrame>& detections,
                    const std::vector<GroundTruthFrame>& ground_truth, int class_id,
                    double iou_threshold, Difficulty difficulty, ApMetric metric);

/// Mean over the two classes for one (difficulty, metric) pair. Throws
/// ContractError unless exactly one result per class is present.
double map_summary(const std::vector<APResult>& results, Difficulty difficulty,
                   ApMetric metric);

/// CSV rows "class,difficulty,metric,motion_scale,time_slice,value" with a
/// header line, rows in (class, difficulty, metric) order.
void save_results_csv(const std::string& path, const std::vector<APResult>& results,
                      int motion_scale, int time_slice);

}  // namespace evstereo
