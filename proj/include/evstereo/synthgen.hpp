#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evstereo/boxes.hpp"
#include "evstereo/evaluation.hpp"
#include "evstereo/events.hpp"
#include "evstereo/geometry.hpp"

namespace evstereo {

// One keyframe of a piecewise-linear pose track.
struct PoseKey {
  int64_t t_us = 0;
  Box7 box;
};

// A textured cuboid following a keyframed track. Extents must agree across
// keyframes; position and yaw interpolate linearly between them.
struct SceneObject {
  std::vector<PoseKey> track;
  int class_id = 0;
  // Texture points per projected pixel of face area, measured at the pose of
  // the first keyframe. Zero leaves only the wireframe.
  double texture_density = 0.15;
};

// Camera pose keyframe: position plus yaw about the y (down) axis.
struct EgoKey {
  int64_t t_us = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double yaw = 0.0;
};

// A deterministic stereo event scene: moving cuboids observed by a moving
// rig. Everything downstream (streams, ground truth) is a pure function of
// this struct, seed included.
struct SceneSpec {
  StereoRig rig;
  int64_t duration_us = 0;
  int64_t micro_step_us = 100;
  std::vector<SceneObject> objects;
  std::vector<EgoKey> ego;  // empty means a static camera at the origin
  uint64_t seed = 0;
};

// Checks the rig, durations (micro_step_us must divide duration_us), track
// ordering, box validity, constant extents, and that every object stays in
// front of the cameras at the keyframe endpoints. Throws ContractError.
void validate_scene(const SceneSpec& scene);

// Piecewise-linear interpolation over the keyframes, clamped at the ends.
// Extents come from the first keyframe.
Box7 track_pose(const std::vector<PoseKey>& track, int64_t t_us);

// Camera pose at t, linearly interpolated and clamped like track_pose.
EgoKey ego_at(const SceneSpec& scene, int64_t t_us);

// Object pose in the camera frame at t: the world-frame track pose composed
// with the inverse camera pose. t must lie within [0, duration].
Box7 pose_at(const SceneSpec& scene, int64_t object_index, int64_t t_us);

struct StereoEvents {
  EventStream left;
  EventStream right;
};

// Renders the scene into stereo event streams. At every micro step the
// wireframe edges and fixed per-face texture points of each cuboid are
// projected into both cameras and counted per pixel; a pixel whose count
// changed since the previous step emits one event with the sign of the
// change. Streams are sorted by (t, v, u). A static scene emits nothing.
StereoEvents render_events(const SceneSpec& scene);

// Exact camera-frame poses at each instant, all labelled easy (so they land
// in every difficulty bucket). Instants must lie within [0, duration].
std::vector<GroundTruthFrame> emit_ground_truth(const SceneSpec& scene,
                                                const std::vector<int64_t>& instants);

// JSON scene files. load_scene validates before returning.
SceneSpec load_scene(const std::string& path);
void save_scene(const std::string& path, const SceneSpec& scene);

}  // namespace evstereo
