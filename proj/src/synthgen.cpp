#include "evstereo/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "evstereo/errors.hpp"
#include "evstereo/rng.hpp"
#include "json.hpp"

namespace evstereo {

namespace {

double bev_radius(const Box7& b) { return 0.5 * std::hypot(b.w, b.l); }

// Local-to-camera transform of a box pose: rotation about y then translation.
struct Frame3 {
  double x, y, z, c, s;
  std::array<double, 3> apply(double lx, double ly, double lz) const {
    return {x + lx * c + lz * s, y + ly, z - lx * s + lz * c};
  }
};

Frame3 frame_of(const Box7& b) {
  return {b.x, b.y, b.z, std::cos(b.yaw), std::sin(b.yaw)};
}

// World point into the camera frame of an ego pose.
std::array<double, 3> to_camera(const EgoKey& e, double x, double y, double z) {
  double dx = x - e.x, dy = y - e.y, dz = z - e.z;
  double c = std::cos(e.yaw), s = std::sin(e.yaw);
  return {c * dx - s * dz, dy, s * dx + c * dz};
}

Box7 box_to_camera(const EgoKey& e, const Box7& b) {
  Box7 out = b;
  auto p = to_camera(e, b.x, b.y, b.z);
  out.x = p[0];
  out.y = p[1];
  out.z = p[2];
  out.yaw = wrap_angle(b.yaw - e.yaw);
  return out;
}

double lerp(double a, double b, double alpha) { return a + (b - a) * alpha; }

// The eight local corners and the twelve edges joining them.
std::array<std::array<double, 3>, 8> local_corners(const Box7& b) {
  double hx = 0.5 * b.w, hy = 0.5 * b.h, hz = 0.5 * b.l;
  std::array<std::array<double, 3>, 8> out{};
  for (int i = 0; i < 8; ++i)
    out[size_t(i)] = {(i & 1) ? hx : -hx, (i & 2) ? hy : -hy, (i & 4) ? hz : -hz};
  return out;
}

constexpr std::array<std::array<int, 2>, 12> kEdges = {{{0, 1},
                                                        {2, 3},
                                                        {4, 5},
                                                        {6, 7},
                                                        {0, 2},
                                                        {1, 3},
                                                        {4, 6},
                                                        {5, 7},
                                                        {0, 4},
                                                        {1, 5},
                                                        {2, 6},
                                                        {3, 7}}};

// Per-face texture points, fixed in the local frame. Face f covers the two
// axes other than f/2, pinned at +/- half extent along axis f/2.
std::vector<std::array<double, 3>> face_texture(const Box7& b, double density,
                                                double ref_z, const StereoRig& rig,
                                                uint64_t seed, int64_t obj, int face) {
  std::array<double, 3> half = {0.5 * b.w, 0.5 * b.h, 0.5 * b.l};
  int axis = face / 2;
  double sign = (face % 2 == 0) ? 1.0 : -1.0;
  int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  double area_m2 = (2.0 * half[size_t(a1)]) * (2.0 * half[size_t(a2)]);
  double px_area = area_m2 * rig.fx * rig.fy / (ref_z * ref_z);
  int64_t n = std::llround(density * px_area);
  std::vector<std::array<double, 3>> pts;
  if (n <= 0) return pts;
  DetRng rng(seed, fnv1a64("texture/" + std::to_string(obj) + "/" + std::to_string(face)));
  pts.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    std::array<double, 3> p{};
    p[size_t(axis)] = sign * half[size_t(axis)];
    p[size_t(a1)] = rng.uniform(-half[size_t(a1)], half[size_t(a1)]);
    p[size_t(a2)] = rng.uniform(-half[size_t(a2)], half[size_t(a2)]);
    pts.push_back(p);
  }
  return pts;
}

const std::vector<PoseKey>& checked_track(const SceneSpec& scene, int64_t object_index) {
  contract(object_index >= 0 && size_t(object_index) < scene.objects.size(),
           "pose_at: object index out of range");
  return scene.objects[size_t(object_index)].track;
}

}  // namespace

Box7 track_pose(const std::vector<PoseKey>& track, int64_t t_us) {
  contract(!track.empty(), "track_pose: empty track");
  if (t_us <= track.front().t_us) return track.front().box;
  if (t_us >= track.back().t_us) return track.back().box;
  auto hi = std::upper_bound(
      track.begin(), track.end(), t_us,
      [](int64_t t, const PoseKey& k) { return t < k.t_us; });
  const PoseKey& b = *hi;
  const PoseKey& a = *(hi - 1);
  double alpha = double(t_us - a.t_us) / double(b.t_us - a.t_us);
  Box7 out = a.box;
  out.x = lerp(a.box.x, b.box.x, alpha);
  out.y = lerp(a.box.y, b.box.y, alpha);
  out.z = lerp(a.box.z, b.box.z, alpha);
  out.yaw = lerp(a.box.yaw, b.box.yaw, alpha);
  return out;
}

EgoKey ego_at(const SceneSpec& scene, int64_t t_us) {
  const auto& track = scene.ego;
  if (track.empty()) return {};
  if (t_us <= track.front().t_us) return track.front();
  if (t_us >= track.back().t_us) return track.back();
  auto hi = std::upper_bound(
      track.begin(), track.end(), t_us,
      [](int64_t t, const EgoKey& k) { return t < k.t_us; });
  const EgoKey& b = *hi;
  const EgoKey& a = *(hi - 1);
  double alpha = double(t_us - a.t_us) / double(b.t_us - a.t_us);
  return {t_us, lerp(a.x, b.x, alpha), lerp(a.y, b.y, alpha), lerp(a.z, b.z, alpha),
          lerp(a.yaw, b.yaw, alpha)};
}

Box7 pose_at(const SceneSpec& scene, int64_t object_index, int64_t t_us) {
  const auto& track = checked_track(scene, object_index);
  contract(t_us >= 0 && t_us <= scene.duration_us, "pose_at: t outside the scene");
  return box_to_camera(ego_at(scene, t_us), track_pose(track, t_us));
}

void validate_scene(const SceneSpec& scene) {
  validate_rig(scene.rig);
  contract(scene.duration_us > 0, "scene: duration must be positive");
  contract(scene.micro_step_us > 0 && scene.duration_us % scene.micro_step_us == 0,
           "scene: micro step must be positive and divide the duration");
  for (size_t i = 1; i < scene.ego.size(); ++i)
    contract(scene.ego[i].t_us > scene.ego[i - 1].t_us,
             "scene: ego keyframes must be strictly increasing in time");
  for (const auto& e : scene.ego)
    contract(std::isfinite(e.x) && std::isfinite(e.y) && std::isfinite(e.z) &&
                 std::isfinite(e.yaw),
             "scene: ego pose must be finite");

  // Times at which the in-front invariant is spot checked.
  std::vector<int64_t> probes = {0, scene.duration_us};
  for (const auto& e : scene.ego) probes.push_back(e.t_us);

  for (size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const SceneObject& obj = scene.objects[oi];
    contract(!obj.track.empty(), "scene: object track must have a keyframe");
    contract(obj.class_id == 0 || obj.class_id == 1, "scene: unknown object class");
    contract(std::isfinite(obj.texture_density) && obj.texture_density >= 0.0,
             "scene: texture density must be finite and non-negative");
    const Box7& first = obj.track.front().box;
    for (size_t i = 0; i < obj.track.size(); ++i) {
      const PoseKey& k = obj.track[i];
      validate_box(k.box);
      if (i > 0)
        contract(k.t_us > obj.track[i - 1].t_us,
                 "scene: object keyframes must be strictly increasing in time");
      contract(k.box.h == first.h && k.box.w == first.w && k.box.l == first.l,
               "scene: object extents must not change between keyframes");
    }
    std::vector<int64_t> times = probes;
    for (const auto& k : obj.track) times.push_back(k.t_us);
    for (int64_t t : times) {
      if (t < 0 || t > scene.duration_us) continue;
      Box7 cam = box_to_camera(ego_at(scene, t), track_pose(obj.track, t));
      contract(cam.z - bev_radius(cam) > 0.0,
               "scene: object not strictly in front of the cameras");
    }
  }
}

std::vector<GroundTruthFrame> emit_ground_truth(const SceneSpec& scene,
                                                const std::vector<int64_t>& instants) {
  validate_scene(scene);
  std::vector<GroundTruthFrame> frames;
  frames.reserve(instants.size());
  for (int64_t t : instants) {
    contract(t >= 0 && t <= scene.duration_us, "emit_ground_truth: instant outside scene");
    GroundTruthFrame f;
    f.t_us = t;
    for (size_t oi = 0; oi < scene.objects.size(); ++oi)
      f.boxes.push_back({pose_at(scene, int64_t(oi), t), scene.objects[oi].class_id,
                         Difficulty::easy});
    frames.push_back(std::move(f));
  }
  return frames;
}

StereoEvents render_events(const SceneSpec& scene) {
  validate_scene(scene);
  const StereoRig& rig = scene.rig;
  const int64_t w = rig.width, h = rig.height;

  // Fixed local geometry per object: corners and texture points. Texture
  // counts are sized from the projected face area at the first keyframe.
  struct ObjGeom {
    std::array<std::array<double, 3>, 8> corners;
    std::vector<std::array<double, 3>> texture;
  };
  std::vector<ObjGeom> geom(scene.objects.size());
  for (size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const SceneObject& obj = scene.objects[oi];
    const Box7& first = obj.track.front().box;
    geom[oi].corners = local_corners(first);
    int64_t t0 = obj.track.front().t_us;
    double ref_z = box_to_camera(ego_at(scene, std::clamp<int64_t>(t0, 0, scene.duration_us)),
                                 first)
                       .z;
    for (int face = 0; face < 6; ++face) {
      auto pts = face_texture(first, obj.texture_density, ref_z, rig, scene.seed,
                              int64_t(oi), face);
      geom[oi].texture.insert(geom[oi].texture.end(), pts.begin(), pts.end());
    }
  }

  StereoEvents out;
  out.left.width = out.right.width = rig.width;
  out.left.height = out.right.height = rig.height;

  std::array<std::vector<int32_t>, 2> prev = {std::vector<int32_t>(size_t(w * h)),
                                              std::vector<int32_t>(size_t(w * h))};
  std::array<std::vector<int32_t>, 2> curr = prev;

  const int64_t steps = scene.duration_us / scene.micro_step_us;
  for (int64_t k = 0; k <= steps; ++k) {
    int64_t t = k * scene.micro_step_us;
    EgoKey ego = ego_at(scene, t);
    for (int cam = 0; cam < 2; ++cam) {
      std::vector<int32_t>& count = curr[size_t(cam)];
      std::fill(count.begin(), count.end(), 0);
      const double x_shift = cam == 0 ? 0.0 : rig.baseline_m;

      auto splat = [&](double px, double py, double pz) {
        if (pz <= 1e-9) return;
        int64_t ui = std::llround(rig.fx * (px - x_shift) / pz + rig.cx);
        int64_t vi = std::llround(rig.fy * py / pz + rig.cy);
        if (ui < 0 || ui >= w || vi < 0 || vi >= h) return;
        count[size_t(vi * w + ui)]++;
      };

      for (size_t oi = 0; oi < scene.objects.size(); ++oi) {
        Box7 cam_box = box_to_camera(ego, track_pose(scene.objects[oi].track, t));
        contract(cam_box.z - bev_radius(cam_box) > 0.0,
                 "render_events: object not strictly in front of the cameras");
        Frame3 f = frame_of(cam_box);

        for (const auto& p : geom[oi].texture) {
          auto q = f.apply(p[0], p[1], p[2]);
          splat(q[0], q[1], q[2]);
        }

        std::array<std::array<double, 3>, 8> cc;
        for (int i = 0; i < 8; ++i) {
          const auto& l = geom[oi].corners[size_t(i)];
          cc[size_t(i)] = f.apply(l[0], l[1], l[2]);
        }
        for (const auto& e : kEdges) {
          const auto& a = cc[size_t(e[0])];
          const auto& b = cc[size_t(e[1])];
          double ua = rig.fx * (a[0] - x_shift) / a[2] + rig.cx;
          double va = rig.fy * a[1] / a[2] + rig.cy;
          double ub = rig.fx * (b[0] - x_shift) / b[2] + rig.cx;
          double vb = rig.fy * b[1] / b[2] + rig.cy;
          double len = std::hypot(ub - ua, vb - va);
          int64_t n = std::max<int64_t>(2, int64_t(std::ceil(2.0 * len)) + 1);
          for (int64_t i = 0; i < n; ++i) {
            double fr = double(i) / double(n - 1);
            splat(lerp(a[0], b[0], fr), lerp(a[1], b[1], fr), lerp(a[2], b[2], fr));
          }
        }
      }

      if (k > 0) {
        EventStream& stream = cam == 0 ? out.left : out.right;
        const std::vector<int32_t>& before = prev[size_t(cam)];
        for (int64_t vi = 0; vi < h; ++vi)
          for (int64_t ui = 0; ui < w; ++ui) {
            int32_t d = count[size_t(vi * w + ui)] - before[size_t(vi * w + ui)];
            if (d != 0)
              stream.events.push_back(
                  {t, int32_t(ui), int32_t(vi), d > 0 ? 1 : -1});
          }
      }
      prev[size_t(cam)].swap(curr[size_t(cam)]);
    }
  }
  return out;
}

SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad scene JSON in " + path + ": " + e.what());
  }
  SceneSpec scene;
  try {
    const auto& jr = root.at("rig");
    scene.rig.fx = jr.at("fx").get<double>();
    scene.rig.fy = jr.at("fy").get<double>();
    scene.rig.cx = jr.at("cx").get<double>();
    scene.rig.cy = jr.at("cy").get<double>();
    scene.rig.baseline_m = jr.at("baseline_m").get<double>();
    scene.rig.width = jr.at("width").get<int32_t>();
    scene.rig.height = jr.at("height").get<int32_t>();
    scene.duration_us = root.at("duration_us").get<int64_t>();
    scene.micro_step_us = root.value("micro_step_us", int64_t(100));
    scene.seed = root.value("seed", uint64_t(0));
    for (const auto& je : root.value("ego", nlohmann::json::array())) {
      const auto& p = je.at("pose");
      contract(p.size() == 4, "scene: ego pose must be [x, y, z, yaw]");
      scene.ego.push_back({je.at("t_us").get<int64_t>(), p[0].get<double>(),
                           p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
    }
    for (const auto& jo : root.at("objects")) {
      SceneObject obj;
      obj.class_id = class_id_from_name(jo.at("class").get<std::string>());
      obj.texture_density = jo.value("texture_density", 0.15);
      for (const auto& jk : jo.at("track")) {
        const auto& b = jk.at("box");
        contract(b.size() == 7, "scene: track box must have 7 values");
        PoseKey key;
        key.t_us = jk.at("t_us").get<int64_t>();
        key.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                   b[3].get<double>(), b[4].get<double>(), b[5].get<double>(),
                   b[6].get<double>()};
        obj.track.push_back(key);
      }
      scene.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("scene: missing or mistyped field: ") + e.what());
  }
  validate_scene(scene);
  return scene;
}

void save_scene(const std::string& path, const SceneSpec& scene) {
  validate_scene(scene);
  nlohmann::json root;
  root["rig"] = {{"fx", scene.rig.fx},       {"fy", scene.rig.fy},
                 {"cx", scene.rig.cx},       {"cy", scene.rig.cy},
                 {"baseline_m", scene.rig.baseline_m},
                 {"width", scene.rig.width}, {"height", scene.rig.height}};
  root["duration_us"] = scene.duration_us;
  root["micro_step_us"] = scene.micro_step_us;
  root["seed"] = scene.seed;
  root["ego"] = nlohmann::json::array();
  for (const auto& e : scene.ego)
    root["ego"].push_back({{"t_us", e.t_us}, {"pose", {e.x, e.y, e.z, e.yaw}}});
  root["objects"] = nlohmann::json::array();
  for (const auto& obj : scene.objects) {
    nlohmann::json jo;
    jo["class"] = class_name(obj.class_id);
    jo["texture_density"] = obj.texture_density;
    jo["track"] = nlohmann::json::array();
    for (const auto& k : obj.track)
      jo["track"].push_back({{"t_us", k.t_us},
                             {"box",
                              {k.box.x, k.box.y, k.box.z, k.box.h, k.box.w, k.box.l,
                               k.box.yaw}}});
    root["objects"].push_back(std::move(jo));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << root.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace evstereo
