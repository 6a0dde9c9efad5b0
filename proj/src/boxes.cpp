#include "evstereo/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "evstereo/errors.hpp"
#include "json.hpp"

namespace evstereo {

double wrap_angle(double theta) {
  contract(std::isfinite(theta), "wrap_angle: angle must be finite");
  const double two_pi = 2.0 * M_PI;
  double t = std::fmod(theta, two_pi);
  if (t <= -M_PI) t += two_pi;
  if (t > M_PI) t -= two_pi;
  return t;
}

void validate_box(const Box7& box) {
  contract(std::isfinite(box.x) && std::isfinite(box.y) && std::isfinite(box.z),
           "box: center must be finite");
  contract(std::isfinite(box.h) && box.h > 0.0, "box: height must be positive");
  contract(std::isfinite(box.w) && box.w > 0.0, "box: width must be positive");
  contract(std::isfinite(box.l) && box.l > 0.0, "box: length must be positive");
  contract(std::isfinite(box.yaw) && box.yaw > -M_PI && box.yaw <= M_PI,
           "box: yaw must lie in (-pi, pi]");
}

Box7 decode_box(const Box7& anchor, const BoxOffset& d) {
  Box7 out;
  out.x = anchor.x + d[0];
  out.y = anchor.y + d[1];
  out.z = anchor.z + d[2];
  out.h = anchor.h * std::exp(d[3]);
  out.w = anchor.w * std::exp(d[4]);
  out.l = anchor.l * std::exp(d[5]);
  out.yaw = wrap_angle(anchor.yaw + 0.5 * M_PI * std::tanh(d[6]));
  return out;
}

BoxOffset encode_box(const Box7& anchor, const Box7& target) {
  validate_box(anchor);
  validate_box(target);
  double dyaw = wrap_angle(target.yaw - anchor.yaw);
  contract(std::fabs(dyaw) < 0.5 * M_PI,
           "encode_box: yaw difference must be inside (-pi/2, pi/2)");
  const double eps = 1e-7;
  double u = std::clamp(dyaw / (0.5 * M_PI), -1.0 + eps, 1.0 - eps);
  BoxOffset d;
  d[0] = target.x - anchor.x;
  d[1] = target.y - anchor.y;
  d[2] = target.z - anchor.z;
  d[3] = std::log(target.h / anchor.h);
  d[4] = std::log(target.w / anchor.w);
  d[5] = std::log(target.l / anchor.l);
  d[6] = std::atanh(u);
  return d;
}

std::array<std::array<double, 2>, 4> bev_corners(const Box7& box) {
  validate_box(box);
  double c = std::cos(box.yaw);
  double s = std::sin(box.yaw);
  double hx = 0.5 * box.w;
  double hz = 0.5 * box.l;
  // Counter-clockwise in local (x, z); rotation preserves the winding.
  const double local[4][2] = {{hx, hz}, {-hx, hz}, {-hx, -hz}, {hx, -hz}};
  std::array<std::array<double, 2>, 4> out;
  for (int i = 0; i < 4; ++i) {
    double xl = local[i][0];
    double zl = local[i][1];
    out[size_t(i)] = {box.x + xl * c + zl * s, box.z - xl * s + zl * c};
  }
  return out;
}

bool box_contains_bev(const Box7& box, double x, double z) {
  validate_box(box);
  double c = std::cos(box.yaw);
  double s = std::sin(box.yaw);
  double dx = x - box.x;
  double dz = z - box.z;
  double xl = dx * c - dz * s;
  double zl = dx * s + dz * c;
  return std::fabs(xl) <= 0.5 * box.w && std::fabs(zl) <= 0.5 * box.l;
}

const char* class_name(int class_id) {
  contract(class_id == 0 || class_id == 1, "class_id must be 0 or 1");
  return class_id == 0 ? "vehicle" : "pedestrian";
}

int class_id_from_name(const std::string& name) {
  if (name == "vehicle") return 0;
  if (name == "pedestrian") return 1;
  throw ContractError("unknown class name: " + name);
}

void save_detections(const std::string& path, const std::vector<DetectionFrame>& frames) {
  nlohmann::json root = nlohmann::json::array();
  for (const auto& f : frames) {
    for (const auto& d : f.detections) {
      validate_box(d.box);
      nlohmann::json jd;
      jd["t_us"] = f.t_us;
      jd["class"] = class_name(d.class_id);
      jd["score"] = d.score;
      jd["box"] = {d.box.x, d.box.y, d.box.z, d.box.h, d.box.w, d.box.l, d.box.yaw};
      root.push_back(std::move(jd));
    }
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << root.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DetectionFrame> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad detections JSON in " + path + ": " + e.what());
  }
  contract(root.is_array(), "detections: top level must be a list");
  try {
    std::vector<DetectionFrame> frames;
    for (const auto& jd : root) {
      Detection d;
      int64_t t_us = jd.at("t_us").get<int64_t>();
      d.class_id = class_id_from_name(jd.at("class").get<std::string>());
      d.score = jd.at("score").get<double>();
      const auto& b = jd.at("box");
      contract(b.size() == 7, "detections: box must have 7 values");
      d.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
               b[3].get<double>(), b[4].get<double>(), b[5].get<double>(),
               b[6].get<double>()};
      validate_box(d.box);
      if (frames.empty() || frames.back().t_us != t_us) {
        auto it = std::find_if(frames.begin(), frames.end(),
                               [&](const DetectionFrame& f) { return f.t_us == t_us; });
        if (it != frames.end()) {
          it->detections.push_back(d);
          continue;
        }
        frames.push_back({t_us, {}});
      }
      frames.back().detections.push_back(d);
    }
    return frames;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("detections: missing or mistyped field: ") + e.what());
  }
}

}  // namespace evstereo
