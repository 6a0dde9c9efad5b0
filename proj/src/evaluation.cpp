#include "evstereo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "evstereo/errors.hpp"
#include "json.hpp"

namespace evstereo {

namespace {

using Pt = std::array<double, 2>;

double edge_side(const Pt& a, const Pt& b, const Pt& p) {
  return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
}

double polygon_area(const std::vector<Pt>& poly) {
  double acc = 0.0;
  size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Pt& p = poly[i];
    const Pt& q = poly[(i + 1) % n];
    acc += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::fabs(acc);
}

}  // namespace

const char* difficulty_name(Difficulty d) {
  return d == Difficulty::easy ? "easy" : "moderate";
}

Difficulty difficulty_from_name(const std::string& name) {
  if (name == "easy") return Difficulty::easy;
  if (name == "moderate") return Difficulty::moderate;
  throw ContractError("unknown difficulty: " + name);
}

const char* metric_name(ApMetric m) { return m == ApMetric::ap_3d ? "AP_3D" : "AP_BEV"; }

double convex_intersection_area(const std::vector<Pt>& a, const std::vector<Pt>& b) {
  contract(a.size() >= 3 && b.size() >= 3, "intersection: polygons need 3+ vertices");
  std::vector<Pt> poly = a;
  std::vector<Pt> next;
  size_t nb = b.size();
  for (size_t i = 0; i < nb && !poly.empty(); ++i) {
    const Pt& c0 = b[i];
    const Pt& c1 = b[(i + 1) % nb];
    next.clear();
    size_t np = poly.size();
    for (size_t j = 0; j < np; ++j) {
      const Pt& s = poly[j];
      const Pt& e = poly[(j + 1) % np];
      double ss = edge_side(c0, c1, s);
      double se = edge_side(c0, c1, e);
      bool s_in = ss >= 0.0;
      bool e_in = se >= 0.0;
      if (s_in != e_in) {
        double t = ss / (ss - se);
        next.push_back({s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])});
      }
      if (e_in) next.push_back(e);
    }
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

double rotated_iou_bev(const Box7& a, const Box7& b) {
  validate_box(a);
  validate_box(b);
  auto ca = bev_corners(a);
  auto cb = bev_corners(b);
  double inter = convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  double area_a = a.w * a.l;
  double area_b = b.w * b.l;
  inter = std::min(inter, std::min(area_a, area_b));
  return inter / (area_a + area_b - inter);
}

double iou_3d(const Box7& a, const Box7& b) {
  validate_box(a);
  validate_box(b);
  auto ca = bev_corners(a);
  auto cb = bev_corners(b);
  double inter_bev =
      convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  inter_bev = std::min(inter_bev, std::min(a.w * a.l, b.w * b.l));
  double lo = std::max(a.y - 0.5 * a.h, b.y - 0.5 * b.h);
  double hi = std::min(a.y + 0.5 * a.h, b.y + 0.5 * b.h);
  double overlap_y = std::max(0.0, hi - lo);
  double inter = inter_bev * overlap_y;
  double vol_a = a.w * a.l * a.h;
  double vol_b = b.w * b.l * b.h;
  return inter / (vol_a + vol_b - inter);
}

void save_annotations(const std::string& path, const std::vector<GroundTruthFrame>& frames) {
  nlohmann::json root;
  root["frames"] = nlohmann::json::array();
  for (const auto& f : frames) {
    nlohmann::json jf;
    jf["t_us"] = f.t_us;
    jf["boxes"] = nlohmann::json::array();
    for (const auto& g : f.boxes) {
      validate_box(g.box);
      nlohmann::json jb;
      jb["class"] = class_name(g.class_id);
      jb["difficulty"] = difficulty_name(g.difficulty);
      jb["box"] = {g.box.x, g.box.y, g.box.z, g.box.h, g.box.w, g.box.l, g.box.yaw};
      jf["boxes"].push_back(std::move(jb));
    }
    root["frames"].push_back(std::move(jf));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << root.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

std::vector<GroundTruthFrame> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad annotations JSON in " + path + ": " + e.what());
  }
  try {
    std::vector<GroundTruthFrame> frames;
    for (const auto& jf : root.at("frames")) {
      GroundTruthFrame f;
      f.t_us = jf.at("t_us").get<int64_t>();
      for (const auto& jb : jf.at("boxes")) {
        GtBox g;
        g.class_id = class_id_from_name(jb.at("class").get<std::string>());
        g.difficulty = difficulty_from_name(jb.at("difficulty").get<std::string>());
        const auto& b = jb.at("box");
        contract(b.size() == 7, "annotations: box must have 7 values");
        g.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                 b[3].get<double>(), b[4].get<double>(), b[5].get<double>(),
                 b[6].get<double>()};
        validate_box(g.box);
        f.boxes.push_back(g);
      }
      frames.push_back(std::move(f));
    }
    return frames;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("annotations: missing or mistyped field: ") + e.what());
  }
}

namespace {

bool in_bucket(Difficulty label, Difficulty bucket) {
  return int(label) <= int(bucket);
}

struct RankedDet {
  double score;
  int64_t t_us;
  double x;
  double z;
  bool tp;
};

}  // namespace

APResult ap_compute(const std::vector<DetectionFrame>& detections,
                    const std::vector<GroundTruthFrame>& ground_truth, int class_id,
                    double iou_threshold, Difficulty difficulty, ApMetric metric) {
  contract(iou_threshold > 0.0 && iou_threshold <= 1.0,
           "ap_compute: iou_threshold must be in (0, 1]");
  auto iou = [&](const Box7& a, const Box7& b) {
    return metric == ApMetric::ap_bev ? rotated_iou_bev(a, b) : iou_3d(a, b);
  };

  int64_t n_gt = 0;
  for (const auto& gf : ground_truth)
    for (const auto& g : gf.boxes)
      if (g.class_id == class_id && in_bucket(g.difficulty, difficulty)) ++n_gt;

  std::vector<RankedDet> ranked;
  for (const auto& df : detections) {
    const GroundTruthFrame* gf = nullptr;
    for (const auto& cand : ground_truth)
      if (cand.t_us == df.t_us) {
        gf = &cand;
        break;
      }
    contract(gf != nullptr, "ap_compute: detection frame has no ground-truth frame");

    std::vector<const Detection*> dets;
    for (const auto& d : df.detections)
      if (d.class_id == class_id) dets.push_back(&d);
    std::sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) {
      if (a->score != b->score) return a->score > b->score;
      if (a->box.x != b->box.x) return a->box.x < b->box.x;
      return a->box.z < b->box.z;
    });

    std::vector<bool> matched(gf->boxes.size(), false);
    for (const Detection* d : dets) {
      double best_iou = -1.0;
      int64_t best_j = -1;
      for (size_t j = 0; j < gf->boxes.size(); ++j) {
        const GtBox& g = gf->boxes[j];
        if (g.class_id != class_id || matched[j] || !in_bucket(g.difficulty, difficulty))
          continue;
        double v = iou(d->box, g.box);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best_j = int64_t(j);
        }
      }
      if (best_j >= 0) {
        matched[size_t(best_j)] = true;
        ranked.push_back({d->score, df.t_us, d->box.x, d->box.z, true});
        continue;
      }
      bool ignored = false;
      for (const GtBox& g : gf->boxes) {
        if (g.class_id != class_id || in_bucket(g.difficulty, difficulty)) continue;
        if (iou(d->box, g.box) >= iou_threshold) {
          ignored = true;
          break;
        }
      }
      if (!ignored) ranked.push_back({d->score, df.t_us, d->box.x, d->box.z, false});
    }
  }

  APResult out{class_id, difficulty, metric, 0.0};
  if (n_gt == 0) return out;

  std::sort(ranked.begin(), ranked.end(), [](const RankedDet& a, const RankedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t_us != b.t_us) return a.t_us < b.t_us;
    if (a.x != b.x) return a.x < b.x;
    return a.z < b.z;
  });

  std::vector<double> recall(ranked.size());
  std::vector<double> precision(ranked.size());
  int64_t tp = 0;
  for (size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k].tp) ++tp;
    recall[k] = double(tp) / double(n_gt);
    precision[k] = double(tp) / double(k + 1);
  }
  // Interpolated precision: the best precision at this recall or beyond.
  for (size_t k = ranked.size(); k-- > 1;)
    precision[k - 1] = std::max(precision[k - 1], precision[k]);

  double acc = 0.0;
  for (int i = 1; i <= 40; ++i) {
    double r = double(i) / 40.0;
    double p = 0.0;
    for (size_t k = 0; k < ranked.size(); ++k)
      if (recall[k] >= r) {
        p = precision[k];
        break;
      }
    acc += p;
  }
  out.value = 100.0 * acc / 40.0;
  return out;
}

double map_summary(const std::vector<APResult>& results, Difficulty difficulty,
                   ApMetric metric) {
  bool have[2] = {false, false};
  double value[2] = {0.0, 0.0};
  for (const auto& r : results) {
    if (r.difficulty != difficulty || r.metric != metric) continue;
    contract(r.class_id == 0 || r.class_id == 1, "map_summary: unknown class");
    contract(!have[r.class_id], "map_summary: duplicate class result");
    have[r.class_id] = true;
    value[r.class_id] = r.value;
  }
  contract(have[0] && have[1], "map_summary: both classes required");
  return 0.5 * (value[0] + value[1]);
}

void save_results_csv(const std::string& path, const std::vector<APResult>& results,
                      int motion_scale, int time_slice) {
  std::vector<APResult> rows = results;
  std::stable_sort(rows.begin(), rows.end(), [](const APResult& a, const APResult& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.difficulty != b.difficulty) return int(a.difficulty) < int(b.difficulty);
    return int(a.metric) < int(b.metric);
  });
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "class,difficulty,metric,motion_scale,time_slice,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.value);
    out << class_name(r.class_id) << "," << difficulty_name(r.difficulty) << ","
        << metric_name(r.metric) << "," << motion_scale << "," << time_slice << "," << buf
        << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace evstereo
