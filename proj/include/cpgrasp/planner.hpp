#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "cpgrasp/contact.hpp"
#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/isosurface.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

namespace detail {

// Grid samples over the six faces of an axis-aligned box, neighbor spacing
// at most `spacing`.
inline void sample_box_surface(const Vec3& lo, const Vec3& hi, double spacing,
                               std::vector<Vec3>& out) {
  std::array<int, 3> n;
  for (int a = 0; a < 3; ++a) {
    n[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / spacing)));
  }
  const auto coord = [&](int a, int i) { return lo[a] + (hi[a] - lo[a]) * i / n[a]; };
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (double fixed : {lo[axis], hi[axis]}) {
      for (int i = 0; i <= n[u]; ++i) {
        for (int j = 0; j <= n[v]; ++j) {
          Vec3 p;
          p[axis] = fixed;
          p[u] = coord(u, i);
          p[v] = coord(v, j);
          out.push_back(p);
        }
      }
    }
  }
}

}  // namespace detail

// Parallel-jaw gripper as surface point samples in the gripper frame
// (x = g x a, y = closing axis, z = approach). The end-point sits between the
// finger pads, `tip_offset` short of the fingertips. Vertices are stored at
// maximum opening: [left finger (-y) | right finger (+y) | palm].
struct GripperModel {
  double max_width = 0.08;
  double finger_depth = 0.05;
  double finger_thickness = 0.008;
  double finger_breadth = 0.02;
  double palm_depth = 0.02;
  double tip_offset = 0.01;
  double sample_spacing = 0.002;
  std::vector<Vec3> vertices;
  std::size_t finger_vertex_count = 0;

  static GripperModel make(const GripperModel& dims) {
    GripperModel g = dims;
    g.build();
    return g;
  }

  static GripperModel with_spacing(const GripperModel& dims, double spacing) {
    GripperModel g = dims;
    g.sample_spacing = spacing;
    g.build();
    return g;
  }

  void build() {
    if (!(max_width > 0 && finger_depth > 0 && finger_thickness > 0 && finger_breadth > 0 &&
          palm_depth > 0 && sample_spacing > 0)) {
      throw InvalidArgument("gripper dimensions must be positive");
    }
    vertices.clear();
    const double half = max_width / 2;
    const double bx = finger_breadth / 2;
    const double z_tip = tip_offset;
    const double z_root = tip_offset - finger_depth;
    detail::sample_box_surface(Vec3(-bx, -half - finger_thickness, z_root),
                               Vec3(bx, -half, z_tip), sample_spacing, vertices);
    finger_vertex_count = vertices.size();
    detail::sample_box_surface(Vec3(-bx, half, z_root),
                               Vec3(bx, half + finger_thickness, z_tip), sample_spacing,
                               vertices);
    detail::sample_box_surface(Vec3(-bx, -half - finger_thickness, z_root - palm_depth),
                               Vec3(bx, half + finger_thickness, z_root), sample_spacing,
                               vertices);
  }

  Vec3 bounds_min() const {
    return {-finger_breadth / 2, -max_width / 2 - finger_thickness,
            tip_offset - finger_depth - palm_depth};
  }
  Vec3 bounds_max() const {
    return {finger_breadth / 2, max_width / 2 + finger_thickness, tip_offset};
  }

  // Vertices with the finger inner faces at +-(width/2 + clearance), capped at
  // the maximum opening.
  std::vector<Vec3> vertices_at(double width, double clearance) const {
    const double inner = std::min(width / 2 + clearance, max_width / 2);
    const double shift = max_width / 2 - inner;
    std::vector<Vec3> out = vertices;
    for (std::size_t n = 0; n < finger_vertex_count; ++n) out[n].y() += shift;
    for (std::size_t n = finger_vertex_count; n < 2 * finger_vertex_count; ++n) {
      out[n].y() -= shift;
    }
    return out;
  }
};

struct PlannerParams {
  int n_approach = 8;
  double top_fraction = 0.003;
  std::size_t min_selected = 16;
  double collision_margin = 0.0;
  double nms_trans = 0.02;
  double nms_rot = deg_to_rad(30.0);
  double max_approach_elevation = deg_to_rad(100.0);
  double finger_clearance_voxels = 1.0;

  void validate() const {
    if (n_approach < 2) throw InvalidArgument("n_approach must be >= 2");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
      throw InvalidArgument("top_fraction must lie in (0, 1]");
    }
    if (collision_margin < 0 || nms_trans < 0 || nms_rot < 0 || finger_clearance_voxels < 0) {
      throw InvalidArgument("margins must be >= 0");
    }
  }
};

// Per-pair grasp quality in [0, 1]. The analytic default passes through the
// antipodal score; a learned evaluator can be dropped in here.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(const TsdfVolume& vol,
                                    std::span<const ContactPair> pairs) const = 0;
};

class AnalyticScorer final : public Scorer {
 public:
  std::vector<double> score(const TsdfVolume&,
                            std::span<const ContactPair> pairs) const override {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.score);
    return out;
  }
};

// n unit vectors perpendicular to g, 2*pi/n apart. Phase zero is world -z
// projected onto the plane, or world +x when g is vertical.
inline std::vector<Vec3> sample_approach_vectors(const Vec3& g, int n) {
  if (n < 2) throw InvalidArgument("need at least two approach vectors");
  if (std::abs(g.norm() - 1.0) > 1e-6) throw DegenerateGraspVector("g is not unit length");
  Vec3 ref = -Vec3::UnitZ() - (-Vec3::UnitZ()).dot(g) * g;
  if (ref.norm() < 1e-9) ref = Vec3::UnitX() - Vec3::UnitX().dot(g) * g;
  ref.normalize();
  const Vec3 side = g.cross(ref);
  std::vector<Vec3> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double phi = 2.0 * kPi * k / n;
    out.push_back(std::cos(phi) * ref + std::sin(phi) * side);
  }
  return out;
}

inline double finger_clearance(const TsdfVolume& vol, const PlannerParams& params) {
  return params.finger_clearance_voxels * vol.voxel_size();
}

// True when every gripper vertex is outside the lattice or samples a signed
// distance above `margin`.
inline bool check_collision(const TsdfVolume& vol, const GripperModel& gripper,
                            const GraspPose& pose, double margin, double clearance) {
  const auto pts = gripper.vertices_at(pose.width, clearance);
  for (const Vec3& q : pts) {
    const auto v = try_sample_trilinear(vol, pose.transform.apply(q));
    if (v && *v <= margin) return false;
  }
  return true;
}

inline bool check_collision(const TsdfVolume& vol, const GripperModel& gripper,
                            const GraspPose& pose, double margin) {
  return check_collision(vol, gripper, pose, margin, vol.voxel_size());
}

struct GraspCandidate {
  GraspPose pose;
  double score = 0.0;
  int pair_index = -1;
};

// Ranking used throughout: score descending, then narrower width, then input
// order.
inline std::vector<std::size_t> rank_pairs(std::span<const ContactPair> pairs) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pairs[a].score != pairs[b].score) return pairs[a].score > pairs[b].score;
    return pairs[a].width < pairs[b].width;
  });
  return order;
}

inline std::size_t selection_count(std::size_t total, const PlannerParams& params) {
  const auto top = static_cast<std::size_t>(std::ceil(params.top_fraction * total));
  return std::min(total, std::max(top, params.min_selected));
}

// Collision-free grasp poses for the best-scoring pairs, grouped by pair in
// rank order and by approach index within a pair.
inline std::vector<GraspCandidate> select_feasible(const TsdfVolume& vol,
                                                   const GripperModel& gripper,
                                                   std::span<const ContactPair> pairs,
                                                   const PlannerParams& params, int jobs = 1) {
  params.validate();
  const auto order = rank_pairs(pairs);
  const std::size_t keep = selection_count(pairs.size(), params);
  const double clearance = finger_clearance(vol, params);
  std::vector<std::vector<GraspCandidate>> per_pair(keep);
  parallel_for(keep, jobs, [&](std::size_t r) {
    const std::size_t idx = order[r];
    const ContactPair& pair = pairs[idx];
    for (const Vec3& a : sample_approach_vectors(pair.g, params.n_approach)) {
      const double elevation = std::acos(std::clamp(-a.z(), -1.0, 1.0));
      if (elevation > params.max_approach_elevation + 1e-12) continue;
      const GraspPose pose = compose_grasp_pose(pair.p, pair.p_prime, a);
      if (check_collision(vol, gripper, pose, params.collision_margin, clearance)) {
        per_pair[r].push_back({pose, pair.score, static_cast<int>(idx)});
      }
    }
  });
  std::vector<GraspCandidate> out;
  for (auto& v : per_pair) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Greedy suppression: a candidate is dropped when some kept, higher-ranked
// candidate is within nms_trans (end-point) AND nms_rot (geodesic).
inline std::vector<GraspCandidate> nms(std::vector<GraspCandidate> candidates, double nms_trans,
                                       double nms_rot) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const GraspCandidate& a, const GraspCandidate& b) { return a.score > b.score; });
  std::vector<GraspCandidate> kept;
  for (const auto& c : candidates) {
    bool suppressed = false;
    for (const auto& k : kept) {
      const double dt = (c.pose.end_point() - k.pose.end_point()).norm();
      if (dt >= nms_trans) continue;
      if (rotation_distance(c.pose.transform.rotation, k.pose.transform.rotation) < nms_rot) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

struct PlanStats {
  std::size_t vertices = 0;
  std::size_t pairs = 0;
  std::size_t selected = 0;
  std::size_t feasible = 0;
  std::size_t final_poses = 0;
  double ms_mesh = 0.0;
  double ms_contacts = 0.0;
  double ms_scoring = 0.0;
  double ms_selection = 0.0;
  double ms_nms = 0.0;
  double ms_total = 0.0;
};

struct PlanResult {
  std::vector<GraspCandidate> poses;
  PlanStats stats;
};

inline PlanResult plan(const TsdfVolume& vol, const GripperModel& gripper, const Scorer& scorer,
                       const PlannerParams& params, const AntipodalParams& contact_params = {},
                       int jobs = 1) {
  using Clock = std::chrono::steady_clock;
  const auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  const auto t_start = Clock::now();
  PlanResult out;

  auto t0 = Clock::now();
  const SurfaceMesh mesh = marching_cubes(vol, jobs);
  out.stats.ms_mesh = ms_since(t0);
  out.stats.vertices = mesh.size();

  t0 = Clock::now();
  std::vector<ContactPair> pairs = sample_contact_pairs(vol, mesh, contact_params, jobs);
  out.stats.ms_contacts = ms_since(t0);
  out.stats.pairs = pairs.size();

  t0 = Clock::now();
  const auto scores = scorer.score(vol, pairs);
  if (scores.size() != pairs.size()) throw InvalidArgument("scorer returned wrong count");
  for (std::size_t n = 0; n < pairs.size(); ++n) pairs[n].score = std::clamp(scores[n], 0.0, 1.0);
  out.stats.ms_scoring = ms_since(t0);

  t0 = Clock::now();
  out.stats.selected = selection_count(pairs.size(), params);
  auto feasible = select_feasible(vol, gripper, pairs, params, jobs);
  out.stats.feasible = feasible.size();
  out.stats.ms_selection = ms_since(t0);

  t0 = Clock::now();
  out.poses = nms(std::move(feasible), params.nms_trans, params.nms_rot);
  out.stats.ms_nms = ms_since(t0);
  out.stats.final_poses = out.poses.size();
  out.stats.ms_total = ms_since(t_start);
  return out;
}

// --- JSON ---------------------------------------------------------------------

inline nlohmann::json poses_to_json(const std::vector<GraspCandidate>& poses) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : poses) {
    arr.push_back({{"T", transform_to_json(c.pose.transform)},
                   {"width", c.pose.width},
                   {"score", c.score},
                   {"pair_index", c.pair_index}});
  }
  return arr;
}

inline std::vector<GraspCandidate> poses_from_json(const nlohmann::json& arr) {
  std::vector<GraspCandidate> out;
  for (const auto& j : arr) {
    GraspCandidate c;
    c.pose.transform = transform_from_json(j.at("T"), 1e-7);
    c.pose.width = j.at("width").get<double>();
    c.score = j.at("score").get<double>();
    c.pair_index = j.at("pair_index").get<int>();
    out.push_back(c);
  }
  return out;
}

inline nlohmann::json gripper_to_json(const GripperModel& g) {
  return {{"max_width", g.max_width},
          {"finger_depth", g.finger_depth},
          {"finger_thickness", g.finger_thickness},
          {"finger_breadth", g.finger_breadth},
          {"palm_depth", g.palm_depth},
          {"tip_offset", g.tip_offset},
          {"sample_spacing", g.sample_spacing}};
}

inline GripperModel gripper_from_json(const nlohmann::json& j) {
  GripperModel g;
  g.max_width = j.value("max_width", g.max_width);
  g.finger_depth = j.value("finger_depth", g.finger_depth);
  g.finger_thickness = j.value("finger_thickness", g.finger_thickness);
  g.finger_breadth = j.value("finger_breadth", g.finger_breadth);
  g.palm_depth = j.value("palm_depth", g.palm_depth);
  g.tip_offset = j.value("tip_offset", g.tip_offset);
  g.sample_spacing = j.value("sample_spacing", g.sample_spacing);
  g.build();
  return g;
}

// Angles are stored in degrees.
inline nlohmann::json planner_params_to_json(const PlannerParams& p) {
  return {{"n_approach", p.n_approach},
          {"top_fraction", p.top_fraction},
          {"min_selected", p.min_selected},
          {"collision_margin", p.collision_margin},
          {"nms_trans", p.nms_trans},
          {"nms_rot_deg", rad_to_deg(p.nms_rot)},
          {"max_approach_elevation_deg", rad_to_deg(p.max_approach_elevation)},
          {"finger_clearance_voxels", p.finger_clearance_voxels}};
}

inline PlannerParams planner_params_from_json(const nlohmann::json& j) {
  PlannerParams p;
  p.n_approach = j.value("n_approach", p.n_approach);
  p.top_fraction = j.value("top_fraction", p.top_fraction);
  p.min_selected = j.value("min_selected", p.min_selected);
  p.collision_margin = j.value("collision_margin", p.collision_margin);
  p.nms_trans = j.value("nms_trans", p.nms_trans);
  p.nms_rot = deg_to_rad(j.value("nms_rot_deg", rad_to_deg(p.nms_rot)));
  p.max_approach_elevation =
      deg_to_rad(j.value("max_approach_elevation_deg", rad_to_deg(p.max_approach_elevation)));
  p.finger_clearance_voxels = j.value("finger_clearance_voxels", p.finger_clearance_voxels);
  p.validate();
  return p;
}

inline nlohmann::json antipodal_params_to_json(const AntipodalParams& p) {
  return {{"alpha1_deg", rad_to_deg(p.alpha1)},
          {"alpha2_deg", rad_to_deg(p.alpha2)},
          {"max_width", p.max_width},
          {"min_width", p.min_width}};
}

inline AntipodalParams antipodal_params_from_json(const nlohmann::json& j) {
  AntipodalParams p;
  p.alpha1 = deg_to_rad(j.value("alpha1_deg", rad_to_deg(p.alpha1)));
  p.alpha2 = deg_to_rad(j.value("alpha2_deg", rad_to_deg(p.alpha2)));
  p.max_width = j.value("max_width", p.max_width);
  p.min_width = j.value("min_width", p.min_width);
  p.validate();
  return p;
}

}  // namespace cpgrasp
