#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cpgrasp/contact.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/planner.hpp"
#include "cpgrasp/scene.hpp"

namespace cpgrasp {

// Ground-truth checks against the analytic scene. These never look at a TSDF.

struct OracleOptions {
  double sample_spacing = 0.001;
  double finger_clearance = 0.3 / 64;  // one default voxel per side, as the planner
  double root_tolerance = 1e-6;
};

// The gripper solid sampled densely enough for the oracle. Every face is
// sampled; primitives are far thicker than the spacing, so a surface sample
// set detects any overlap with them.
inline GripperModel oracle_gripper(const GripperModel& gripper, const OracleOptions& opts = {}) {
  return GripperModel::with_spacing(gripper, std::min(opts.sample_spacing, gripper.sample_spacing));
}

// Minimum scene SDF over the pre-close gripper, with early exit once a sample
// reaches `stop_below`.
inline double oracle_min_sdf(const SceneSpec& scene, const GripperModel& dense,
                             const GraspPose& pose, double clearance,
                             double stop_below = -std::numeric_limits<double>::infinity()) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& q : dense.vertices_at(pose.width, clearance)) {
    best = std::min(best, scene_sdf(scene, pose.transform.apply(q)));
    if (best < stop_below) break;
  }
  return best;
}

inline bool oracle_collision_free(const SceneSpec& scene, const GripperModel& dense,
                                  const GraspPose& pose, double clearance) {
  return oracle_min_sdf(scene, dense, pose, clearance, 0.0) > 0.0;
}

struct FingerContact {
  Vec3 point;
  Vec3 normal;
};

// First surface hit walking from `start` along `dir` for at most `max_dist`,
// refined by bisection. Nothing when the start is already inside a solid.
inline std::optional<FingerContact> oracle_finger_contact(const SceneSpec& scene,
                                                          const Vec3& start, const Vec3& dir,
                                                          double max_dist, double tol = 1e-6) {
  if (!(scene_sdf(scene, start) > 0.0)) return std::nullopt;
  const double min_step = std::max(tol, 1e-5);
  double lo = 0.0;
  double hi = -1.0;
  for (double t = 0.0; t <= max_dist;) {
    const double d = scene_sdf(scene, start + t * dir);
    if (d <= 0.0) {
      hi = t;
      break;
    }
    lo = t;
    t += std::max(d, min_step);
  }
  if (hi < 0.0) return std::nullopt;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (scene_sdf(scene, start + mid * dir) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const Vec3 p = start + hi * dir;
  return FingerContact{p, scene_normal(scene, p)};
}

struct PoseMetrics {
  double antipodal_score = 0.0;
  bool collision_free = false;
  bool contact = false;  // both fingers touched something
};

// Closes both fingers from their pre-close positions toward the end-point and
// scores the analytic normals at the touch points. The collision verdict is
// for the pre-close pose.
inline PoseMetrics oracle_pose_metrics(const SceneSpec& scene, const GraspPose& pose,
                                       const GripperModel& dense, const OracleOptions& opts = {}) {
  PoseMetrics m;
  const Vec3 g = pose.closing_axis();
  const Vec3 e = pose.end_point();
  const double half = std::min(pose.width / 2 + opts.finger_clearance, dense.max_width / 2);
  const auto left = oracle_finger_contact(scene, e - half * g, g, dense.max_width,
                                          opts.root_tolerance);
  const auto right = oracle_finger_contact(scene, e + half * g, -g, dense.max_width,
                                           opts.root_tolerance);
  if (left && right) {
    m.contact = true;
    const Vec3 n1 = left->normal.normalized();
    const Vec3 n2 = right->normal.normalized();
    m.antipodal_score = antipodal_score(n1, n2, g);
  }
  m.collision_free = oracle_collision_free(scene, dense, pose, opts.finger_clearance);
  return m;
}

// Analytic approach check used for labels: any of the planner's approach
// vectors (optionally filtered by elevation) yields a collision-free pose.
inline bool oracle_any_free_approach(const SceneSpec& scene, const GripperModel& dense,
                                     const Vec3& p, const Vec3& p_prime, int n_approach,
                                     double clearance,
                                     std::optional<double> max_elevation = std::nullopt) {
  const Vec3 g = (p_prime - p).normalized();
  for (const Vec3& a : sample_approach_vectors(g, n_approach)) {
    if (max_elevation &&
        std::acos(std::clamp(-a.z(), -1.0, 1.0)) > *max_elevation + 1e-12) {
      continue;
    }
    if (oracle_collision_free(scene, dense, compose_grasp_pose(p, p_prime, a), clearance)) {
      return true;
    }
  }
  return false;
}

}  // namespace cpgrasp
