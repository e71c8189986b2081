#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <json.hpp>
#include <numbers>

#include "cpgrasp/errors.hpp"

namespace cpgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Maps points from a child frame into its parent: p_parent = R * p_child + t.
// Camera poses are camera->base, grasp poses gripper->base.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3& t) {
    RigidTransform out;
    out.translation = t;
    return out;
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const {
    return rotation.transpose() * (p - translation);
  }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  RigidTransform operator*(const RigidTransform& rhs) const {
    RigidTransform out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  // Orthonormal with det +1, entrywise within tol.
  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const Mat3 gram = rotation.transpose() * rotation;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }

  static RigidTransform from_matrix(const Mat4& m, double tol = 1e-9) {
    RigidTransform out;
    out.rotation = m.topLeftCorner<3, 3>();
    out.translation = m.topRightCorner<3, 1>();
    if (!out.is_valid(tol)) {
      throw InvalidArgument("matrix is not a rigid transform");
    }
    return out;
  }
};

// Geodesic distance on SO(3), radians in [0, pi].
inline double rotation_distance(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool is_valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
           cx < width && cy >= 0.0 && cy < height;
  }

  void validate() const {
    if (!is_valid()) throw InvalidArgument("camera intrinsics out of range");
  }
};

// Pixel coordinates follow the pinhole model with integer values at pixel
// centers: pixel (col, row) images the ray through u = col, v = row.
struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

inline Projection project_point(const CameraIntrinsics& intr,
                                const RigidTransform& cam_pose,
                                const Vec3& world_pt) {
  const Vec3 c = cam_pose.apply_inverse(world_pt);
  if (c.z() <= 1e-6) throw BehindCamera("camera-frame z <= 1e-6");
  return {intr.fx * c.x() / c.z() + intr.cx, intr.fy * c.y() / c.z() + intr.cy,
          c.z()};
}

inline Vec3 backproject(const CameraIntrinsics& intr,
                        const RigidTransform& cam_pose, double u, double v,
                        double depth) {
  const Vec3 c((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth,
               depth);
  return cam_pose.apply(c);
}

// Camera looking from `eye` at `target`. The optical axis is camera +z and
// image rows grow along camera +y. The camera x axis is horizontal
// (z_cam x world_z); for a vertical optical axis it falls back to world +x.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) {
    x = Vec3::UnitX() - z.dot(Vec3::UnitX()) * z;
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  RigidTransform out;
  out.rotation.col(0) = x;
  out.rotation.col(1) = y;
  out.rotation.col(2) = z;
  out.translation = eye;
  return out;
}

// Parallel-jaw grasp: rotation columns are [g x a, g, a] (closing axis y,
// approach axis z), translation is the end-point between the contacts.
struct GraspPose {
  RigidTransform transform;
  double width = 0.0;

  Vec3 binormal() const { return transform.rotation.col(0); }
  Vec3 closing_axis() const { return transform.rotation.col(1); }
  Vec3 approach() const { return transform.rotation.col(2); }
  const Vec3& end_point() const { return transform.translation; }

  bool is_valid(double max_width, double tol = 1e-9) const {
    if (!transform.is_valid(tol)) return false;
    if (!(width >= 0.0 && width <= max_width)) return false;
    const Vec3 x = closing_axis().cross(approach());
    return (x - binormal()).cwiseAbs().maxCoeff() <= tol;
  }
};

inline GraspPose compose_grasp_pose(const Vec3& p, const Vec3& p_prime,
                                    const Vec3& approach) {
  const Vec3 d = p_prime - p;
  const double width = d.norm();
  if (!(width > 1e-6)) throw DegeneratePair("contacts closer than 1e-6 m");
  const Vec3 g = d / width;
  const double a_norm = approach.norm();
  const Vec3 a_perp = approach - approach.dot(g) * g;
  // angle(a, g) > 1e-3 rad on both sides of the line
  if (!(a_perp.norm() > std::sin(1e-3) * a_norm)) {
    throw ParallelApproach("approach vector parallel to grasp vector");
  }
  const Vec3 a = a_perp.normalized();
  GraspPose pose;
  pose.transform.rotation.col(0) = g.cross(a);
  pose.transform.rotation.col(1) = g;
  pose.transform.rotation.col(2) = a;
  pose.transform.translation = 0.5 * (p + p_prime);
  pose.width = width;
  return pose;
}

// --- JSON -------------------------------------------------------------------

inline nlohmann::json vec_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw InvalidArgument("expected a 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// 4x4 row-major, as an array of rows.
inline nlohmann::json transform_to_json(const RigidTransform& t) {
  const Mat4 m = t.matrix();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  }
  return rows;
}

inline RigidTransform transform_from_json(const nlohmann::json& j,
                                          double tol = 1e-9) {
  if (!j.is_array() || j.size() != 4) throw InvalidArgument("expected 4x4");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) {
      throw InvalidArgument("expected 4x4");
    }
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  return RigidTransform::from_matrix(m, tol);
}

inline nlohmann::json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
          {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

}  // namespace cpgrasp
