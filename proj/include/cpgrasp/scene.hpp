#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

enum class ShapeKind { Sphere, Box, Cylinder, Ellipsoid, Capsule };

inline constexpr std::array<ShapeKind, 5> kAllShapeKinds = {
    ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Ellipsoid,
    ShapeKind::Capsule};

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Ellipsoid: return "ellipsoid";
    case ShapeKind::Capsule: return "capsule";
  }
  return "unknown";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  for (ShapeKind k : kAllShapeKinds) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown shape kind: " + s);
}

inline std::size_t param_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return 1;
    case ShapeKind::Box: return 3;
    case ShapeKind::Cylinder: return 2;
    case ShapeKind::Ellipsoid: return 3;
    case ShapeKind::Capsule: return 2;
  }
  return 0;
}

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

namespace detail {

// Distance to the ellipsoid surface sum (x_i / a_i)^2 = 1 via the closest
// point x_i = a_i^2 p_i / (a_i^2 + t), where t solves
// f(t) = sum (a_i p_i / (a_i^2 + t))^2 - 1 = 0. f is decreasing on
// (-min a_i^2, inf); Newton steps are kept inside a bisection bracket.
// Twenty iterations; the result is approximate near the medial axis.
inline double ellipsoid_sdf(const Vec3& p, const Vec3& a) {
  const Vec3 a2 = a.cwiseProduct(a);
  const double inside_measure = (p.cwiseQuotient(a)).squaredNorm();
  if (p.norm() < 1e-12) return -a.minCoeff();
  const auto f = [&](double t) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double q = a[i] * p[i] / (a2[i] + t);
      s += q * q;
    }
    return s - 1.0;
  };
  const auto df = [&](double t) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double den = a2[i] + t;
      s += -2.0 * a2[i] * p[i] * p[i] / (den * den * den);
    }
    return s;
  };
  double lo, hi;
  if (inside_measure >= 1.0) {
    lo = 0.0;
    hi = a.maxCoeff() * p.norm() + 1e-12;
  } else {
    lo = -a2.minCoeff();
    hi = 0.0;
  }
  double t = inside_measure >= 1.0 ? 0.5 * (lo + hi) : 0.5 * lo;
  for (int it = 0; it < 20; ++it) {
    const double ft = f(t);
    if (ft > 0.0) lo = t; else hi = t;
    const double d = df(t);
    double next = d != 0.0 ? t - ft / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    t = next;
  }
  Vec3 x;
  for (int i = 0; i < 3; ++i) x[i] = a2[i] * p[i] / (a2[i] + t);
  const double dist = (p - x).norm();
  return inside_measure >= 1.0 ? dist : -dist;
}

inline std::optional<std::pair<double, double>> sphere_interval(
    const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - a * cc;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  return std::make_pair((-b - s) / a, (-b + s) / a);
}

inline std::optional<std::pair<double, double>> merge_interval(
    std::optional<std::pair<double, double>> acc,
    std::optional<std::pair<double, double>> x) {
  if (!x) return acc;
  if (!acc) return x;
  return std::make_pair(std::min(acc->first, x->first),
                        std::max(acc->second, x->second));
}

}  // namespace detail

// Analytic convex primitive centered on its local origin. Box params are
// half-extents; cylinder and capsule run along local z with params
// (radius, half_length); ellipsoid params are semi-axes.
struct PrimitiveShape {
  ShapeKind kind = ShapeKind::Sphere;
  std::vector<double> params;
  RigidTransform pose;

  static PrimitiveShape sphere(double r, const Vec3& center) {
    return {ShapeKind::Sphere, {r}, RigidTransform::from_translation(center)};
  }
  static PrimitiveShape box(const Vec3& half, const RigidTransform& pose) {
    return {ShapeKind::Box, {half.x(), half.y(), half.z()}, pose};
  }
  static PrimitiveShape cylinder(double r, double half_len, const RigidTransform& pose) {
    return {ShapeKind::Cylinder, {r, half_len}, pose};
  }
  static PrimitiveShape ellipsoid(const Vec3& axes, const RigidTransform& pose) {
    return {ShapeKind::Ellipsoid, {axes.x(), axes.y(), axes.z()}, pose};
  }
  static PrimitiveShape capsule(double r, double half_len, const RigidTransform& pose) {
    return {ShapeKind::Capsule, {r, half_len}, pose};
  }

  void validate() const {
    if (params.size() != param_count(kind)) {
      throw InvalidArgument(to_string(kind) + ": wrong parameter count");
    }
    for (double v : params) {
      if (!(v >= 0.01 - 1e-12 && v <= 0.25 + 1e-12)) {
        throw InvalidArgument(to_string(kind) + ": dimension outside [0.01, 0.25] m");
      }
    }
    if (!pose.is_valid(1e-9)) throw InvalidArgument("shape pose is not rigid");
  }

  double bounding_radius() const {
    switch (kind) {
      case ShapeKind::Sphere: return params[0];
      case ShapeKind::Box: return Vec3(params[0], params[1], params[2]).norm();
      case ShapeKind::Cylinder: return std::hypot(params[0], params[1]);
      case ShapeKind::Ellipsoid: return *std::max_element(params.begin(), params.end());
      case ShapeKind::Capsule: return params[0] + params[1];
    }
    return 0.0;
  }

  double local_sdf(const Vec3& q) const {
    switch (kind) {
      case ShapeKind::Sphere:
        return q.norm() - params[0];
      case ShapeKind::Box: {
        const Vec3 d = q.cwiseAbs() - Vec3(params[0], params[1], params[2]);
        return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
      }
      case ShapeKind::Cylinder: {
        const double dr = std::hypot(q.x(), q.y()) - params[0];
        const double dz = std::abs(q.z()) - params[1];
        return std::min(std::max(dr, dz), 0.0) +
               std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
      }
      case ShapeKind::Ellipsoid:
        return detail::ellipsoid_sdf(q, Vec3(params[0], params[1], params[2]));
      case ShapeKind::Capsule: {
        const double z = std::clamp(q.z(), -params[1], params[1]);
        return (q - Vec3(0, 0, z)).norm() - params[0];
      }
    }
    return std::numeric_limits<double>::infinity();
  }

  double sdf(const Vec3& p) const { return local_sdf(pose.apply_inverse(p)); }

  // Outward unit normal from central differences of the analytic field.
  Vec3 normal(const Vec3& p) const {
    const Vec3 q = pose.apply_inverse(p);
    constexpr double h = 1e-6;
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
      Vec3 d = Vec3::Zero();
      d[a] = h;
      g[a] = (local_sdf(q + d) - local_sdf(q - d)) / (2 * h);
    }
    if (g.norm() < 1e-12) g = Vec3::UnitZ();
    return pose.rotation * g.normalized();
  }

  // Max of x . dir over the solid, dir a world unit vector.
  double support(const Vec3& dir) const {
    const Vec3 u = pose.rotation.transpose() * dir;
    switch (kind) {
      case ShapeKind::Sphere: return params[0];
      case ShapeKind::Box:
        return params[0] * std::abs(u.x()) + params[1] * std::abs(u.y()) +
               params[2] * std::abs(u.z());
      case ShapeKind::Cylinder:
        return params[0] * std::hypot(u.x(), u.y()) + params[1] * std::abs(u.z());
      case ShapeKind::Ellipsoid:
        return Vec3(params[0] * u.x(), params[1] * u.y(), params[2] * u.z()).norm();
      case ShapeKind::Capsule:
        return params[1] * std::abs(u.z()) + params[0];
    }
    return 0.0;
  }

  // Parameter interval [t_in, t_out] where origin + t * dir lies in the solid.
  std::optional<std::pair<double, double>> ray_interval(const Vec3& origin,
                                                        const Vec3& dir) const {
    const Vec3 o = pose.apply_inverse(origin);
    const Vec3 d = pose.rotation.transpose() * dir;
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (kind) {
      case ShapeKind::Sphere:
        return detail::sphere_interval(o, d, Vec3::Zero(), params[0]);
      case ShapeKind::Ellipsoid: {
        const Vec3 a(params[0], params[1], params[2]);
        return detail::sphere_interval(o.cwiseQuotient(a), d.cwiseQuotient(a),
                                       Vec3::Zero(), 1.0);
      }
      case ShapeKind::Box: {
        double t0 = -inf, t1 = inf;
        for (int i = 0; i < 3; ++i) {
          const double h = params[i];
          if (std::abs(d[i]) < 1e-15) {
            if (std::abs(o[i]) > h) return std::nullopt;
            continue;
          }
          double ta = (-h - o[i]) / d[i], tb = (h - o[i]) / d[i];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        if (t0 > t1) return std::nullopt;
        return std::make_pair(t0, t1);
      }
      case ShapeKind::Cylinder:
      case ShapeKind::Capsule: {
        const double r = params[0], h = params[1];
        // infinite cylinder in xy
        double t0 = -inf, t1 = inf;
        const double a = d.x() * d.x() + d.y() * d.y();
        const double b = o.x() * d.x() + o.y() * d.y();
        const double c = o.x() * o.x() + o.y() * o.y() - r * r;
        if (a < 1e-15) {
          if (c > 0.0) t0 = inf, t1 = -inf;
        } else {
          const double disc = b * b - a * c;
          if (disc < 0.0) {
            t0 = inf, t1 = -inf;
          } else {
            const double s = std::sqrt(disc);
            t0 = (-b - s) / a;
            t1 = (-b + s) / a;
          }
        }
        // slab |z| <= h
        if (std::abs(d.z()) < 1e-15) {
          if (std::abs(o.z()) > h) t0 = inf, t1 = -inf;
        } else {
          double ta = (-h - o.z()) / d.z(), tb = (h - o.z()) / d.z();
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        std::optional<std::pair<double, double>> out;
        if (t0 <= t1) out = std::make_pair(t0, t1);
        if (kind == ShapeKind::Capsule) {
          out = detail::merge_interval(out, detail::sphere_interval(o, d, Vec3(0, 0, h), r));
          out = detail::merge_interval(out, detail::sphere_interval(o, d, Vec3(0, 0, -h), r));
        }
        return out;
      }
    }
    return std::nullopt;
  }
};

struct SceneSpec {
  std::vector<PrimitiveShape> shapes;
  std::optional<double> floor_z;
  Aabb workspace;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& s : shapes) {
      s.validate();
      const double r = s.bounding_radius();
      const Vec3 c = s.pose.translation;
      if (!workspace.contains(c - Vec3::Constant(r)) ||
          !workspace.contains(c + Vec3::Constant(r))) {
        throw InvalidArgument("shape bounding sphere leaves the workspace");
      }
    }
  }
};

// Closest primitive: index into shapes, kFloor, or kNothing.
struct SdfQuery {
  static constexpr int kFloor = -1;
  static constexpr int kNothing = -2;
  double distance = std::numeric_limits<double>::infinity();
  int shape = kNothing;
};

// Min-composition of all primitives and the floor half-space. Shapes whose
// bounding sphere is farther than the running minimum are skipped; this is
// exact since each primitive lies inside its bounding sphere.
inline SdfQuery scene_sdf_query(const SceneSpec& scene, const Vec3& p,
                                int exclude = SdfQuery::kNothing) {
  SdfQuery best;
  if (scene.floor_z) {
    best.distance = p.z() - *scene.floor_z;
    best.shape = SdfQuery::kFloor;
  }
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    if (static_cast<int>(i) == exclude) continue;
    const auto& s = scene.shapes[i];
    const double lower = (p - s.pose.translation).norm() - s.bounding_radius();
    if (lower >= best.distance) continue;
    const double d = s.sdf(p);
    if (d < best.distance) {
      best.distance = d;
      best.shape = static_cast<int>(i);
    }
  }
  return best;
}

inline double scene_sdf(const SceneSpec& scene, const Vec3& p) {
  return scene_sdf_query(scene, p).distance;
}

// Outward normal of whichever surface is closest to p.
inline Vec3 scene_normal(const SceneSpec& scene, const Vec3& p) {
  const SdfQuery q = scene_sdf_query(scene, p);
  if (q.shape >= 0) return scene.shapes[q.shape].normal(p);
  return Vec3::UnitZ();
}

struct RenderSettings {
  int max_steps = 256;
  double hit_epsilon = 1e-4;
  double max_distance = 2.0;
};

// Sphere-traced depth image. Depth is the camera-frame z of the hit point;
// 0 where nothing is hit within max_distance.
inline DepthImage render_depth(const SceneSpec& scene, const CameraIntrinsics& intr,
                               const RigidTransform& cam_pose,
                               const RenderSettings& settings = {}, int jobs = 1) {
  intr.validate();
  DepthImage img(intr.width, intr.height);
  const Vec3 eye = cam_pose.translation;
  parallel_for(std::size_t(intr.height), jobs, [&](std::size_t row_idx) {
    const int row = static_cast<int>(row_idx);
    for (int col = 0; col < intr.width; ++col) {
      const Vec3 dc((col - intr.cx) / intr.fx, (row - intr.cy) / intr.fy, 1.0);
      const Vec3 dir_cam = dc.normalized();
      const Vec3 dir = cam_pose.rotation * dir_cam;
      double t = 0.0;
      float depth = 0.f;
      for (int step = 0; step < settings.max_steps; ++step) {
        const double d = scene_sdf(scene, eye + t * dir);
        if (d < settings.hit_epsilon) {
          depth = static_cast<float>(t * dir_cam.z());
          break;
        }
        t += d;
        if (t > settings.max_distance) break;
      }
      img.at(col, row) = depth;
    }
  });
  return img;
}

// Cameras on a spherical cap above the workspace center, looking at it.
// Elevations follow a Fibonacci spiral from the zenith (first pose is nadir)
// down to `max_polar` from vertical; azimuths advance by the golden angle.
inline std::vector<RigidTransform> sample_viewpoints(int n, const Aabb& workspace,
                                                     double radius,
                                                     double max_polar = deg_to_rad(70.0)) {
  if (n < 1) throw InvalidArgument("need at least one viewpoint");
  const Vec3 center = workspace.center();
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const double span = 1.0 - std::cos(max_polar);
  std::vector<RigidTransform> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double cz = 1.0 - span * k / n;
    const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    const double phi = golden * k;
    const Vec3 dir(sz * std::cos(phi), sz * std::sin(phi), cz);
    out.push_back(look_at(center + radius * dir, center));
  }
  return out;
}

// --- random clutter ----------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct ShapeCatalog {
  std::array<double, 5> kind_weights = {1, 1, 1, 1, 1};  // kAllShapeKinds order
  Range sphere_radius{0.015, 0.035};
  Range box_half{0.012, 0.035};
  Range cylinder_radius{0.015, 0.035};
  Range cylinder_half_length{0.015, 0.05};
  Range ellipsoid_axis{0.015, 0.04};
  Range capsule_radius{0.012, 0.03};
  Range capsule_half_length{0.01, 0.04};
  Aabb workspace{Vec3(0.0, 0.0, -0.1), Vec3(0.3, 0.3, 0.3)};
  std::optional<double> floor_z = 0.02;
  double wall_margin = 0.02;
  double min_clearance = -0.002;
  int max_attempts = 200;
};

struct GeneratedScene {
  SceneSpec scene;
  int skipped = 0;
};

namespace detail {

inline double uniform(std::mt19937_64& rng, const Range& r) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return r.lo + (r.hi - r.lo) * u;
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Mat3 rot_z(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

// Rotation taking local axis `axis` to world +z (axis-aligned rest poses).
inline Mat3 axis_up(int axis) {
  switch (axis) {
    case 0: return Eigen::AngleAxisd(-kPi / 2, Vec3::UnitY()).toRotationMatrix();
    case 1: return Eigen::AngleAxisd(kPi / 2, Vec3::UnitX()).toRotationMatrix();
    default: return Mat3::Identity();
  }
}

inline PrimitiveShape random_shape(std::mt19937_64& rng, const ShapeCatalog& cat) {
  double total = 0.0;
  for (double w : cat.kind_weights) total += w;
  if (!(total > 0.0)) throw InvalidArgument("catalog has no shape weights");
  double pick = uniform01(rng) * total;
  std::size_t kind_idx = 0;
  for (; kind_idx + 1 < kAllShapeKinds.size(); ++kind_idx) {
    if (pick < cat.kind_weights[kind_idx]) break;
    pick -= cat.kind_weights[kind_idx];
  }
  while (cat.kind_weights[kind_idx] <= 0.0) --kind_idx;
  PrimitiveShape s;
  s.kind = kAllShapeKinds[kind_idx];
  int up_axis = 2;
  switch (s.kind) {
    case ShapeKind::Sphere:
      s.params = {uniform(rng, cat.sphere_radius)};
      break;
    case ShapeKind::Box:
      s.params = {uniform(rng, cat.box_half), uniform(rng, cat.box_half),
                  uniform(rng, cat.box_half)};
      up_axis = static_cast<int>(rng() % 3);
      break;
    case ShapeKind::Cylinder:
      s.params = {uniform(rng, cat.cylinder_radius), uniform(rng, cat.cylinder_half_length)};
      up_axis = (rng() % 2 == 0) ? 2 : 0;
      break;
    case ShapeKind::Ellipsoid:
      s.params = {uniform(rng, cat.ellipsoid_axis), uniform(rng, cat.ellipsoid_axis),
                  uniform(rng, cat.ellipsoid_axis)};
      up_axis = static_cast<int>(rng() % 3);
      break;
    case ShapeKind::Capsule:
      s.params = {uniform(rng, cat.capsule_radius), uniform(rng, cat.capsule_half_length)};
      up_axis = (rng() % 2 == 0) ? 2 : 0;
      break;
  }
  const double yaw = uniform01(rng) * 2.0 * kPi;
  s.pose.rotation = rot_z(yaw) * axis_up(up_axis);
  return s;
}

// Surface points of a convex shape in its local frame, one per Fibonacci
// direction from the center.
inline std::vector<Vec3> local_surface_points(const PrimitiveShape& s, int n) {
  PrimitiveShape local = s;
  local.pose = RigidTransform::identity();
  std::vector<Vec3> pts;
  pts.reserve(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < n; ++k) {
    const double z = 1.0 - 2.0 * (k + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 dir(r * std::cos(golden * k), r * std::sin(golden * k), z);
    const auto iv = local.ray_interval(Vec3::Zero(), dir);
    if (iv) pts.push_back(iv->second * dir);
  }
  return pts;
}

}  // namespace detail

// Minimum signed distance from the shape surface (sampled) to the other
// shapes of `scene`; the floor is not included.
inline double shape_clearance(const SceneSpec& scene, const PrimitiveShape& shape,
                              const std::vector<Vec3>& local_pts) {
  SceneSpec others = scene;
  others.floor_z.reset();
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& q : local_pts) {
    best = std::min(best, scene_sdf(others, shape.pose.apply(q)));
  }
  return best;
}

// Deterministic clutter: shapes dropped one by one at random xy / yaw onto
// the floor or the highest surface beneath them. Objects that cannot be
// placed in max_attempts tries are skipped and counted.
inline GeneratedScene generate_scene(std::uint64_t seed, int n_objects,
                                     const ShapeCatalog& cat = {}) {
  if (n_objects < 1 || n_objects > 30) {
    throw InvalidArgument("n_objects must be in [1, 30]");
  }
  std::mt19937_64 rng(seed);
  GeneratedScene out;
  out.scene.workspace = cat.workspace;
  out.scene.floor_z = cat.floor_z;
  out.scene.seed = seed;
  const Aabb& ws = cat.workspace;
  const double rest_base = cat.floor_z.value_or(ws.min.z());
  std::vector<std::vector<Vec3>> placed_pts;  // world surface samples per placed shape

  for (int obj = 0; obj < n_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < cat.max_attempts && !placed; ++attempt) {
      PrimitiveShape s = detail::random_shape(rng, cat);
      const double r = s.bounding_radius();
      const double lo_x = ws.min.x() + r + cat.wall_margin, hi_x = ws.max.x() - r - cat.wall_margin;
      const double lo_y = ws.min.y() + r + cat.wall_margin, hi_y = ws.max.y() - r - cat.wall_margin;
      const double ux = detail::uniform01(rng), uy = detail::uniform01(rng);
      if (lo_x > hi_x || lo_y > hi_y) continue;
      const double x = lo_x + (hi_x - lo_x) * ux;
      const double y = lo_y + (hi_y - lo_y) * uy;
      const double z_floor = rest_base + s.support(-Vec3::UnitZ());
      const double z_top = ws.max.z() - r;
      if (z_top < z_floor) continue;
      const auto pts = detail::local_surface_points(s, 400);
      // Checked both ways: a corner of a placed box can poke into a sphere
      // without any sphere surface sample landing inside the box.
      const auto clearance_at = [&](double z) {
        s.pose.translation = Vec3(x, y, z);
        double c = shape_clearance(out.scene, s, pts);
        for (std::size_t i = 0; i < placed_pts.size(); ++i) {
          const auto& o = out.scene.shapes[i];
          if ((o.pose.translation - s.pose.translation).norm() > o.bounding_radius() + r) continue;
          for (const Vec3& q : placed_pts[i]) c = std::min(c, s.sdf(q));
        }
        return c;
      };
      const auto sphere_gap = [&](double z) {
        double gap = std::numeric_limits<double>::infinity();
        for (const auto& o : out.scene.shapes) {
          gap = std::min(gap, (Vec3(x, y, z) - o.pose.translation).norm() - r -
                                  o.bounding_radius());
        }
        return gap;
      };

      double z = z_top;
      if (sphere_gap(z) <= 0.0 && clearance_at(z) <= 0.0) continue;
      double rest = z_floor;
      constexpr double kStep = 0.002;
      while (z > z_floor) {
        const double gap = sphere_gap(z);
        const double next = std::max(z_floor, z - std::max(kStep, gap));
        if (sphere_gap(next) <= 0.0 && clearance_at(next) <= 0.0) {
          double above = z, below = next;
          for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (above + below);
            if (clearance_at(mid) > 0.0) above = mid; else below = mid;
          }
          rest = above;
          break;
        }
        z = next;
      }
      s.pose.translation = Vec3(x, y, rest);
      if (!out.scene.shapes.empty() && clearance_at(rest) <= cat.min_clearance) continue;
      if (rest + r > ws.max.z() || rest - r < ws.min.z()) continue;
      out.scene.shapes.push_back(s);
      std::vector<Vec3> world;
      world.reserve(pts.size());
      for (const Vec3& q : pts) world.push_back(s.pose.apply(q));
      placed_pts.push_back(std::move(world));
      placed = true;
    }
    if (!placed) ++out.skipped;
  }
  return out;
}

// --- sensing ------------------------------------------------------------------

// Virtual depth camera orbiting the workspace.
struct SensorRig {
  CameraIntrinsics intrinsics{180.0, 180.0, 95.5, 71.5, 192, 144};
  double radius = 0.45;
  double max_polar = deg_to_rad(70.0);
  RenderSettings render;

  std::vector<RigidTransform> viewpoints(const SceneSpec& scene, int n) const {
    return sample_viewpoints(n, scene.workspace, radius, max_polar);
  }
};

// Renders and fuses the first `n_views` rig viewpoints into `vol`, calling
// `after_frame(k)` with the number of fused frames after each one.
template <typename AfterFrame>
void fuse_views(TsdfVolume& vol, const SceneSpec& scene, const SensorRig& rig, int n_views,
                int jobs, AfterFrame&& after_frame) {
  if (n_views <= 0) return;
  const auto poses = rig.viewpoints(scene, n_views);
  for (int k = 0; k < n_views; ++k) {
    const DepthImage depth = render_depth(scene, rig.intrinsics, poses[k], rig.render, jobs);
    integrate_depth(vol, depth, rig.intrinsics, poses[k], jobs);
    after_frame(k + 1);
  }
}

inline TsdfVolume fuse_views(const SceneSpec& scene, const VolumeConfig& config,
                             const SensorRig& rig, int n_views, int jobs = 1) {
  TsdfVolume vol(config);
  fuse_views(vol, scene, rig, n_views, jobs, [](int) {});
  return vol;
}

// --- JSON ---------------------------------------------------------------------

inline nlohmann::json shape_to_json(const PrimitiveShape& s) {
  return {{"kind", to_string(s.kind)}, {"params", s.params}, {"pose", transform_to_json(s.pose)}};
}

inline PrimitiveShape shape_from_json(const nlohmann::json& j) {
  PrimitiveShape s;
  s.kind = shape_kind_from_string(j.at("kind").get<std::string>());
  s.params = j.at("params").get<std::vector<double>>();
  s.pose = transform_from_json(j.at("pose"), 1e-7);
  s.validate();
  return s;
}

inline nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : scene.shapes) shapes.push_back(shape_to_json(s));
  nlohmann::json j;
  j["shapes"] = shapes;
  j["floor_z"] = scene.floor_z ? nlohmann::json(*scene.floor_z) : nlohmann::json(nullptr);
  j["workspace"] = {{"min", vec_to_json(scene.workspace.min)},
                    {"max", vec_to_json(scene.workspace.max)}};
  j["seed"] = scene.seed;
  return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  for (const auto& s : j.at("shapes")) scene.shapes.push_back(shape_from_json(s));
  if (j.contains("floor_z") && !j.at("floor_z").is_null()) {
    scene.floor_z = j.at("floor_z").get<double>();
  }
  scene.workspace.min = vec_from_json(j.at("workspace").at("min"));
  scene.workspace.max = vec_from_json(j.at("workspace").at("max"));
  scene.seed = j.value("seed", std::uint64_t{0});
  return scene;
}

}  // namespace cpgrasp
