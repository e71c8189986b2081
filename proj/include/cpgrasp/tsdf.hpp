#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/parallel.hpp"

namespace cpgrasp {

// Row-major depth map in meters; 0 marks a pixel with no return.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0.f) {}

  float& at(int col, int row) { return data[std::size_t(row) * width + col]; }
  float at(int col, int row) const {
    return data[std::size_t(row) * width + col];
  }
};

using Index3 = std::array<int, 3>;

// Dense grid used to build TsdfVolume instances with the toolkit defaults.
struct VolumeConfig {
  Vec3 origin = Vec3::Zero();
  double size = 0.3;
  int resolution = 64;
  double truncation_voxels = 4.0;
  double max_weight = 64.0;

  double voxel_size() const { return size / resolution; }
};

// Truncated signed distance field on a dense voxel grid. Voxel (i, j, k) is
// centered at origin + (ijk + 0.5) * voxel_size; storage is x-fastest.
// Voxels with weight 0 have never been observed and read as +truncation.
class TsdfVolume {
 public:
  TsdfVolume(const Vec3& origin, double voxel_size, const Index3& dims,
             double truncation, double max_weight = 64.0)
      : origin_(origin),
        voxel_size_(voxel_size),
        dims_(dims),
        truncation_(truncation),
        max_weight_(max_weight) {
    if (!(voxel_size > 0.0)) throw InvalidArgument("voxel_size must be > 0");
    for (int d : dims) {
      if (d < 2) throw InvalidArgument("each dimension needs >= 2 voxels");
    }
    if (!(truncation >= 2.0 * voxel_size - 1e-12)) {
      throw InvalidArgument("truncation must be >= 2 * voxel_size");
    }
    if (!(max_weight >= 1.0)) throw InvalidArgument("max_weight must be >= 1");
    const std::size_t n = std::size_t(dims[0]) * dims[1] * dims[2];
    values_.assign(n, truncation_);
    weights_.assign(n, 0.0);
  }

  explicit TsdfVolume(const VolumeConfig& cfg)
      : TsdfVolume(cfg.origin, cfg.voxel_size(),
                   {cfg.resolution, cfg.resolution, cfg.resolution},
                   cfg.truncation_voxels * cfg.voxel_size(), cfg.max_weight) {}

  const Vec3& origin() const { return origin_; }
  double voxel_size() const { return voxel_size_; }
  const Index3& dims() const { return dims_; }
  double truncation() const { return truncation_; }
  double max_weight() const { return max_weight_; }
  std::size_t voxel_count() const { return values_.size(); }

  Vec3 extent() const {
    return Vec3(dims_[0], dims_[1], dims_[2]) * voxel_size_;
  }
  Vec3 max_corner() const { return origin_ + extent(); }

  std::size_t index(int i, int j, int k) const {
    return std::size_t(i) + std::size_t(dims_[0]) * (std::size_t(j) + std::size_t(dims_[1]) * k);
  }

  double value(int i, int j, int k) const { return values_[index(i, j, k)]; }
  double weight(int i, int j, int k) const { return weights_[index(i, j, k)]; }
  bool observed(int i, int j, int k) const { return weights_[index(i, j, k)] > 0.0; }

  Vec3 voxel_center(int i, int j, int k) const {
    return origin_ + (Vec3(i, j, k) + Vec3::Constant(0.5)) * voxel_size_;
  }

  // Writes one voxel. The value is clamped to +-truncation; weight 0 resets
  // the voxel to unobserved.
  void set_voxel(int i, int j, int k, double value, double weight) {
    const std::size_t n = index(i, j, k);
    if (weight > 0.0) {
      values_[n] = std::clamp(value, -truncation_, truncation_);
      weights_[n] = std::min(weight, max_weight_);
    } else {
      values_[n] = truncation_;
      weights_[n] = 0.0;
    }
  }

  std::span<const double> values() const { return values_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_values() { return values_; }
  std::span<double> mutable_weights() { return weights_; }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(
        std::count_if(weights_.begin(), weights_.end(), [](double w) { return w > 0.0; }));
  }

  // Continuous grid coordinate; integer values sit on voxel centers.
  Vec3 grid_coord(const Vec3& p) const {
    return (p - origin_) / voxel_size_ - Vec3::Constant(0.5);
  }

  // The trilinear domain: the box spanned by the first and last voxel centers.
  bool in_sample_region(const Vec3& p) const {
    const Vec3 g = grid_coord(p);
    constexpr double eps = 1e-9;
    for (int a = 0; a < 3; ++a) {
      if (!(g[a] >= -eps && g[a] <= dims_[a] - 1 + eps)) return false;
    }
    return true;
  }

 private:
  Vec3 origin_;
  double voxel_size_;
  Index3 dims_;
  double truncation_;
  double max_weight_;
  std::vector<double> values_;
  std::vector<double> weights_;
};

namespace detail {

struct Cell {
  Index3 base;
  Vec3 frac;
};

inline std::optional<Cell> locate_cell(const TsdfVolume& vol, const Vec3& p) {
  if (!vol.in_sample_region(p)) return std::nullopt;
  const Vec3 g = vol.grid_coord(p);
  Cell c;
  for (int a = 0; a < 3; ++a) {
    const int hi = vol.dims()[a] - 2;
    const int i0 = std::clamp(static_cast<int>(std::floor(g[a])), 0, hi);
    c.base[a] = i0;
    c.frac[a] = std::clamp(g[a] - i0, 0.0, 1.0);
  }
  return c;
}

// Trilinear blend of the cell corners. `all_observed` reports whether every
// corner carries weight.
inline double blend(const TsdfVolume& vol, const Cell& c, bool* all_observed) {
  const auto& [i, j, k] = c.base;
  const double fx = c.frac.x(), fy = c.frac.y(), fz = c.frac.z();
  const auto vals = vol.values();
  const auto wts = vol.weights();
  const std::size_t sx = 1, sy = vol.dims()[0],
                    sz = std::size_t(vol.dims()[0]) * vol.dims()[1];
  const std::size_t n = vol.index(i, j, k);
  const std::array<std::size_t, 8> idx = {n,           n + sx,           n + sy,
                                          n + sx + sy, n + sz,           n + sx + sz,
                                          n + sy + sz, n + sx + sy + sz};
  if (all_observed != nullptr) {
    bool ok = true;
    for (std::size_t m : idx) ok = ok && wts[m] > 0.0;
    *all_observed = ok;
  }
  const double c00 = vals[idx[0]] * (1 - fx) + vals[idx[1]] * fx;
  const double c10 = vals[idx[2]] * (1 - fx) + vals[idx[3]] * fx;
  const double c01 = vals[idx[4]] * (1 - fx) + vals[idx[5]] * fx;
  const double c11 = vals[idx[6]] * (1 - fx) + vals[idx[7]] * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

}  // namespace detail

inline std::optional<double> try_sample_trilinear(const TsdfVolume& vol,
                                                  const Vec3& p) {
  const auto cell = detail::locate_cell(vol, p);
  if (!cell) return std::nullopt;
  return detail::blend(vol, *cell, nullptr);
}

inline double sample_trilinear(const TsdfVolume& vol, const Vec3& p) {
  const auto v = try_sample_trilinear(vol, p);
  if (!v) throw OutOfBounds("sample point outside the voxel-center lattice");
  return *v;
}

// Like try_sample_trilinear, but empty unless all eight corners were observed.
inline std::optional<double> sample_observed(const TsdfVolume& vol,
                                             const Vec3& p) {
  const auto cell = detail::locate_cell(vol, p);
  if (!cell) return std::nullopt;
  bool ok = false;
  const double v = detail::blend(vol, *cell, &ok);
  if (!ok) return std::nullopt;
  return v;
}

// Central differences of the trilinear field with step voxel_size.
inline Vec3 gradient(const TsdfVolume& vol, const Vec3& p) {
  const double h = vol.voxel_size();
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 d = Vec3::Zero();
    d[a] = h;
    const auto hi = try_sample_trilinear(vol, p + d);
    const auto lo = try_sample_trilinear(vol, p - d);
    if (!hi || !lo) throw OutOfBounds("gradient stencil leaves the volume");
    g[a] = (*hi - *lo) / (2.0 * h);
  }
  return g;
}

// Gradient whose stencil is clamped into the sample region; one-sided at the
// boundary. Used for surface normals anywhere in the lattice.
inline Vec3 gradient_clamped(const TsdfVolume& vol, const Vec3& p) {
  const double h = vol.voxel_size();
  const Vec3 lo_corner = vol.origin() + Vec3::Constant(0.5 * h);
  const Vec3 hi_corner = vol.max_corner() - Vec3::Constant(0.5 * h);
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 ph = p, pl = p;
    ph[a] = std::min(p[a] + h, hi_corner[a]);
    pl[a] = std::max(p[a] - h, lo_corner[a]);
    const auto hi = try_sample_trilinear(vol, ph);
    const auto lo = try_sample_trilinear(vol, pl);
    if (!hi || !lo || ph[a] - pl[a] <= 0.0) {
      g[a] = 0.0;
      continue;
    }
    g[a] = (*hi - *lo) / (ph[a] - pl[a]);
  }
  return g;
}

// Weighted running-average fusion of one depth frame (unit observation
// weight). Voxels more than `truncation` behind the observed surface are left
// untouched.
inline void integrate_depth(TsdfVolume& vol, const DepthImage& depth,
                            const CameraIntrinsics& intr,
                            const RigidTransform& cam_pose, int jobs = 1) {
  if (depth.width != intr.width || depth.height != intr.height ||
      depth.data.size() != std::size_t(depth.width) * depth.height) {
    throw DimensionMismatch("depth image size differs from intrinsics");
  }
  if (!cam_pose.is_valid(1e-6)) throw InvalidArgument("camera pose not rigid");
  const auto [nx, ny, nz] = vol.dims();
  const double trunc = vol.truncation();
  const double wmax = vol.max_weight();
  const Mat3 rt = cam_pose.rotation.transpose();
  const Vec3 t = cam_pose.translation;
  auto values = vol.mutable_values();
  auto weights = vol.mutable_weights();

  parallel_for(std::size_t(nz), jobs, [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec3 c = rt * (vol.voxel_center(i, j, k) - t);
        const double z = c.z();
        if (z <= 1e-6) continue;
        const double u = intr.fx * c.x() / z + intr.cx;
        const double v = intr.fy * c.y() / z + intr.cy;
        const long col = std::lround(u);
        const long row = std::lround(v);
        if (col < 0 || row < 0 || col >= depth.width || row >= depth.height) continue;
        const double d = depth.at(static_cast<int>(col), static_cast<int>(row));
        if (!(d > 0.0) || !std::isfinite(d)) continue;
        const double diff = d - z;
        if (diff < -trunc) continue;
        const double sdf = std::min(diff, trunc);
        const std::size_t n = vol.index(i, j, k);
        const double w = weights[n];
        values[n] = (w * values[n] + sdf) / (w + 1.0);
        weights[n] = std::min(w + 1.0, wmax);
      }
    }
  });
}

enum class CrossingSign { PosToNeg, NegToPos };

struct RayHit {
  Vec3 point;
  double t = 0.0;
};

// Marches origin + t * dir in half-voxel steps and returns the first sign
// change of the requested polarity, refined by linear interpolation of the
// two bracketing samples. Only samples whose eight corners are observed take
// part; unobserved space never produces a crossing.
inline std::optional<RayHit> raycast_zero_crossing(const TsdfVolume& vol,
                                                   const Vec3& origin,
                                                   const Vec3& dir,
                                                   double max_dist,
                                                   CrossingSign sign) {
  if (!(max_dist > 0.0)) return std::nullopt;
  const double step = 0.5 * vol.voxel_size();
  std::optional<double> prev;
  double prev_t = 0.0;
  const int steps = static_cast<int>(std::floor(max_dist / step + 1e-9));
  for (int s = 0; s <= steps; ++s) {
    const double t = s * step;
    const Vec3 p = origin + t * dir;
    if (!vol.in_sample_region(p)) return std::nullopt;
    const auto cur = sample_observed(vol, p);
    if (cur && prev) {
      const bool hit = sign == CrossingSign::PosToNeg ? (*prev > 0.0 && *cur <= 0.0)
                                                      : (*prev < 0.0 && *cur >= 0.0);
      if (hit) {
        const double denom = *prev - *cur;
        const double s = denom != 0.0 ? *prev / denom : 0.0;
        const double th = prev_t + s * (t - prev_t);
        return RayHit{origin + th * dir, th};
      }
    }
    prev = cur;
    prev_t = t;
  }
  return std::nullopt;
}

}  // namespace cpgrasp
