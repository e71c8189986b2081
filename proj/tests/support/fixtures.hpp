#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>

#include "cpgrasp/cpgrasp.hpp"

namespace fixtures {

using namespace cpgrasp;

inline Aabb unit_workspace() { return Aabb{Vec3(0.0, 0.0, 0.0), Vec3(0.3, 0.3, 0.3)}; }

inline SceneSpec single_sphere(double r, const Vec3& center = Vec3(0.15, 0.15, 0.15)) {
  SceneSpec s;
  s.shapes.push_back(PrimitiveShape::sphere(r, center));
  s.workspace = unit_workspace();
  return s;
}

// Upper-hemisphere rig viewpoints plus their mirror images below the
// workspace center, so a floating object is seen from every side.
inline std::vector<RigidTransform> all_around_viewpoints(const SceneSpec& scene,
                                                         const SensorRig& rig, int n_per_side) {
  auto poses = rig.viewpoints(scene, n_per_side);
  const Vec3 c = scene.workspace.center();
  const std::size_t n = poses.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 eye = poses[i].translation;
    eye.z() = 2.0 * c.z() - eye.z();
    poses.push_back(look_at(eye, c));
  }
  return poses;
}

inline void fuse_poses(TsdfVolume& vol, const SceneSpec& scene, const SensorRig& rig,
                       const std::vector<RigidTransform>& poses) {
  for (const auto& p : poses) {
    integrate_depth(vol, render_depth(scene, rig.intrinsics, p, rig.render), rig.intrinsics, p);
  }
}

inline TsdfVolume fuse_all_around(const SceneSpec& scene, int n_per_side = 20,
                                  const VolumeConfig& cfg = {}, const SensorRig& rig = {}) {
  TsdfVolume vol(cfg);
  fuse_poses(vol, scene, rig, all_around_viewpoints(scene, rig, n_per_side));
  return vol;
}

// Writes f(voxel center) into every voxel with unit weight.
inline void fill(TsdfVolume& vol, const std::function<double(const Vec3&)>& f) {
  const auto [nx, ny, nz] = vol.dims();
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) vol.set_voxel(i, j, k, f(vol.voxel_center(i, j, k)), 1.0);
}

// Exact (clamped) SDF volume of a scene, as if observed everywhere.
inline TsdfVolume analytic_volume(const SceneSpec& scene, const VolumeConfig& cfg = {}) {
  TsdfVolume vol(cfg);
  fill(vol, [&](const Vec3& p) { return scene_sdf(scene, p); });
  return vol;
}

// Share of observed voxels with |true SDF| < truncation / 2 whose fused value
// lies within `tol` of the clamped true SDF.
struct Fidelity {
  std::size_t considered = 0;
  std::size_t within = 0;
  double fraction() const { return considered ? double(within) / considered : 0.0; }
};

inline Fidelity fusion_fidelity(const TsdfVolume& vol, const SceneSpec& scene, double tol) {
  Fidelity f;
  const double trunc = vol.truncation();
  const auto [nx, ny, nz] = vol.dims();
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (!vol.observed(i, j, k)) continue;
        const double truth = scene_sdf(scene, vol.voxel_center(i, j, k));
        if (!(std::abs(truth) < trunc / 2)) continue;
        ++f.considered;
        if (std::abs(vol.value(i, j, k) - std::clamp(truth, -trunc, trunc)) <= tol) ++f.within;
      }
  return f;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cpgrasp_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
