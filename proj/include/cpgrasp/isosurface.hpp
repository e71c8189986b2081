#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <unordered_map>
#include <vector>

#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/io.hpp"
#include "cpgrasp/marching_cubes_tables.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

// Triangle mesh of the zero level set. Normals point toward positive SDF.
struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<std::array<int, 3>> triangles;

  std::size_t size() const { return vertices.size(); }
  bool empty() const { return vertices.empty(); }
};

namespace detail {

// Edge key: lower-corner voxel index * 3 + axis.
using EdgeKey = std::uint64_t;

struct SlabOutput {
  std::vector<Vec3> points;                     // one per new edge key
  std::vector<EdgeKey> keys;
  std::vector<Vec3> fallback_dirs;              // negative -> positive corner
  std::vector<std::array<EdgeKey, 3>> triangles;
};

}  // namespace detail

// Lorensen-Cline marching cubes at isolevel 0. Cubes with an unobserved
// corner are skipped. Vertices on shared edges are merged by edge key and
// numbered in x-fastest scan order of the cube that first emits them, so the
// output does not depend on `jobs`.
inline SurfaceMesh marching_cubes(const TsdfVolume& vol, int jobs = 1) {
  if (vol.observed_count() == 0) throw EmptyVolume("no observed voxels");
  const auto [nx, ny, nz] = vol.dims();
  const auto key_of = [&](int i, int j, int k, int axis) -> detail::EdgeKey {
    return static_cast<detail::EdgeKey>(vol.index(i, j, k)) * 3 + axis;
  };

  std::vector<detail::SlabOutput> slabs(std::size_t(nz - 1));
  parallel_for(slabs.size(), jobs, [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    auto& out = slabs[kk];
    std::unordered_map<detail::EdgeKey, int> local;
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        std::array<double, 8> val;
        bool observed = true;
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = mc::kCornerOffset[c];
          const int ci = i + o[0], cj = j + o[1], ck = k + o[2];
          if (!vol.observed(ci, cj, ck)) {
            observed = false;
            break;
          }
          val[c] = vol.value(ci, cj, ck);
          if (val[c] < 0.0) cube |= 1 << c;
        }
        if (!observed) continue;
        const auto edges = mc::kEdgeTable[cube];
        if (edges == 0) continue;
        std::array<detail::EdgeKey, 12> ekey{};
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const auto [c0, c1] = mc::kEdgeCorners[e];
          const auto& o0 = mc::kCornerOffset[c0];
          const auto& o1 = mc::kCornerOffset[c1];
          int axis = 0;
          for (int a = 0; a < 3; ++a) {
            if (o0[a] != o1[a]) axis = a;
          }
          const bool forward = o0[axis] < o1[axis];
          const auto& lo = forward ? o0 : o1;
          ekey[e] = key_of(i + lo[0], j + lo[1], k + lo[2], axis);
          if (local.count(ekey[e])) continue;
          const Vec3 p0 = vol.voxel_center(i + o0[0], j + o0[1], k + o0[2]);
          const Vec3 p1 = vol.voxel_center(i + o1[0], j + o1[1], k + o1[2]);
          const double v0 = val[c0], v1 = val[c1];
          const double t = v0 / (v0 - v1);
          local.emplace(ekey[e], static_cast<int>(out.keys.size()));
          out.keys.push_back(ekey[e]);
          out.points.push_back(p0 + t * (p1 - p0));
          out.fallback_dirs.push_back(v0 < 0.0 ? (p1 - p0) : (p0 - p1));
        }
        const auto& tri = mc::kTriTable[cube];
        for (int n = 0; tri[n] != -1; n += 3) {
          // Table winding is clockwise seen from the positive side.
          out.triangles.push_back({ekey[tri[n]], ekey[tri[n + 2]], ekey[tri[n + 1]]});
        }
      }
    }
  });

  SurfaceMesh mesh;
  std::unordered_map<detail::EdgeKey, int> global;
  std::vector<Vec3> fallback;
  for (const auto& slab : slabs) {
    for (std::size_t n = 0; n < slab.keys.size(); ++n) {
      if (global.emplace(slab.keys[n], static_cast<int>(mesh.vertices.size())).second) {
        mesh.vertices.push_back(slab.points[n]);
        fallback.push_back(slab.fallback_dirs[n]);
      }
    }
    for (const auto& t : slab.triangles) {
      mesh.triangles.push_back({global.at(t[0]), global.at(t[1]), global.at(t[2])});
    }
  }

  mesh.normals.resize(mesh.vertices.size());
  parallel_for(mesh.vertices.size(), jobs, [&](std::size_t n) {
    Vec3 g = gradient_clamped(vol, mesh.vertices[n]);
    if (!(g.norm() > 1e-12)) g = fallback[n];
    mesh.normals[n] = g.normalized();
  });
  return mesh;
}

inline void write_obj(std::ostream& os, const SurfaceMesh& mesh) {
  os << std::setprecision(9);
  for (const auto& v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& n : mesh.normals) os << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
  for (const auto& t : mesh.triangles) {
    os << "f";
    for (int i : t) os << ' ' << i + 1 << "//" << i + 1;
    os << '\n';
  }
  if (!os) throw IoError("failed writing OBJ");
}

inline void write_ply(std::ostream& os, const SurfaceMesh& mesh) {
  os << "ply\nformat binary_little_endian 1.0\n"
     << "element vertex " << mesh.vertices.size() << '\n'
     << "property float x\nproperty float y\nproperty float z\n"
     << "property float nx\nproperty float ny\nproperty float nz\n"
     << "element face " << mesh.triangles.size() << '\n'
     << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t n = 0; n < mesh.vertices.size(); ++n) {
    for (int a = 0; a < 3; ++a) detail::put_le<float>(os, static_cast<float>(mesh.vertices[n][a]));
    for (int a = 0; a < 3; ++a) detail::put_le<float>(os, static_cast<float>(mesh.normals[n][a]));
  }
  for (const auto& t : mesh.triangles) {
    detail::put_le<std::uint8_t>(os, 3);
    for (int i : t) detail::put_le<std::int32_t>(os, i);
  }
  if (!os) throw IoError("failed writing PLY");
}

inline void save_obj(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  auto os = detail::open_out(path);
  write_obj(os, mesh);
}

inline void save_ply(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  auto os = detail::open_out(path);
  write_ply(os, mesh);
}

}  // namespace cpgrasp
