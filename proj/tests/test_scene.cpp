#include <gtest/gtest.h>

#include <random>

#include "support/fixtures.hpp"

using namespace cpgrasp;

namespace {

RigidTransform random_pose(std::mt19937_64& rng, const Vec3& center) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  RigidTransform t;
  t.rotation = q.toRotationMatrix();
  t.translation = center;
  return t;
}

std::vector<PrimitiveShape> exact_shapes(std::mt19937_64& rng) {
  return {PrimitiveShape::sphere(0.03, Vec3(0.1, 0.1, 0.1)),
          PrimitiveShape::box(Vec3(0.02, 0.03, 0.015), random_pose(rng, Vec3(0.2, 0.1, 0.1))),
          PrimitiveShape::cylinder(0.025, 0.04, random_pose(rng, Vec3(0.1, 0.2, 0.12))),
          PrimitiveShape::capsule(0.02, 0.03, random_pose(rng, Vec3(0.2, 0.2, 0.1)))};
}

// Brute-force distance to an axis-aligned ellipsoid surface: dense angular
// grid, then a local pattern search on the parametric angles.
double ellipsoid_distance_oracle(const Vec3& p, const Vec3& a) {
  const auto point = [&](double th, double ph) {
    return Vec3(a.x() * std::sin(th) * std::cos(ph), a.y() * std::sin(th) * std::sin(ph),
                a.z() * std::cos(th));
  };
  double best = 1e9, bt = 0, bp = 0;
  const int n = 200;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j < 2 * n; ++j) {
      const double th = kPi * i / n, ph = kPi * j / n;
      const double d = (point(th, ph) - p).norm();
      if (d < best) best = d, bt = th, bp = ph;
    }
  }
  for (double step = kPi / n; step > 1e-9; step *= 0.5) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (auto [dt, dp] : {std::pair{step, 0.0}, {-step, 0.0}, {0.0, step}, {0.0, -step}}) {
        const double d = (point(bt + dt, bp + dp) - p).norm();
        if (d < best) best = d, bt += dt, bp += dp, improved = true;
      }
    }
  }
  return best;
}

}  // namespace

TEST(SceneSdf, SpecExamples) {
  SceneSpec s;
  s.shapes.push_back(PrimitiveShape::sphere(0.05, Vec3::Zero()));
  EXPECT_NEAR(scene_sdf(s, Vec3(0, 0, 0.08)), 0.03, 1e-15);
  SceneSpec b;
  b.shapes.push_back(PrimitiveShape::box(Vec3::Constant(0.02), RigidTransform::identity()));
  EXPECT_NEAR(scene_sdf(b, Vec3(0.05, 0, 0)), 0.03, 1e-15);
  SceneSpec two;
  two.shapes.push_back(PrimitiveShape::sphere(0.02, Vec3(-0.1, 0, 0)));
  two.shapes.push_back(PrimitiveShape::sphere(0.03, Vec3(0.1, 0, 0)));
  EXPECT_NEAR(scene_sdf(two, Vec3::Zero()), std::min(0.1 - 0.02, 0.1 - 0.03), 1e-15);
}

TEST(SceneSdf, FloorHalfSpace) {
  SceneSpec s;
  s.floor_z = 0.02;
  EXPECT_NEAR(scene_sdf(s, Vec3(1, 2, 0.05)), 0.03, 1e-15);
  EXPECT_NEAR(scene_sdf(s, Vec3(1, 2, 0.0)), -0.02, 1e-15);
}

TEST(SceneSdf, CullingMatchesBruteForce) {
  std::mt19937_64 rng(1);
  const auto scene = generate_scene(17, 12).scene;
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int n = 0; n < 5000; ++n) {
    const Vec3 p(u(rng), u(rng), u(rng));
    double brute = p.z() - *scene.floor_z;
    for (const auto& s : scene.shapes) brute = std::min(brute, s.sdf(p));
    ASSERT_EQ(scene_sdf(scene, p), brute);
  }
}

TEST(SceneSdf, LipschitzAlongSegments) {
  std::mt19937_64 rng(2);
  SceneSpec scene;
  scene.shapes = exact_shapes(rng);
  scene.floor_z = 0.0;
  std::uniform_real_distribution<double> u(-0.05, 0.35);
  for (int n = 0; n < 2000; ++n) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    for (int k = 0; k < 20; ++k) {
      const Vec3 p = a + (b - a) * (k / 20.0);
      const Vec3 q = a + (b - a) * ((k + 1) / 20.0);
      ASSERT_LE(std::abs(scene_sdf(scene, p) - scene_sdf(scene, q)), (p - q).norm() + 1e-6);
    }
  }
}

TEST(PrimitiveShape, ExactDistancesAgainstSurfaceSamples) {
  // Outside points: distance equals the minimum over dense surface samples
  // (found by exact ray intersection from the center).
  std::mt19937_64 rng(3);
  for (const auto& s : exact_shapes(rng)) {
    std::vector<Vec3> surf;
    const int n = 20000;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < n; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / n;
      const double r = std::sqrt(1.0 - z * z);
      const Vec3 d(r * std::cos(golden * k), r * std::sin(golden * k), z);
      const auto iv = s.ray_interval(s.pose.translation, d);
      ASSERT_TRUE(iv);
      surf.push_back(s.pose.translation + iv->second * d);
    }
    std::normal_distribution<double> g;
    for (int t = 0; t < 50; ++t) {
      const Vec3 p = s.pose.translation + Vec3(g(rng), g(rng), g(rng)).normalized() *
                                              (s.bounding_radius() + 0.01 + 0.02 * (t % 3));
      double brute = 1e9;
      for (const auto& q : surf) brute = std::min(brute, (p - q).norm());
      EXPECT_NEAR(s.sdf(p), brute, 1.5e-3) << to_string(s.kind);
      EXPECT_LE(s.sdf(p), brute + 1e-12) << to_string(s.kind);
    }
  }
}

TEST(PrimitiveShape, EllipsoidWithinOnePercentOfSmallestAxis) {
  const Vec3 a(0.04, 0.025, 0.015);
  const auto e = PrimitiveShape::ellipsoid(a, RigidTransform::identity());
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int t = 0; t < 60; ++t) {
    const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    const double scale = 0.5 + 0.4 * (t % 4);  // inside and outside
    const Vec3 p = dir.cwiseProduct(a) * scale;
    const double oracle = ellipsoid_distance_oracle(p, a) * (scale < 1.0 ? -1.0 : 1.0);
    EXPECT_NEAR(e.sdf(p), oracle, 0.01 * a.minCoeff()) << p.transpose();
  }
}

TEST(PrimitiveShape, RayIntervalEndsOnSurface) {
  std::mt19937_64 rng(5);
  auto shapes = exact_shapes(rng);
  shapes.push_back(PrimitiveShape::ellipsoid(Vec3(0.03, 0.02, 0.04),
                                             random_pose(rng, Vec3(0.15, 0.15, 0.15))));
  std::normal_distribution<double> g;
  for (const auto& s : shapes) {
    for (int t = 0; t < 200; ++t) {
      const Vec3 d = Vec3(g(rng), g(rng), g(rng)).normalized();
      const Vec3 o = s.pose.translation - 0.2 * d + 0.01 * Vec3(g(rng), g(rng), g(rng));
      const auto iv = s.ray_interval(o, d);
      if (!iv) continue;
      EXPECT_NEAR(s.sdf(o + iv->first * d), 0.0, 1e-6) << to_string(s.kind);
      EXPECT_NEAR(s.sdf(o + iv->second * d), 0.0, 1e-6) << to_string(s.kind);
      EXPECT_LT(s.sdf(o + 0.5 * (iv->first + iv->second) * d), 1e-9);
    }
  }
}

TEST(PrimitiveShape, SupportMatchesSamples) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (const auto& s : exact_shapes(rng)) {
    const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    double best = -1e9;
    for (int k = 0; k < 20000; ++k) {
      const Vec3 d = Vec3(g(rng), g(rng), g(rng)).normalized();
      const auto iv = s.ray_interval(s.pose.translation, d);
      best = std::max(best, (iv->second * d).dot(dir));
    }
    EXPECT_NEAR(s.support(dir), best, 2e-3);
    EXPECT_GE(s.support(dir), best - 1e-12);
  }
}

TEST(PrimitiveShape, Validation) {
  EXPECT_THROW(PrimitiveShape::sphere(0.005, Vec3::Zero()).validate(), InvalidArgument);
  EXPECT_THROW(PrimitiveShape::sphere(0.3, Vec3::Zero()).validate(), InvalidArgument);
  PrimitiveShape s = PrimitiveShape::sphere(0.03, Vec3::Zero());
  s.params.push_back(0.02);
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(RenderDepth, SphereFromAbove) {
  SceneSpec s;
  s.shapes.push_back(PrimitiveShape::sphere(0.05, Vec3(0, 0, 0.05)));
  const CameraIntrinsics k{100, 100, 50, 50, 101, 101};
  const auto img = render_depth(s, k, look_at({0, 0, 0.5}, {0, 0, 0}));
  EXPECT_NEAR(img.at(50, 50), 0.400, 1e-3);
}

TEST(RenderDepth, FloorOnlyAndMiss) {
  SceneSpec s;
  s.floor_z = 0.0;
  const CameraIntrinsics k{100, 100, 50, 50, 101, 101};
  const auto cam = look_at({0, 0, 0.5}, {0, 0, 0});
  const auto img = render_depth(s, k, cam);
  for (float d : img.data) ASSERT_NEAR(d, 0.5, 1e-3);
  s.floor_z.reset();
  s.shapes.push_back(PrimitiveShape::sphere(0.02, Vec3(0, 0, 0)));
  const auto miss = render_depth(s, k, cam);
  EXPECT_EQ(miss.at(0, 0), 0.0f);
  EXPECT_GT(miss.at(50, 50), 0.0f);
}

TEST(RenderDepth, HitPointsLieOnSurfaces) {
  const auto scene = generate_scene(12, 8).scene;
  const SensorRig rig;
  for (const auto& cam : rig.viewpoints(scene, 4)) {
    const auto img = render_depth(scene, rig.intrinsics, cam);
    int hits = 0;
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        const float d = img.at(c, r);
        if (d <= 0.f) {
          // Steep views see above the horizon. A miss must really be a miss.
          const Vec3 dir = cam.rotation * Vec3((c - rig.intrinsics.cx) / rig.intrinsics.fx,
                                               (r - rig.intrinsics.cy) / rig.intrinsics.fy, 1.0)
                                              .normalized();
          if (dir.z() < 0.0) {
            ASSERT_GT((*scene.floor_z - cam.translation.z()) / dir.z(), RenderSettings{}.max_distance);
          }
          for (double t = 0.0; t < 1.0; t += 1e-3) {
            ASSERT_GT(scene_sdf(scene, cam.translation + t * dir), 0.0);
          }
          continue;
        }
        ++hits;
        const Vec3 p = backproject(rig.intrinsics, cam, c, r, d);
        ASSERT_LT(std::abs(scene_sdf(scene, p)), 1e-3);
      }
    }
    EXPECT_GT(hits, img.width * img.height / 2);
  }
}

TEST(RenderDepth, ParallelMatchesSerial) {
  const auto scene = generate_scene(13, 6).scene;
  const SensorRig rig;
  const auto cam = rig.viewpoints(scene, 3)[2];
  EXPECT_EQ(render_depth(scene, rig.intrinsics, cam, {}, 1).data,
            render_depth(scene, rig.intrinsics, cam, {}, 4).data);
}

TEST(GenerateScene, SingleSphereRestsOnFloor) {
  ShapeCatalog cat;
  cat.kind_weights = {1, 0, 0, 0, 0};
  cat.sphere_radius = {0.03, 0.03};
  cat.floor_z = 0.0;
  const auto gen = generate_scene(1, 1, cat);
  ASSERT_EQ(gen.scene.shapes.size(), 1u);
  EXPECT_NEAR(gen.scene.shapes[0].pose.translation.z(), 0.03, 1e-6);
}

TEST(GenerateScene, Deterministic) {
  const auto a = scene_to_json(generate_scene(99, 10).scene).dump();
  const auto b = scene_to_json(generate_scene(99, 10).scene).dump();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, scene_to_json(generate_scene(100, 10).scene).dump());
}

TEST(GenerateScene, TwentyObjectsKeepClearance) {
  const auto gen = generate_scene(2024, 20);
  const auto& scene = gen.scene;
  EXPECT_GE(scene.shapes.size() + gen.skipped, 20u);
  EXPECT_GE(scene.shapes.size(), 15u);
  scene.validate();
  const int n = 3000;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const auto& s = scene.shapes[i];
    double worst = 1e9;
    for (int k = 0; k < n; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / n;
      const double r = std::sqrt(1.0 - z * z);
      const Vec3 d(r * std::cos(golden * k), r * std::sin(golden * k), z);
      const auto iv = s.ray_interval(s.pose.translation, d);
      const Vec3 p = s.pose.translation + iv->second * d;
      for (std::size_t j = 0; j < scene.shapes.size(); ++j) {
        if (j != i) worst = std::min(worst, scene.shapes[j].sdf(p));
      }
      worst = std::min(worst, p.z() - *scene.floor_z + 1e-9);
    }
    EXPECT_GT(worst, -0.002) << "shape " << i;
  }
}

TEST(GenerateScene, RejectsBadCounts) {
  EXPECT_THROW(generate_scene(1, 0), InvalidArgument);
  EXPECT_THROW(generate_scene(1, 31), InvalidArgument);
}

TEST(SampleViewpoints, SpecExamples) {
  const Aabb ws = fixtures::unit_workspace();
  const Vec3 c = ws.center();
  const auto one = sample_viewpoints(1, ws, 0.45);
  EXPECT_LE((one[0].translation - (c + Vec3(0, 0, 0.45))).norm(), 1e-12);
  EXPECT_LE((one[0].rotation.col(2) - Vec3(0, 0, -1)).norm(), 1e-12);
  for (const auto& cam : sample_viewpoints(20, ws, 0.45)) {
    EXPECT_NEAR((cam.translation - c).norm(), 0.45, 1e-9);
    EXPECT_GT(cam.translation.z(), c.z());
    const Vec3 to_c = c - cam.translation;
    EXPECT_LE(to_c.cross(cam.rotation.col(2)).norm(), 1e-9);
    EXPECT_GT(to_c.dot(cam.rotation.col(2)), 0.0);
    EXPECT_TRUE(cam.is_valid());
  }
}

TEST(SceneJson, RoundTrip) {
  const auto scene = generate_scene(5, 8).scene;
  const auto j = scene_to_json(scene);
  const auto back = scene_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(scene_to_json(back).dump(), j.dump());
  EXPECT_EQ(back.shapes.size(), scene.shapes.size());
}

TEST(Fusion, MatchesPerViewProjectiveOracle) {
  // Every voxel is the plain mean of clamp(d - z) over the views that see it.
  const auto scene = generate_scene(31, 5).scene;
  const SensorRig rig;
  const int n_views = 12;
  const auto vol = fuse_views(scene, VolumeConfig{}, rig, n_views);
  const auto poses = rig.viewpoints(scene, n_views);
  std::vector<DepthImage> images;
  for (const auto& cam : poses) images.push_back(render_depth(scene, rig.intrinsics, cam, rig.render));
  const auto& in = rig.intrinsics;
  const double trunc = vol.truncation();
  const auto [nx, ny, nz] = vol.dims();
  std::size_t observed = 0;
  for (int k = 0; k < nz; k += 3)
    for (int j = 0; j < ny; j += 3)
      for (int i = 0; i < nx; i += 3) {
        const Vec3 q = vol.voxel_center(i, j, k);
        double sum = 0.0;
        int count = 0;
        for (std::size_t v = 0; v < poses.size(); ++v) {
          const Vec3 c = poses[v].rotation.transpose() * (q - poses[v].translation);
          if (c.z() <= 1e-6) continue;
          const double col = std::floor(in.fx * c.x() / c.z() + in.cx + 0.5);
          const double row = std::floor(in.fy * c.y() / c.z() + in.cy + 0.5);
          if (col < 0 || row < 0 || col >= in.width || row >= in.height) continue;
          const double d = images[v].at(int(col), int(row));
          if (d <= 0.0 || d - c.z() < -trunc) continue;
          sum += std::min(d - c.z(), trunc);
          ++count;
        }
        ASSERT_EQ(vol.weight(i, j, k), double(count)) << i << ' ' << j << ' ' << k;
        if (count == 0) continue;
        ++observed;
        ASSERT_NEAR(vol.value(i, j, k), sum / count, 1e-12) << i << ' ' << j << ' ' << k;
      }
  EXPECT_GT(observed, 1000u);
}
