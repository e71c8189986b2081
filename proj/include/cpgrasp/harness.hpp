#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cpgrasp/contact.hpp"
#include "cpgrasp/errors.hpp"
#include "cpgrasp/oracle.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/planner.hpp"
#include "cpgrasp/scene.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

// Everything needed to go from a scene to ranked poses.
struct PipelineConfig {
  VolumeConfig volume;
  SensorRig rig;
  GripperModel gripper = GripperModel::make(GripperModel{});
  PlannerParams planner;
  AntipodalParams contact;
  ShapeCatalog catalog;

  OracleOptions oracle() const {
    OracleOptions o;
    o.finger_clearance = planner.finger_clearance_voxels * volume.voxel_size();
    return o;
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["volume"] = {{"origin", vec_to_json(c.volume.origin)},
                 {"size", c.volume.size},
                 {"resolution", c.volume.resolution},
                 {"truncation_voxels", c.volume.truncation_voxels},
                 {"max_weight", c.volume.max_weight}};
  j["camera"] = {{"intrinsics", intrinsics_to_json(c.rig.intrinsics)},
                 {"radius", c.rig.radius},
                 {"max_polar_deg", rad_to_deg(c.rig.max_polar)}};
  j["gripper"] = gripper_to_json(c.gripper);
  j["planner"] = planner_params_to_json(c.planner);
  j["contact"] = antipodal_params_to_json(c.contact);
  return j;
}

// Missing keys keep their defaults.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("volume")) {
    const auto& v = j.at("volume");
    if (v.contains("origin")) c.volume.origin = vec_from_json(v.at("origin"));
    c.volume.size = v.value("size", c.volume.size);
    c.volume.resolution = v.value("resolution", c.volume.resolution);
    c.volume.truncation_voxels = v.value("truncation_voxels", c.volume.truncation_voxels);
    c.volume.max_weight = v.value("max_weight", c.volume.max_weight);
  }
  if (j.contains("camera")) {
    const auto& k = j.at("camera");
    if (k.contains("intrinsics")) c.rig.intrinsics = intrinsics_from_json(k.at("intrinsics"));
    c.rig.radius = k.value("radius", c.rig.radius);
    c.rig.max_polar = deg_to_rad(k.value("max_polar_deg", rad_to_deg(c.rig.max_polar)));
  }
  if (j.contains("gripper")) c.gripper = gripper_from_json(j.at("gripper"));
  if (j.contains("planner")) c.planner = planner_params_from_json(j.at("planner"));
  if (j.contains("contact")) c.contact = antipodal_params_from_json(j.at("contact"));
  return c;
}

// --- per-scene evaluation -------------------------------------------------------

struct SceneEval {
  std::uint64_t seed = 0;
  int clutter = 0;
  int objects = 0;
  bool has_pose = false;
  double antipodal_score = 0.0;
  bool collision_free = false;
  std::optional<GraspPose> top;
  PlanStats stats;
  double ms_fusion = 0.0;
};

inline SceneEval evaluate_volume(const SceneSpec& scene, const TsdfVolume& vol,
                                 const PipelineConfig& cfg, const GripperModel& dense,
                                 int jobs = 1) {
  SceneEval ev;
  ev.seed = scene.seed;
  ev.objects = static_cast<int>(scene.shapes.size());
  const PlanResult res = plan(vol, cfg.gripper, AnalyticScorer{}, cfg.planner, cfg.contact, jobs);
  ev.stats = res.stats;
  if (!res.poses.empty()) {
    ev.has_pose = true;
    ev.top = res.poses.front().pose;
    const PoseMetrics m = oracle_pose_metrics(scene, *ev.top, dense, cfg.oracle());
    ev.antipodal_score = m.antipodal_score;
    ev.collision_free = m.collision_free;
  }
  return ev;
}

inline SceneEval evaluate_scene(const SceneSpec& scene, int views, const PipelineConfig& cfg,
                                const GripperModel& dense, int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const TsdfVolume vol = fuse_views(scene, cfg.volume, cfg.rig, views, jobs);
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0).count();
  SceneEval ev = evaluate_volume(scene, vol, cfg, dense, jobs);
  ev.ms_fusion = ms;
  return ev;
}

// --- batch evaluation ---------------------------------------------------------------

struct LevelSummary {
  int clutter = 0;
  int scenes = 0;
  int no_pose = 0;
  double mean_as = 0.0;       // over scenes with a pose
  double cfr = 0.0;           // percent, over scenes with a pose
  double mean_vertices = 0.0;
  double mean_pairs = 0.0;
  double mean_feasible = 0.0;
  double mean_final = 0.0;
  double ms_fusion = 0.0;
  double ms_plan = 0.0;

  double no_pose_rate() const { return scenes ? double(no_pose) / scenes : 0.0; }
};

struct EvalReport {
  std::vector<SceneEval> scenes;
  std::vector<LevelSummary> levels;
  LevelSummary overall;
  int views = 0;
  nlohmann::json config;
};

inline LevelSummary summarize(int clutter, const std::vector<const SceneEval*>& evs) {
  LevelSummary s;
  s.clutter = clutter;
  s.scenes = static_cast<int>(evs.size());
  int with_pose = 0, free = 0;
  for (const SceneEval* e : evs) {
    s.mean_vertices += double(e->stats.vertices);
    s.mean_pairs += double(e->stats.pairs);
    s.mean_feasible += double(e->stats.feasible);
    s.mean_final += double(e->stats.final_poses);
    s.ms_fusion += e->ms_fusion;
    s.ms_plan += e->stats.ms_total;
    if (!e->has_pose) {
      ++s.no_pose;
      continue;
    }
    ++with_pose;
    s.mean_as += e->antipodal_score;
    if (e->collision_free) ++free;
  }
  if (with_pose > 0) {
    s.mean_as /= with_pose;
    s.cfr = 100.0 * free / with_pose;
  }
  if (s.scenes > 0) {
    for (double* v : {&s.mean_vertices, &s.mean_pairs, &s.mean_feasible, &s.mean_final,
                      &s.ms_fusion, &s.ms_plan}) {
      *v /= s.scenes;
    }
  }
  return s;
}

// Scene seed for position `index` at a clutter level.
inline std::uint64_t scene_seed(std::uint64_t base, int clutter, int index) {
  return base + 100000ull * std::uint64_t(clutter) + std::uint64_t(index);
}

// `scenes_per_level` generated scenes per clutter level, each fused from
// `views` frames, planned, and scored on its top pose. Scenes run in parallel
// over `jobs` workers, each single-threaded.
inline EvalReport eval_batch(std::uint64_t seed, const std::vector<int>& clutter_levels,
                             int scenes_per_level, int views, const PipelineConfig& cfg,
                             int jobs = 1) {
  struct Job {
    int clutter;
    int index;
  };
  std::vector<Job> work;
  for (int c : clutter_levels) {
    for (int i = 0; i < scenes_per_level; ++i) work.push_back({c, i});
  }
  const GripperModel dense = oracle_gripper(cfg.gripper, cfg.oracle());
  EvalReport report;
  report.views = views;
  report.config = config_to_json(cfg);
  report.scenes.resize(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t n) {
    const auto gen = generate_scene(scene_seed(seed, work[n].clutter, work[n].index),
                                    work[n].clutter, cfg.catalog);
    report.scenes[n] = evaluate_scene(gen.scene, views, cfg, dense, 1);
    report.scenes[n].clutter = work[n].clutter;
  });
  std::vector<const SceneEval*> all;
  for (int c : clutter_levels) {
    std::vector<const SceneEval*> sel;
    for (const auto& e : report.scenes) {
      if (e.clutter == c) sel.push_back(&e);
    }
    report.levels.push_back(summarize(c, sel));
  }
  for (const auto& e : report.scenes) all.push_back(&e);
  report.overall = summarize(0, all);
  return report;
}

inline nlohmann::json level_to_json(const LevelSummary& s) {
  return {{"clutter", s.clutter},         {"scenes", s.scenes},
          {"no_pose", s.no_pose},         {"as", s.mean_as},
          {"cfr", s.cfr},                 {"mean_vertices", s.mean_vertices},
          {"mean_pairs", s.mean_pairs},   {"mean_feasible", s.mean_feasible},
          {"mean_final", s.mean_final},   {"ms_fusion", s.ms_fusion},
          {"ms_plan", s.ms_plan}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& e : r.scenes) {
    nlohmann::json j = {{"seed", e.seed},
                        {"clutter", e.clutter},
                        {"objects", e.objects},
                        {"has_pose", e.has_pose},
                        {"as", e.antipodal_score},
                        {"collision_free", e.collision_free},
                        {"counts",
                         {{"vertices", e.stats.vertices},
                          {"pairs", e.stats.pairs},
                          {"selected", e.stats.selected},
                          {"feasible", e.stats.feasible},
                          {"final", e.stats.final_poses}}},
                        {"ms",
                         {{"fusion", e.ms_fusion},
                          {"mesh", e.stats.ms_mesh},
                          {"contacts", e.stats.ms_contacts},
                          {"scoring", e.stats.ms_scoring},
                          {"selection", e.stats.ms_selection},
                          {"nms", e.stats.ms_nms},
                          {"plan", e.stats.ms_total}}}};
    if (e.top) {
      j["top"] = {{"T", transform_to_json(e.top->transform)}, {"width", e.top->width}};
    }
    scenes.push_back(j);
  }
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& s : r.levels) levels.push_back(level_to_json(s));
  return {{"views", r.views},
          {"config", r.config},
          {"levels", levels},
          {"overall", level_to_json(r.overall)},
          {"scenes", scenes}};
}

// One row per clutter level: AS, CFR and the no-pose count.
inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed;
  os << "objects  scenes  no-pose      AS    CFR(%)  plan(ms)\n";
  for (const auto& s : r.levels) {
    os << std::setw(7) << s.clutter << std::setw(8) << s.scenes << std::setw(9) << s.no_pose
       << std::setw(8) << std::setprecision(3) << s.mean_as << std::setw(10)
       << std::setprecision(1) << s.cfr << std::setw(10) << s.ms_plan << '\n';
  }
  return os.str();
}

// --- closed-loop replay -------------------------------------------------------------

struct ReplayStep {
  int frames = 0;
  std::optional<GraspPose> top;
  double antipodal_score = 0.0;
  bool collision_free = false;
  double drift = 0.0;  // end-point shift from the previous step with a pose
  PlanStats stats;
};

// Fuses the `views` rig frames one at a time and replans after each.
inline std::vector<ReplayStep> closed_loop_replay(const SceneSpec& scene, int views,
                                                  const PipelineConfig& cfg, int jobs = 1) {
  if (views < 1) throw InvalidArgument("replay needs at least one view");
  const GripperModel dense = oracle_gripper(cfg.gripper, cfg.oracle());
  TsdfVolume vol(cfg.volume);
  std::vector<ReplayStep> steps;
  std::optional<Vec3> last_end;
  fuse_views(vol, scene, cfg.rig, views, jobs, [&](int frames) {
    const SceneEval ev = evaluate_volume(scene, vol, cfg, dense, jobs);
    ReplayStep st;
    st.frames = frames;
    st.top = ev.top;
    st.antipodal_score = ev.antipodal_score;
    st.collision_free = ev.collision_free;
    st.stats = ev.stats;
    if (st.top) {
      if (last_end) st.drift = (st.top->end_point() - *last_end).norm();
      last_end = st.top->end_point();
    }
    steps.push_back(st);
  });
  return steps;
}

inline nlohmann::json replay_to_json(const std::vector<ReplayStep>& steps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : steps) {
    nlohmann::json j = {{"frames", s.frames},
                        {"has_pose", s.top.has_value()},
                        {"as", s.antipodal_score},
                        {"collision_free", s.collision_free},
                        {"drift", s.drift},
                        {"ms_plan", s.stats.ms_total}};
    if (s.top) j["top"] = {{"T", transform_to_json(s.top->transform)}, {"width", s.top->width}};
    arr.push_back(j);
  }
  return arr;
}

// --- volumetric vs analytic collision agreement ---------------------------------------

struct AgreementReport {
  int poses = 0;
  int agree = 0;
  int both_free = 0;
  int both_colliding = 0;
  int optimistic = 0;               // volumetric free, oracle colliding
  int optimistic_unobserved = 0;    // ...with an oracle hit in unobserved space
  int pessimistic = 0;              // volumetric colliding, oracle free
  int pessimistic_unobserved = 0;   // ...blocked only at cells touching unobserved voxels

  double agreement() const { return poses ? double(agree) / poses : 1.0; }
  int unexplained() const { return pessimistic - pessimistic_unobserved; }
};

namespace detail {

inline bool touches_unobserved(const TsdfVolume& vol, const Vec3& p) {
  const auto cell = locate_cell(vol, p);
  if (!cell) return true;
  bool all = true;
  blend(vol, *cell, &all);
  return !all;
}

}  // namespace detail

// Random gripper pose near a random object of `scene`: end-point uniform in
// the object's bounding sphere grown by 3 cm, uniform rotation, uniform width.
inline GraspPose random_pose_near(const SceneSpec& scene, const GripperModel& gripper,
                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, scene.shapes.size() - 1);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit;
  const PrimitiveShape& s = scene.shapes[pick(rng)];
  const double reach = s.bounding_radius() + 0.03;
  Vec3 offset;
  do {
    offset = Vec3(2 * unit(rng) - 1, 2 * unit(rng) - 1, 2 * unit(rng) - 1);
  } while (offset.squaredNorm() > 1.0);
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  GraspPose pose;
  pose.transform.rotation = q.toRotationMatrix();
  pose.transform.translation = s.pose.translation + reach * offset;
  pose.width = 0.004 + (gripper.max_width - 0.004) * unit(rng);
  return pose;
}

inline void tally_agreement(const SceneSpec& scene, const TsdfVolume& vol,
                            const GripperModel& gripper, const GripperModel& dense,
                            const GraspPose& pose, double margin, double clearance,
                            AgreementReport& rep) {
  const bool vol_free = check_collision(vol, gripper, pose, margin, clearance);
  const bool oracle_free = oracle_collision_free(scene, dense, pose, clearance);
  ++rep.poses;
  if (vol_free == oracle_free) {
    ++rep.agree;
    ++(vol_free ? rep.both_free : rep.both_colliding);
    return;
  }
  if (vol_free) {
    ++rep.optimistic;
    for (const Vec3& q : dense.vertices_at(pose.width, clearance)) {
      const Vec3 w = pose.transform.apply(q);
      if (scene_sdf(scene, w) <= 0.0 && detail::touches_unobserved(vol, w)) {
        ++rep.optimistic_unobserved;
        break;
      }
    }
    return;
  }
  ++rep.pessimistic;
  bool only_unobserved = true;
  for (const Vec3& q : gripper.vertices_at(pose.width, clearance)) {
    const Vec3 w = pose.transform.apply(q);
    const auto v = try_sample_trilinear(vol, w);
    if (v && *v <= margin && !detail::touches_unobserved(vol, w)) {
      only_unobserved = false;
      break;
    }
  }
  if (only_unobserved) ++rep.pessimistic_unobserved;
}

inline nlohmann::json agreement_to_json(const AgreementReport& r) {
  return {{"poses", r.poses},
          {"agree", r.agree},
          {"agreement", r.agreement()},
          {"both_free", r.both_free},
          {"both_colliding", r.both_colliding},
          {"volumetric_free_oracle_colliding", r.optimistic},
          {"volumetric_free_oracle_colliding_unobserved", r.optimistic_unobserved},
          {"volumetric_colliding_oracle_free", r.pessimistic},
          {"volumetric_colliding_oracle_free_unobserved", r.pessimistic_unobserved}};
}

}  // namespace cpgrasp
