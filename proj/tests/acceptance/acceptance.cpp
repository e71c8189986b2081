// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes the supporting reports to --out.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "support/fixtures.hpp"

using namespace cpgrasp;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kFidelityFraction = 0.95;
constexpr double kFusionSecondsPerScene = 5.0;
constexpr double kMeanRadialVoxels = 0.5;
constexpr double kMaxRadialVoxels = 1.0;
constexpr double kMeanNormalDeg = 5.0;
constexpr double kPairedVertexFraction = 0.90;
constexpr double kPairOracleAs = 0.95;
constexpr double kAgreement = 0.95;
constexpr double kEvalAs = 0.90;
constexpr double kEvalCfr = 90.0;
constexpr double kNoPoseRate = 0.10;
constexpr double kAsSpread = 0.05;
constexpr double kDriftVoxels = 2.0;
constexpr double kPlanSecondsSerial = 1.0;
constexpr double kPlanSecondsParallel = 0.3;

constexpr std::uint64_t kBaseSeed = 20240;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

const PipelineConfig& config() {
  static const PipelineConfig c;
  return c;
}

const GripperModel& dense() {
  static const GripperModel g = oracle_gripper(config().gripper, config().oracle());
  return g;
}

Verdict fusion_fidelity(nlohmann::json& out) {
  double worst_fraction = 1.0, worst_seconds = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 10; ++i) {
    const auto scene = generate_scene(scene_seed(kBaseSeed, 5, i), 5).scene;
    const auto t0 = std::chrono::steady_clock::now();
    const auto vol = fuse_views(scene, config().volume, config().rig, 20, 1);
    const double secs = seconds_since(t0);
    const auto f = fixtures::fusion_fidelity(vol, scene, vol.voxel_size());
    worst_fraction = std::min(worst_fraction, f.fraction());
    worst_seconds = std::max(worst_seconds, secs);
    rows.push_back({{"seed", scene.seed}, {"fraction", f.fraction()}, {"considered", f.considered},
                    {"seconds", secs}});
  }
  out["fusion"] = rows;
  return {worst_fraction >= kFidelityFraction && worst_seconds <= kFusionSecondsPerScene,
          fmt("worst scene %.4f within 1 voxel (>= %.2f), slowest fusion %.2f s (<= %.1f s)",
              worst_fraction, kFidelityFraction, worst_seconds, kFusionSecondsPerScene)};
}

Verdict isosurface_accuracy(nlohmann::json& out) {
  const double r = 0.05;
  const auto scene = fixtures::single_sphere(r);
  const Vec3 c = scene.shapes[0].pose.translation;
  const auto vol = fixtures::fuse_all_around(scene, 20);
  const auto mesh = marching_cubes(vol);
  const double vs = vol.voxel_size();
  double sum = 0.0, worst = 0.0, angle = 0.0;
  for (std::size_t n = 0; n < mesh.size(); ++n) {
    const Vec3 d = mesh.vertices[n] - c;
    const double e = std::abs(d.norm() - r) / vs;
    sum += e;
    worst = std::max(worst, e);
    angle += rad_to_deg(std::acos(std::clamp(mesh.normals[n].dot(d.normalized()), -1.0, 1.0)));
  }
  const double n = std::max<std::size_t>(mesh.size(), 1);
  out["isosurface"] = {{"vertices", mesh.size()}, {"mean_radial_vox", sum / n},
                       {"max_radial_vox", worst}, {"mean_normal_deg", angle / n}};
  return {!mesh.empty() && sum / n <= kMeanRadialVoxels && worst <= kMaxRadialVoxels &&
              angle / n <= kMeanNormalDeg,
          fmt("mean radial %.3f vox (<= %.1f), max %.3f vox (<= %.1f)", sum / n,
              kMeanRadialVoxels, worst, kMaxRadialVoxels) +
              fmt(", mean normal %.2f deg (<= %.0f)", angle / n, kMeanNormalDeg)};
}

Verdict contact_matching(nlohmann::json& out) {
  const double r = 0.03;
  const auto scene = fixtures::single_sphere(r);
  const auto vol = fixtures::fuse_all_around(scene, 20);
  const auto mesh = marching_cubes(vol);
  const AntipodalParams params = config().contact;
  const auto pairs = sample_contact_pairs(vol, mesh, params);
  const double vs = vol.voxel_size();
  int good = 0, violations = 0;
  for (const auto& p : pairs) {
    const bool ok = std::abs(p.width - (p.p - p.p_prime).norm()) <= 1e-9 &&
                    (p.g - (p.p_prime - p.p) / p.width).norm() <= 1e-9 &&
                    std::abs(p.sdf_p) <= 0.25 * vs && std::abs(p.sdf_pprime) <= 0.25 * vs &&
                    p.score >= 0.0 && p.score <= 1.0 && p.width >= params.min_width &&
                    p.width <= params.max_width;
    if (!ok) ++violations;
    const double oracle = antipodal_score(scene_normal(scene, p.p).normalized(),
                                          scene_normal(scene, p.p_prime).normalized(), p.g);
    if (std::abs(p.width - 2 * r) <= vs && oracle >= kPairOracleAs) ++good;
  }
  const double frac = mesh.empty() ? 0.0 : double(good) / double(mesh.size());
  out["contact"] = {{"vertices", mesh.size()}, {"pairs", pairs.size()}, {"good", good},
                    {"violations", violations}};
  return {frac >= kPairedVertexFraction && violations == 0,
          fmt("%.4f of vertices give good pairs (>= %.2f), %.0f invariant violations", frac,
              kPairedVertexFraction, violations)};
}

Verdict collision_agreement(nlohmann::json& out) {
  AgreementReport rep;
  std::mt19937_64 rng(kBaseSeed);
  for (int i = 0; i < 10; ++i) {
    const auto scene = generate_scene(scene_seed(kBaseSeed + 7, 5, i), 5).scene;
    const auto vol = fuse_views(scene, config().volume, config().rig, 20);
    for (int t = 0; t < 100; ++t) {
      tally_agreement(scene, vol, config().gripper, dense(),
                      random_pose_near(scene, config().gripper, rng), config().planner.collision_margin,
                      config().oracle().finger_clearance, rep);
    }
  }
  out["agreement"] = agreement_to_json(rep);
  return {rep.poses == 1000 && rep.agreement() >= kAgreement && rep.unexplained() == 0,
          fmt("agreement %.4f over %.0f poses (>= %.2f); volumetric-free/oracle-colliding %.0f",
              rep.agreement(), rep.poses, kAgreement, rep.optimistic) +
              fmt(" (%.0f in unobserved space)", rep.optimistic_unobserved) +
              fmt(", volumetric-colliding/oracle-free %.0f of which %.0f unobserved", rep.pessimistic,
                  rep.pessimistic_unobserved)};
}

Verdict table_analog(nlohmann::json& out, int jobs) {
  const auto report = eval_batch(kBaseSeed, {5, 10, 15, 20}, 50, 20, config(), jobs);
  out["eval"] = report_to_json(report);
  std::cout << report_table(report);
  bool ok = true;
  double lo = 1.0, hi = 0.0;
  for (const auto& l : report.levels) {
    ok = ok && l.mean_as >= kEvalAs && l.cfr >= kEvalCfr && l.no_pose_rate() <= kNoPoseRate;
    lo = std::min(lo, l.mean_as);
    hi = std::max(hi, l.mean_as);
  }
  ok = ok && hi - lo <= kAsSpread;
  std::ostringstream detail;
  for (const auto& l : report.levels) {
    detail << l.clutter << " obj: AS " << fmt("%.3f", l.mean_as) << " CFR " << fmt("%.1f", l.cfr)
           << " no-pose " << l.no_pose << "; ";
  }
  detail << fmt("AS spread %.3f (<= %.2f)", hi - lo, kAsSpread);
  return {ok, detail.str()};
}

Verdict determinism(const fs::path& out_dir) {
  const auto scene = generate_scene(scene_seed(kBaseSeed + 11, 10, 0), 10).scene;
  const auto run_plan = [&] {
    const auto vol = fuse_views(scene, config().volume, config().rig, 20);
    return poses_to_json(plan(vol, config().gripper, AnalyticScorer{}, config().planner,
                              config().contact).poses).dump();
  };
  const bool plan_same = run_plan() == run_plan();

  const auto run_dataset = [&](const fs::path& dir) {
    const auto small = generate_scene(scene_seed(kBaseSeed + 11, 5, 1), 5).scene;
    const auto params = LabelParams::from(config());
    const auto labels = build_scene_labels(
        small, 0, analyze_scene_shapes(small, dense(), params, small.seed), dense(), params,
        small.seed);
    emit_dataset(small, 0, labels, {5, 10}, dir, config());
  };
  const fs::path a = out_dir / "determinism_a", b = out_dir / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_dataset(a);
  run_dataset(b);
  bool data_same = true;
  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto other = b / fs::relative(entry.path(), a);
    if (!fs::exists(other) || read_text_file(entry.path()) != read_text_file(other)) data_same = false;
  }
  return {plan_same && data_same && files > 0,
          std::string("plan output ") + (plan_same ? "identical" : "differs") + ", dataset " +
              std::to_string(files) + " files " + (data_same ? "identical" : "differ")};
}

Verdict closed_loop(nlohmann::json& out) {
  ShapeCatalog cat;
  cat.kind_weights = {1, 1, 0, 0, 0};  // spheres and boxes
  PipelineConfig cfg = config();
  cfg.catalog = cat;
  const double vs = cfg.volume.voxel_size();
  double worst = 0.0;
  int mismatches = 0, missing = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 10; ++i) {
    const auto scene = generate_scene(scene_seed(kBaseSeed + 13, 3, i), 3, cat).scene;
    const auto steps = closed_loop_replay(scene, 10, cfg);
    for (const auto& s : steps) {
      if (s.frames > 3) {
        worst = std::max(worst, s.drift);
        if (!s.top) ++missing;
      }
    }
    const auto one = evaluate_scene(scene, 10, cfg, dense());
    const auto& last = steps.back();
    const bool same = last.top.has_value() == one.has_pose &&
                      last.antipodal_score == one.antipodal_score &&
                      last.collision_free == one.collision_free &&
                      (!one.has_pose || transform_to_json(last.top->transform).dump() ==
                                            transform_to_json(one.top->transform).dump());
    if (!same) ++mismatches;
    rows.push_back({{"seed", scene.seed}, {"steps", replay_to_json(steps)}});
  }
  out["replay"] = rows;
  return {worst <= kDriftVoxels * vs && mismatches == 0 && missing == 0,
          fmt("max drift after step 3 %.2f vox (<= %.1f), %.0f final-step mismatches, %.0f empty "
              "steps after step 3",
              worst / vs, kDriftVoxels, mismatches, missing)};
}

Verdict latency(nlohmann::json& out) {
  const auto scene = generate_scene(scene_seed(kBaseSeed + 17, 10, 0), 10).scene;
  const auto vol = fuse_views(scene, config().volume, config().rig, 20);
  const auto time_plan = [&](int jobs) {
    double best = 1e9;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      plan(vol, config().gripper, AnalyticScorer{}, config().planner, config().contact, jobs);
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  const double serial = time_plan(1), parallel = time_plan(8);
  out["latency"] = {{"serial_s", serial}, {"jobs8_s", parallel},
                    {"hardware_threads", std::thread::hardware_concurrency()}};
  return {serial <= kPlanSecondsSerial && parallel <= kPlanSecondsParallel,
          fmt("serial %.3f s (<= %.1f), 8 workers %.3f s (<= %.1f)", serial, kPlanSecondsSerial,
              parallel, kPlanSecondsParallel) +
              " on " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads"};
}

Verdict dataset_integrity(const fs::path& out_dir, nlohmann::json& out) {
  const fs::path root = out_dir / "dataset";
  fs::remove_all(root);
  const auto params = LabelParams::from(config());
  int bad_positives = 0, positives = 0, records = 0, missing_counts = 0;
  std::array<int, 3> patterns{};
  for (int i = 0; i < 10; ++i) {
    const auto scene = generate_scene(scene_seed(kBaseSeed + 19, 5, i), 5).scene;
    const auto labels = build_scene_labels(
        scene, i, analyze_scene_shapes(scene, dense(), params, scene.seed), dense(), params,
        scene.seed);
    const auto recs = emit_dataset(scene, i, labels, {5, 10, 14, 19}, root, config());
    // Re-verify from what is on disk only.
    const auto dir = scene_dir(root, i);
    const auto scene_back =
        scene_from_json(nlohmann::json::parse(read_text_file(dir / "scene.json")));
    std::set<int> frames;
    for (const auto& rec : recs) {
      ++records;
      if (!fs::exists(rec.volume_path)) continue;
      frames.insert(rec.n_fused_frames);
      for (const auto& lp : read_pairs_jsonl(rec.pairs_path)) {
        if (lp.positive()) {
          ++positives;
          if (!verify_positive(scene_back, lp.pair, dense(), params)) ++bad_positives;
        } else {
          ++patterns[static_cast<int>(*lp.negative)];
        }
      }
    }
    if (frames != std::set<int>{5, 10, 14, 19}) ++missing_counts;
  }
  out["dataset"] = {{"records", records}, {"positives", positives},
                    {"ungraspable", patterns[0]}, {"all_colliding", patterns[1]},
                    {"rematch", patterns[2]}, {"bad_positives", bad_positives}};
  const bool ok = bad_positives == 0 && positives > 0 && patterns[0] > 0 && patterns[1] > 0 &&
                  patterns[2] > 0 && missing_counts == 0 && records == 40;
  return {ok, fmt("%.0f positives, %.0f fail re-verification; negatives ungraspable/colliding/"
                  "rematch = ",
                  positives, bad_positives) +
                  std::to_string(patterns[0]) + "/" + std::to_string(patterns[1]) + "/" +
                  std::to_string(patterns[2]) + "; " + std::to_string(records) +
                  " records at 5/10/14/19 frames"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out_dir = "acceptance_out";
  int jobs = 1;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      out_dir = argv[++i];
    } else if (arg == "--jobs" && i + 1 < argc) {
      jobs = std::stoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--out DIR] [--jobs N]\n";
      return 2;
    }
  }
  fs::create_directories(out_dir);

  nlohmann::json report;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"fusion fidelity", [&] { return fusion_fidelity(report); }},
      {"isosurface accuracy", [&] { return isosurface_accuracy(report); }},
      {"contact matching", [&] { return contact_matching(report); }},
      {"collision agreement", [&] { return collision_agreement(report); }},
      {"clutter evaluation", [&] { return table_analog(report, jobs); }},
      {"determinism", [&] { return determinism(out_dir); }},
      {"closed-loop stability", [&] { return closed_loop(report); }},
      {"plan latency", [&] { return latency(report); }},
      {"dataset integrity", [&] { return dataset_integrity(out_dir, report); }},
  };
  int failed = 0;
  for (std::size_t n = 0; n < criteria.size(); ++n) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[n].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << "criterion " << n + 1 << " " << (v.pass ? "PASS" : "FAIL") << " ["
              << criteria[n].first << "] " << v.detail << fmt(" (%.1f s)", seconds_since(t0))
              << std::endl;
    report["verdicts"].push_back(
        {{"criterion", n + 1}, {"name", criteria[n].first}, {"pass", v.pass}, {"detail", v.detail}});
  }
  write_text_file(out_dir / "acceptance.json", report.dump(2) + '\n');
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
