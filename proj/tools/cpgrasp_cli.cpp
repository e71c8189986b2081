// Command-line front end: scene generation, rendering, fusion, planning,
// evaluation, dataset emission, replay and mesh export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cpgrasp/cpgrasp.hpp"

using namespace cpgrasp;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config_path;
  int jobs = 1;
  std::string out = "out";
};

PipelineConfig load_config(const Globals& g) {
  if (g.config_path.empty()) return PipelineConfig{};
  return config_from_json(nlohmann::json::parse(read_text_file(g.config_path)));
}

SceneSpec load_scene(const std::string& path) {
  return scene_from_json(nlohmann::json::parse(read_text_file(path)));
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, j.dump(2) + '\n');
  std::cerr << "wrote " << path.string() << '\n';
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop antipodal grasp planning on fused TSDF volumes"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--config", g.config_path, "Pipeline configuration JSON")->check(CLI::ExistingFile);
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  // gen-scenes
  auto* gen = app.add_subcommand("gen-scenes", "Generate random primitive scenes");
  int gen_count = 1, gen_objects = 5;
  gen->add_option("--count", gen_count, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--objects", gen_objects, "Objects per scene")->check(CLI::Range(1, 30));
  gen->callback([&] {
    const auto cfg = load_config(g);
    const auto dir = out_dir(g);
    for (int i = 0; i < gen_count; ++i) {
      const auto res = generate_scene(scene_seed(g.seed, gen_objects, i), gen_objects, cfg.catalog);
      if (res.skipped > 0) std::cerr << "scene " << i << ": skipped " << res.skipped << " objects\n";
      write_json(dir / ("scene_" + std::to_string(i) + ".json"), scene_to_json(res.scene));
    }
  });

  // render
  auto* render = app.add_subcommand("render", "Render depth images of a scene");
  std::string render_scene;
  int render_views = 20;
  render->add_option("--scene", render_scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--views", render_views, "Number of viewpoints")->check(CLI::PositiveNumber);
  render->callback([&] {
    const auto cfg = load_config(g);
    const auto scene = load_scene(render_scene);
    const auto dir = out_dir(g);
    nlohmann::json cams = nlohmann::json::array();
    int k = 0;
    for (const auto& pose : cfg.rig.viewpoints(scene, render_views)) {
      const auto img = render_depth(scene, cfg.rig.intrinsics, pose, cfg.rig.render, g.jobs);
      const std::string name = "depth_" + std::to_string(k++) + ".pfm";
      save_pfm(dir / name, img);
      cams.push_back({{"depth", name}, {"T_world_camera", transform_to_json(pose)}});
    }
    write_json(dir / "cameras.json",
               {{"intrinsics", intrinsics_to_json(cfg.rig.intrinsics)}, {"frames", cams}});
  });

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Render and fuse a scene into a TSDF volume");
  std::string fuse_scene;
  int fuse_views_n = 20;
  fuse->add_option("--scene", fuse_scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  fuse->add_option("--views", fuse_views_n, "Number of fused frames")->check(CLI::NonNegativeNumber);
  fuse->callback([&] {
    const auto cfg = load_config(g);
    const auto vol = fuse_views(load_scene(fuse_scene), cfg.volume, cfg.rig, fuse_views_n, g.jobs);
    const auto path = out_dir(g) / "volume.tsdf1";
    save_tsdf(path, vol);
    std::cerr << "wrote " << path.string() << " (" << vol.observed_count() << " observed voxels)\n";
  });

  // plan
  auto* planc = app.add_subcommand("plan", "Plan grasps on a volume or a scene");
  std::string plan_volume, plan_scene, plan_gripper, plan_params;
  int plan_views = 20;
  auto* vol_opt = planc->add_option("--volume", plan_volume, "TSDF1 volume")->check(CLI::ExistingFile);
  auto* scene_opt = planc->add_option("--scene", plan_scene, "Scene JSON (rendered and fused first)")
                        ->check(CLI::ExistingFile);
  vol_opt->excludes(scene_opt);
  planc->add_option("--views", plan_views, "Frames to fuse when planning from a scene")
      ->check(CLI::PositiveNumber);
  planc->add_option("--gripper", plan_gripper, "Gripper JSON")->check(CLI::ExistingFile);
  planc->add_option("--params", plan_params, "Planner parameter JSON")->check(CLI::ExistingFile);
  planc->callback([&] {
    auto cfg = load_config(g);
    if (!plan_gripper.empty()) {
      cfg.gripper = gripper_from_json(nlohmann::json::parse(read_text_file(plan_gripper)));
    }
    if (!plan_params.empty()) {
      cfg.planner = planner_params_from_json(nlohmann::json::parse(read_text_file(plan_params)));
    }
    TsdfVolume vol = [&] {
      if (!plan_volume.empty()) return load_tsdf(plan_volume);
      if (!plan_scene.empty()) {
        return fuse_views(load_scene(plan_scene), cfg.volume, cfg.rig, plan_views, g.jobs);
      }
      throw InvalidArgument("plan needs --volume or --scene");
    }();
    const auto res = plan(vol, cfg.gripper, AnalyticScorer{}, cfg.planner, cfg.contact, g.jobs);
    write_json(out_dir(g) / "poses.json", poses_to_json(res.poses));
    std::cerr << res.stats.vertices << " vertices, " << res.stats.pairs << " pairs, "
              << res.stats.feasible << " feasible, " << res.poses.size() << " poses in "
              << res.stats.ms_total << " ms\n";
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate the planner on generated scenes");
  std::vector<int> eval_levels = {5, 10, 15, 20};
  int eval_scenes = 50, eval_views = 20;
  eval->add_option("--levels", eval_levels, "Objects per scene for each clutter level")
      ->delimiter(',');
  eval->add_option("--scenes", eval_scenes, "Scenes per clutter level")->check(CLI::PositiveNumber);
  eval->add_option("--views", eval_views, "Fused frames per scene")->check(CLI::PositiveNumber);
  eval->callback([&] {
    const auto cfg = load_config(g);
    const auto report = eval_batch(g.seed, eval_levels, eval_scenes, eval_views, cfg, g.jobs);
    const auto dir = out_dir(g);
    write_json(dir / "report.json", report_to_json(report));
    const std::string table = report_table(report);
    write_text_file(dir / "report.txt", table);
    std::cout << table;
  });

  // dataset
  auto* data = app.add_subcommand("dataset", "Emit a labelled contact-pair dataset");
  int data_scenes = 10, data_objects = 5, data_samples = 256;
  std::vector<int> data_counts = {5, 10, 14, 19};
  data->add_option("--scenes", data_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  data->add_option("--objects", data_objects, "Objects per scene")->check(CLI::Range(1, 30));
  data->add_option("--view-counts", data_counts, "Ascending frame counts to snapshot")
      ->delimiter(',');
  data->add_option("--samples", data_samples, "Surface samples per shape")
      ->check(CLI::PositiveNumber);
  data->callback([&] {
    const auto cfg = load_config(g);
    auto params = LabelParams::from(cfg);
    params.n_surface_samples = data_samples;
    const auto dense = oracle_gripper(cfg.gripper, cfg.oracle());
    const auto dir = out_dir(g);
    // Scenes are independent; each is generated sequentially.
    parallel_for(std::size_t(data_scenes), g.jobs, [&](std::size_t i) {
      const auto scene =
          generate_scene(scene_seed(g.seed, data_objects, int(i)), data_objects, cfg.catalog).scene;
      const auto labels = build_scene_labels(
          scene, int(i), analyze_scene_shapes(scene, dense, params, scene.seed), dense, params,
          scene.seed);
      emit_dataset(scene, int(i), labels, data_counts, dir, cfg,
                   {{"base_seed", g.seed}, {"shuffle_seed", scene.seed},
                    {"surface_samples", data_samples}});
    });
    std::cerr << "wrote " << data_scenes << " scenes under " << dir.string() << '\n';
  });

  // replay
  auto* replay = app.add_subcommand("replay", "Fuse frames one at a time and replan after each");
  std::string replay_scene;
  int replay_views = 10;
  replay->add_option("--scene", replay_scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  replay->add_option("--views", replay_views, "Number of frames")->check(CLI::PositiveNumber);
  replay->callback([&] {
    const auto cfg = load_config(g);
    const auto steps = closed_loop_replay(load_scene(replay_scene), replay_views, cfg, g.jobs);
    write_json(out_dir(g) / "replay.json", replay_to_json(steps));
  });

  // export-mesh
  auto* mesh = app.add_subcommand("export-mesh", "Extract the zero isosurface of a volume");
  std::string mesh_volume, mesh_format = "ply";
  mesh->add_option("--volume", mesh_volume, "TSDF1 volume")->required()->check(CLI::ExistingFile);
  mesh->add_option("--format", mesh_format, "ply or obj")->check(CLI::IsMember({"ply", "obj"}));
  mesh->callback([&] {
    const auto m = marching_cubes(load_tsdf(mesh_volume), g.jobs);
    const auto path = out_dir(g) / ("mesh." + mesh_format);
    if (mesh_format == "obj") {
      save_obj(path, m);
    } else {
      save_ply(path, m);
    }
    std::cerr << "wrote " << path.string() << " (" << m.size() << " vertices, "
              << m.triangles.size() << " triangles)\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
