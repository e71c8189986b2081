#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cpgrasp/contact.hpp"
#include "cpgrasp/errors.hpp"
#include "cpgrasp/harness.hpp"
#include "cpgrasp/io.hpp"
#include "cpgrasp/oracle.hpp"
#include "cpgrasp/planner.hpp"
#include "cpgrasp/scene.hpp"

namespace cpgrasp {

enum class NegativePattern { Ungraspable, AllColliding, Rematch };

inline std::string to_string(NegativePattern p) {
  switch (p) {
    case NegativePattern::Ungraspable: return "ungraspable";
    case NegativePattern::AllColliding: return "all_colliding";
    case NegativePattern::Rematch: return "rematch";
  }
  return "?";
}

inline NegativePattern negative_pattern_from_string(const std::string& s) {
  if (s == "ungraspable") return NegativePattern::Ungraspable;
  if (s == "all_colliding") return NegativePattern::AllColliding;
  if (s == "rematch") return NegativePattern::Rematch;
  throw InvalidArgument("unknown negative pattern: " + s);
}

// A contact pair with its training label. Negatives always carry the pattern
// that produced them.
struct LabeledPair {
  ContactPair pair;
  std::optional<NegativePattern> negative;
  int scene_id = 0;
  int shape_id = 0;

  bool positive() const { return !negative.has_value(); }
};

struct LabelParams {
  AntipodalParams contact;
  int n_approach = 8;
  std::optional<double> max_approach_elevation = deg_to_rad(100.0);
  double finger_clearance = 0.3 / 64;
  int n_surface_samples = 256;
  double negative_ratio = 3.0;

  static LabelParams from(const PipelineConfig& cfg) {
    LabelParams p;
    p.contact = cfg.contact;
    p.n_approach = cfg.planner.n_approach;
    p.max_approach_elevation = cfg.planner.max_approach_elevation;
    p.finger_clearance = cfg.oracle().finger_clearance;
    return p;
  }
};

namespace detail {

// Surface point near `x` found by an exact ray hit along the field gradient.
inline std::optional<Vec3> snap_to_surface(const PrimitiveShape& s, const Vec3& x) {
  const Vec3 n = s.normal(x);
  const Vec3 origin = x + 0.01 * n;
  const auto iv = s.ray_interval(origin, -n);
  if (!iv || iv->first < 0.0) return std::nullopt;
  return origin - iv->first * n;
}

}  // namespace detail

// Antipodal analysis of one shape at the identity pose: surface samples
// drawn uniformly by area (rejection within a thin shell of the SDF), opposite
// contacts by exact ray intersection along -normal, labels from the antipodal
// threshold plus an analytic collision check of the approach fan against the
// shape alone.
inline std::vector<LabeledPair> grasp_analysis_shape(const PrimitiveShape& shape_in,
                                                     const GripperModel& dense,
                                                     const LabelParams& params,
                                                     std::uint64_t seed) {
  shape_in.validate();
  params.contact.validate();
  PrimitiveShape shape = shape_in;
  shape.pose = RigidTransform::identity();
  SceneSpec alone;
  alone.shapes.push_back(shape);

  const double r = shape.bounding_radius();
  constexpr double kShell = 5e-4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<LabeledPair> out;
  int accepted = 0;
  const long max_draws = 2000L * std::max(1, params.n_surface_samples) + 100000L;
  for (long draw = 0; draw < max_draws && accepted < params.n_surface_samples; ++draw) {
    const Vec3 x(r * unit(rng), r * unit(rng), r * unit(rng));
    if (std::abs(shape.local_sdf(x)) >= kShell) continue;
    ++accepted;
    const auto p = detail::snap_to_surface(shape, x);
    if (!p) continue;
    const Vec3 n_p = shape.normal(*p);
    const Vec3 origin = *p + 1e-4 * n_p;
    const auto iv = shape.ray_interval(origin, -n_p);
    if (!iv) continue;
    ContactPair c;
    c.p = *p;
    c.p_prime = origin - iv->second * n_p;
    c.width = (c.p_prime - c.p).norm();
    if (c.width < params.contact.min_width || c.width > params.contact.max_width) continue;
    c.g = (c.p_prime - c.p) / c.width;
    c.n_p = n_p;
    c.n_pprime = shape.normal(c.p_prime);
    c.score = antipodal_score(c.n_p, c.n_pprime, c.g);
    LabeledPair lp;
    lp.pair = c;
    const bool graspable =
        is_antipodal(c.score, params.contact) &&
        oracle_any_free_approach(alone, dense, c.p, c.p_prime, params.n_approach,
                                 params.finger_clearance);
    if (!graspable) lp.negative = NegativePattern::Ungraspable;
    out.push_back(lp);
  }
  return out;
}

inline ContactPair transform_pair(const ContactPair& c, const RigidTransform& t) {
  ContactPair o = c;
  o.p = t.apply(c.p);
  o.p_prime = t.apply(c.p_prime);
  o.g = t.rotation * c.g;
  o.n_p = t.rotation * c.n_p;
  o.n_pprime = t.rotation * c.n_pprime;
  return o;
}

// Scene-level positive criterion, checkable from a serialized pair plus the
// scene alone.
inline bool verify_positive(const SceneSpec& scene, const ContactPair& c,
                            const GripperModel& dense, const LabelParams& params) {
  const double s = antipodal_score(c.n_p.normalized(), c.n_pprime.normalized(),
                                   (c.p_prime - c.p).normalized());
  if (!is_antipodal(s, params.contact)) return false;
  return oracle_any_free_approach(scene, dense, c.p, c.p_prime, params.n_approach,
                                  params.finger_clearance, params.max_approach_elevation);
}

// Moves per-shape labels (keyed by shape index) into the scene, relabels
// against the full scene, adds rematched negatives, and caps negatives at
// `negative_ratio` per positive with a stratified seeded subsample.
inline std::vector<LabeledPair> build_scene_labels(
    const SceneSpec& scene, int scene_id,
    const std::map<std::size_t, std::vector<LabeledPair>>& per_shape, const GripperModel& dense,
    const LabelParams& params, std::uint64_t shuffle_seed) {
  std::vector<LabeledPair> positives;
  std::array<std::vector<LabeledPair>, 3> negatives;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const auto it = per_shape.find(i);
    if (it == per_shape.end()) {
      throw MissingShapeLabels("no labels for shape " + std::to_string(i));
    }
    for (const LabeledPair& local : it->second) {
      LabeledPair lp = local;
      lp.pair = transform_pair(local.pair, scene.shapes[i].pose);
      lp.scene_id = scene_id;
      lp.shape_id = static_cast<int>(i);
      if (!lp.positive()) {
        negatives[0].push_back(lp);
      } else if (oracle_any_free_approach(scene, dense, lp.pair.p, lp.pair.p_prime,
                                          params.n_approach, params.finger_clearance,
                                          params.max_approach_elevation)) {
        positives.push_back(lp);
      } else {
        lp.negative = NegativePattern::AllColliding;
        negatives[1].push_back(lp);
      }
    }
  }

  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> perm(positives.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const std::size_t j = perm[i];
    if (j == i) continue;
    const LabeledPair& a = positives[i];
    const LabeledPair& b = positives[j];
    ContactPair c;
    c.p = a.pair.p;
    c.p_prime = b.pair.p_prime;
    c.width = (c.p_prime - c.p).norm();
    if (c.width < params.contact.min_width || c.width > params.contact.max_width) continue;
    c.g = (c.p_prime - c.p) / c.width;
    c.n_p = a.pair.n_p;
    c.n_pprime = b.pair.n_pprime;
    c.score = antipodal_score(c.n_p, c.n_pprime, c.g);
    // A rematch that happens to be antipodal is not a reliable negative.
    if (is_antipodal(c.score, params.contact)) continue;
    const bool duplicate = std::any_of(positives.begin(), positives.end(), [&](const auto& q) {
      return q.pair.p == c.p && q.pair.p_prime == c.p_prime;
    });
    if (duplicate) continue;
    LabeledPair lp;
    lp.pair = c;
    lp.negative = NegativePattern::Rematch;
    lp.scene_id = scene_id;
    lp.shape_id = a.shape_id;
    negatives[2].push_back(lp);
  }

  std::size_t total_neg = 0;
  for (const auto& v : negatives) total_neg += v.size();
  const auto cap = static_cast<std::size_t>(params.negative_ratio * double(positives.size()));
  std::array<std::vector<std::size_t>, 3> keep;
  if (total_neg <= cap) {
    for (int k = 0; k < 3; ++k) {
      keep[k].resize(negatives[k].size());
      std::iota(keep[k].begin(), keep[k].end(), std::size_t{0});
    }
  } else {
    std::array<std::vector<std::size_t>, 3> order;
    for (int k = 0; k < 3; ++k) {
      order[k].resize(negatives[k].size());
      std::iota(order[k].begin(), order[k].end(), std::size_t{0});
      std::shuffle(order[k].begin(), order[k].end(), rng);
    }
    std::size_t taken = 0;
    for (std::size_t round = 0; taken < cap; ++round) {
      for (int k = 0; k < 3 && taken < cap; ++k) {
        if (round < order[k].size()) {
          keep[k].push_back(order[k][round]);
          ++taken;
        }
      }
    }
    for (auto& v : keep) std::sort(v.begin(), v.end());
  }

  std::vector<LabeledPair> out = std::move(positives);
  for (int k = 0; k < 3; ++k) {
    for (std::size_t idx : keep[k]) out.push_back(negatives[k][idx]);
  }
  return out;
}

// Shape analysis for every shape of a scene, seeded per shape index.
inline std::map<std::size_t, std::vector<LabeledPair>> analyze_scene_shapes(
    const SceneSpec& scene, const GripperModel& dense, const LabelParams& params,
    std::uint64_t seed) {
  std::map<std::size_t, std::vector<LabeledPair>> out;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    out[i] = grasp_analysis_shape(scene.shapes[i], dense, params, seed * 1000003ull + i);
  }
  return out;
}

inline nlohmann::json labeled_to_json(const LabeledPair& lp) {
  nlohmann::json j = pair_to_json(lp.pair);
  j["label"] = lp.positive() ? "positive" : "negative";
  j["pattern"] = lp.negative ? nlohmann::json(to_string(*lp.negative)) : nlohmann::json(nullptr);
  j["scene_id"] = lp.scene_id;
  j["shape_id"] = lp.shape_id;
  return j;
}

inline LabeledPair labeled_from_json(const nlohmann::json& j) {
  LabeledPair lp;
  lp.pair = pair_from_json(j);
  const std::string label = j.at("label").get<std::string>();
  if (label == "negative") {
    lp.negative = negative_pattern_from_string(j.at("pattern").get<std::string>());
  } else if (label != "positive") {
    throw InvalidArgument("unknown label: " + label);
  }
  lp.scene_id = j.at("scene_id").get<int>();
  lp.shape_id = j.at("shape_id").get<int>();
  return lp;
}

struct DatasetRecord {
  std::filesystem::path volume_path;
  std::filesystem::path pairs_path;
  int n_fused_frames = 0;
  std::vector<LabeledPair> pairs;
};

inline std::filesystem::path scene_dir(const std::filesystem::path& out_dir, int scene_id) {
  return out_dir / ("scene_" + std::to_string(scene_id));
}

// Fuses the rig's frames, snapshots the volume at each view count, and keeps
// only the pairs whose two contacts are visible in that snapshot (sampled
// |sdf| <= visibility * voxel size).
inline std::vector<DatasetRecord> emit_dataset(const SceneSpec& scene, int scene_id,
                                               const std::vector<LabeledPair>& labels,
                                               const std::vector<int>& view_counts,
                                               const std::filesystem::path& out_dir,
                                               const PipelineConfig& cfg,
                                               const nlohmann::json& manifest_extra = {},
                                               double visibility = 0.5) {
  if (!std::is_sorted(view_counts.begin(), view_counts.end()) ||
      (!view_counts.empty() && view_counts.front() < 0)) {
    throw InvalidArgument("view_counts must be ascending and non-negative");
  }
  const auto dir = scene_dir(out_dir, scene_id);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());

  std::vector<DatasetRecord> records;
  TsdfVolume vol(cfg.volume);
  const double tol = visibility * vol.voxel_size();
  const auto snapshot = [&](int frames) {
    DatasetRecord rec;
    rec.n_fused_frames = frames;
    const std::string tag = std::to_string(frames) + "frames";
    rec.volume_path = dir / ("volume_" + tag + ".tsdf1");
    rec.pairs_path = dir / ("pairs_" + tag + ".jsonl");
    for (const auto& lp : labels) {
      const auto a = try_sample_trilinear(vol, lp.pair.p);
      const auto b = try_sample_trilinear(vol, lp.pair.p_prime);
      if (a && b && std::abs(*a) <= tol && std::abs(*b) <= tol) rec.pairs.push_back(lp);
    }
    save_tsdf(rec.volume_path, vol);
    std::string lines;
    for (const auto& lp : rec.pairs) lines += labeled_to_json(lp).dump() + '\n';
    write_text_file(rec.pairs_path, lines);
    records.push_back(std::move(rec));
  };

  std::size_t next = 0;
  while (next < view_counts.size() && view_counts[next] == 0) snapshot(view_counts[next++]);
  const int max_views = view_counts.empty() ? 0 : view_counts.back();
  fuse_views(vol, scene, cfg.rig, max_views, 1, [&](int frames) {
    while (next < view_counts.size() && view_counts[next] == frames) {
      snapshot(view_counts[next++]);
    }
  });

  write_text_file(dir / "scene.json", scene_to_json(scene).dump(2) + '\n');
  nlohmann::json manifest;
  manifest["scene_id"] = scene_id;
  manifest["scene_seed"] = scene.seed;
  manifest["config"] = config_to_json(cfg);
  manifest["visibility_voxels"] = visibility;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    std::array<int, 3> neg{};
    int pos = 0;
    for (const auto& lp : r.pairs) {
      if (lp.positive()) {
        ++pos;
      } else {
        ++neg[static_cast<int>(*lp.negative)];
      }
    }
    recs.push_back({{"frames", r.n_fused_frames},
                    {"volume", r.volume_path.filename().string()},
                    {"pairs", r.pairs_path.filename().string()},
                    {"positive", pos},
                    {"ungraspable", neg[0]},
                    {"all_colliding", neg[1]},
                    {"rematch", neg[2]}});
  }
  manifest["records"] = recs;
  for (const auto& [k, v] : manifest_extra.items()) manifest[k] = v;
  write_text_file(dir / "manifest.json", manifest.dump(2) + '\n');
  return records;
}

inline std::vector<LabeledPair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::vector<LabeledPair> out;
  std::istringstream is(read_text_file(path));
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(labeled_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace cpgrasp
