#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cpgrasp/errors.hpp"
#include "cpgrasp/geom.hpp"
#include "cpgrasp/isosurface.hpp"
#include "cpgrasp/parallel.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

// Two fingertip contacts. g points from p to p_prime; both normals are
// outward.
struct ContactPair {
  Vec3 p = Vec3::Zero();
  Vec3 p_prime = Vec3::Zero();
  Vec3 g = Vec3::UnitX();
  Vec3 n_p = Vec3::UnitX();
  Vec3 n_pprime = Vec3::UnitX();
  double width = 0.0;
  double score = 0.0;
  double sdf_p = 0.0;
  double sdf_pprime = 0.0;
};

struct AntipodalParams {
  double alpha1 = deg_to_rad(18.0);
  double alpha2 = deg_to_rad(18.0);
  double max_width = 0.08;
  double min_width = 0.004;

  double threshold() const { return std::cos(alpha1) * std::cos(alpha2); }

  void validate() const {
    const auto ok_angle = [](double a) { return a > 0.0 && a < kPi / 2; };
    if (!ok_angle(alpha1) || !ok_angle(alpha2)) {
      throw InvalidArgument("antipodal angles must lie in (0, pi/2)");
    }
    if (!(min_width >= 0.0 && min_width < max_width)) {
      throw InvalidArgument("need 0 <= min_width < max_width");
    }
  }
};

// Product of the two contact-normal cosines against the closing direction,
// each clamped to [0, 1]. 1 means perfectly antipodal.
inline double antipodal_score(const Vec3& n_p, const Vec3& n_pprime, const Vec3& g) {
  for (const Vec3* v : {&n_p, &n_pprime, &g}) {
    if (std::abs(v->norm() - 1.0) > 1e-6) throw NonUnitInput("input not unit length");
  }
  return std::clamp(-g.dot(n_p), 0.0, 1.0) * std::clamp(g.dot(n_pprime), 0.0, 1.0);
}

inline bool is_antipodal(double score, const AntipodalParams& params) {
  return score >= params.threshold();
}

inline bool is_antipodal(const ContactPair& pair, const AntipodalParams& params) {
  return is_antipodal(pair.score, params);
}

struct ContactSamplingOptions {
  double launch_offset_voxels = 1.5;
  double free_space_voxels = 0.5;
  double surface_tolerance_voxels = 0.25;
};

// Attempts to match the opposite contact for one isosurface vertex by
// marching into the object along -normal. Returns nothing when no exit
// surface is found within max_width, the width is out of range, or the
// segment passes through observed free space (it left one object and entered
// another).
inline std::optional<ContactPair> match_contact(const TsdfVolume& vol, const Vec3& p,
                                                const Vec3& normal,
                                                const AntipodalParams& params,
                                                const ContactSamplingOptions& opts = {}) {
  const double vs = vol.voxel_size();
  const Vec3 dir = -normal;
  const Vec3 start = p + opts.launch_offset_voxels * vs * dir;
  if (!vol.in_sample_region(start)) return std::nullopt;
  const auto hit = raycast_zero_crossing(vol, start, dir, params.max_width,
                                         CrossingSign::NegToPos);
  if (!hit) return std::nullopt;
  ContactPair pair;
  pair.p = p;
  pair.p_prime = hit->point;
  const Vec3 d = pair.p_prime - pair.p;
  pair.width = d.norm();
  if (!(pair.width >= params.min_width && pair.width <= params.max_width)) return std::nullopt;
  if (!(pair.width > 1e-9)) return std::nullopt;
  pair.g = d / pair.width;
  for (double f : {0.25, 0.5, 0.75}) {
    const auto v = sample_observed(vol, p + f * d);
    if (v && *v > opts.free_space_voxels * vs) return std::nullopt;
  }
  const auto sp = try_sample_trilinear(vol, pair.p);
  const auto spp = try_sample_trilinear(vol, pair.p_prime);
  if (!sp || !spp) return std::nullopt;
  pair.sdf_p = *sp;
  pair.sdf_pprime = *spp;
  const double tol = opts.surface_tolerance_voxels * vs;
  if (std::abs(pair.sdf_p) > tol || std::abs(pair.sdf_pprime) > tol) return std::nullopt;
  const Vec3 gp = gradient_clamped(vol, pair.p_prime);
  if (!(gp.norm() > 1e-12)) return std::nullopt;
  pair.n_p = normal.normalized();
  pair.n_pprime = gp.normalized();
  pair.score = antipodal_score(pair.n_p, pair.n_pprime, pair.g);
  return pair;
}

// One candidate per mesh vertex that finds a matching exit contact, in mesh
// vertex order.
inline std::vector<ContactPair> sample_contact_pairs(const TsdfVolume& vol,
                                                     const SurfaceMesh& mesh,
                                                     const AntipodalParams& params,
                                                     int jobs = 1,
                                                     const ContactSamplingOptions& opts = {}) {
  params.validate();
  std::vector<std::optional<ContactPair>> slots(mesh.vertices.size());
  parallel_for(slots.size(), jobs, [&](std::size_t n) {
    slots[n] = match_contact(vol, mesh.vertices[n], mesh.normals[n], params, opts);
  });
  std::vector<ContactPair> out;
  for (auto& s : slots) {
    if (s) out.push_back(*s);
  }
  return out;
}

inline nlohmann::json pair_to_json(const ContactPair& c) {
  return {{"p", vec_to_json(c.p)},          {"pp", vec_to_json(c.p_prime)},
          {"g", vec_to_json(c.g)},          {"np", vec_to_json(c.n_p)},
          {"npp", vec_to_json(c.n_pprime)}, {"width", c.width},
          {"score", c.score}};
}

inline ContactPair pair_from_json(const nlohmann::json& j) {
  ContactPair c;
  c.p = vec_from_json(j.at("p"));
  c.p_prime = vec_from_json(j.at("pp"));
  c.g = vec_from_json(j.at("g"));
  c.n_p = vec_from_json(j.at("np"));
  c.n_pprime = vec_from_json(j.at("npp"));
  c.width = j.at("width").get<double>();
  c.score = j.at("score").get<double>();
  return c;
}

// JSON-lines, one pair per line.
inline std::string pairs_to_jsonl(const std::vector<ContactPair>& pairs) {
  std::string out;
  for (const auto& c : pairs) {
    out += pair_to_json(c).dump();
    out += '\n';
  }
  return out;
}

}  // namespace cpgrasp
