#pragma once

// Evaluation metrics: height-normalized joint position error (global and
// root-aligned), limb penetration rate, hand contact distance, and joint
// height traces.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/fields.hpp"
#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/pipeline.hpp"

namespace skinret {

struct MseResult {
  double mse = 0.0;
  double local_mse = 0.0;
  std::vector<double> per_frame;  // global, per frame
};

// Positions are [frame][joint]. Squared errors are averaged over frames and
// joints and divided by h². The local variant first translates each result
// frame so its root (joint `root`) coincides with the reference root.
inline MseResult position_mse(const std::vector<std::vector<Vec3d>>& result,
                              const std::vector<std::vector<Vec3d>>& reference, double height, int root = 0) {
  if (result.size() != reference.size()) {
    throw DimensionError("position_mse: frame counts differ (" + std::to_string(result.size()) + " vs " +
                         std::to_string(reference.size()) + ")");
  }
  if (result.empty()) throw UndefinedMean("position_mse: no frames");
  if (!(height > 0.0)) throw InvalidSkeleton("position_mse: height must be positive");
  const double h2 = height * height;
  MseResult r;
  double global = 0.0, local = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < result.size(); ++t) {
    if (result[t].size() != reference[t].size()) {
      throw DimensionError("position_mse: joint counts differ at frame " + std::to_string(t));
    }
    const auto ru = static_cast<std::size_t>(root);
    const Vec3d shift = reference[t][ru] - result[t][ru];
    double frame = 0.0;
    for (std::size_t j = 0; j < result[t].size(); ++j) {
      const double g = squared_norm(result[t][j] - reference[t][j]) / h2;
      frame += g;
      global += g;
      local += squared_norm(result[t][j] + shift - reference[t][j]) / h2;
      ++count;
    }
    r.per_frame.push_back(frame / static_cast<double>(result[t].size()));
  }
  r.mse = global / static_cast<double>(count);
  r.local_mse = local / static_cast<double>(count);
  return r;
}

inline MseResult eval_mse(const MotionSequence& result, const MotionSequence& reference, const Skeleton& skeleton) {
  if (result.num_frames() != reference.num_frames()) {
    throw DimensionError("eval_mse: frame counts differ (" + std::to_string(result.num_frames()) + " vs " +
                         std::to_string(reference.num_frames()) + ")");
  }
  return position_mse(global_joint_positions(result, skeleton), global_joint_positions(reference, skeleton),
                      skeleton.height(), skeleton.root());
}

// Percentage of `points` strictly inside the closed surface.
inline double penetration_rate(std::span<const Vec3d> points, std::span<const Vec3d> surface_vertices,
                               std::span<const Triangle> surface_triangles) {
  if (points.empty()) throw UndefinedMean("penetration_rate: empty vertex set");
  require_watertight(surface_triangles, surface_vertices.size());
  std::size_t inside = 0;
  for (const auto& p : points) inside += point_inside(p, surface_vertices, surface_triangles) ? 1 : 0;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(points.size());
}

struct PosedCharacter {
  std::vector<Vec3d> body;   // body surface vertices, indexed like BodySurface
  std::vector<Vec3d> limbs;  // all limb vertices (hands excluded)
  std::vector<Vec3d> hands;
};

inline PosedCharacter pose_character(const Character& c, std::span<const Quaternion> rotations) {
  if (!c.mesh) throw ConfigError("character '" + c.name + "' has no mesh");
  const auto& mesh = *c.mesh;
  const auto sets = extract_vertex_sets(mesh);
  const auto surface = extract_body_surface(mesh);
  const auto tr = skinning_transforms<double>(c.skeleton, rotations, Vec3d{});
  const auto all = skin_vertices(mesh, tr);
  PosedCharacter p;
  p.body = gather(all, surface.vertex_ids);
  const auto limb_ids = sets.all_limbs();
  p.limbs = gather(all, limb_ids);
  p.hands = gather(all, sets.hands);
  return p;
}

struct FrameSeries {
  double mean = 0.0;
  std::vector<double> per_frame;
};

// Per frame, the percentage of limb vertices inside the body surface
// (exact winding test); averaged over frames.
inline FrameSeries eval_penetration(const MotionSequence& motion, const Character& c) {
  if (!c.mesh) throw ConfigError("eval_penetration: character '" + c.name + "' has no mesh");
  motion.validate(c.skeleton);
  const auto surface = extract_body_surface(*c.mesh);
  require_watertight(surface.triangles, surface.vertex_ids.size());
  FrameSeries s;
  for (const auto& f : motion.frames) {
    const auto p = pose_character(c, f.rotations);
    s.per_frame.push_back(penetration_rate(p.limbs, p.body, surface.triangles));
  }
  double total = 0.0;
  for (double x : s.per_frame) total += x;
  s.mean = total / static_cast<double>(s.per_frame.size());
  return s;
}

// Mean unsigned distance from `points` to the surface.
inline double mean_surface_distance(std::span<const Vec3d> points, std::span<const Vec3d> surface_vertices,
                                    std::span<const Triangle> surface_triangles) {
  if (points.empty()) throw UndefinedMean("mean_surface_distance: empty vertex set");
  double total = 0.0;
  for (const auto& p : points) total += distance_to_surface(p, surface_vertices, surface_triangles);
  return total / static_cast<double>(points.size());
}

// Mean distance (length units) from hand vertices to the body surface,
// averaged over hand vertices and frames.
inline FrameSeries eval_contact(const MotionSequence& motion, const Character& c) {
  if (!c.mesh) throw ConfigError("eval_contact: character '" + c.name + "' has no mesh");
  motion.validate(c.skeleton);
  const auto surface = extract_body_surface(*c.mesh);
  require_watertight(surface.triangles, surface.vertex_ids.size());
  FrameSeries s;
  for (const auto& f : motion.frames) {
    const auto p = pose_character(c, f.rotations);
    s.per_frame.push_back(mean_surface_distance(p.hands, p.body, surface.triangles));
  }
  double total = 0.0;
  for (double x : s.per_frame) total += x;
  s.mean = total / static_cast<double>(s.per_frame.size());
  return s;
}

// World-space height of one joint per frame.
inline std::vector<double> end_effector_trace(const MotionSequence& motion, const Skeleton& skeleton,
                                              const std::string& joint) {
  const auto j = skeleton.find(joint);
  if (!j) throw ValidationError("unknown joint '" + joint + "'");
  const auto pos = global_joint_positions(motion, skeleton);
  std::vector<double> out;
  out.reserve(pos.size());
  for (const auto& frame : pos) out.push_back(frame[static_cast<std::size_t>(*j)].y);
  return out;
}

struct EvalReport {
  std::optional<MseResult> mse;             // when a reference motion is given
  std::optional<FrameSeries> penetration;   // percent
  std::optional<FrameSeries> contact;       // length units; reported ×100 as cm
};

}  // namespace skinret
