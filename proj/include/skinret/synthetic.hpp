#pragma once

// Synthetic characters and motions for desk-scale experiments.
//
// Every character shares one 22-joint topology with Mixamo-style names,
// y up, facing +z, left = +x, T-pose rest. The mesh is a set of closed
// parts, each rigidly bound to one joint: an ellipsoid torso (Spine1), a
// sphere head (Head), a capsule per limb bone and a sphere per hand.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"
#include "skinret/meshgen.hpp"
#include "skinret/pipeline.hpp"

namespace skinret {

struct CharacterParams {
  std::string name = "base";
  // Legs.
  double hip_width = 0.09;
  double hip_drop = 0.05;
  double thigh = 0.42;
  double shin = 0.42;
  double ankle = 0.06;
  double toe = 0.12;
  // Trunk.
  double spine = 0.11;  // Spine, Spine1, Spine2 each
  double neck = 0.12;
  double head = 0.12;
  // Arms.
  double shoulder_x = 0.05;
  double shoulder_y = 0.08;
  double clavicle = 0.12;
  double arm = 0.28;
  double forearm = 0.25;
  // Mesh.
  double torso_rx = 0.14;
  double torso_rz = 0.10;
  double head_radius = 0.09;
  double arm_radius = 0.04;
  double leg_radius = 0.055;
  double hand_radius = 0.045;
};

inline const std::vector<std::string>& standard_joint_names() {
  static const std::vector<std::string> names = {
      "Hips",         "Spine",        "Spine1",        "Spine2",    "Neck",          "Head",
      "LeftShoulder", "LeftArm",      "LeftForeArm",   "LeftHand",  "RightShoulder", "RightArm",
      "RightForeArm", "RightHand",    "LeftUpLeg",     "LeftLeg",   "LeftFoot",      "LeftToeBase",
      "RightUpLeg",   "RightLeg",     "RightFoot",     "RightToeBase"};
  return names;
}

inline Skeleton make_skeleton(const CharacterParams& c) {
  const double hips_y = c.hip_drop + c.thigh + c.shin + c.ankle;
  std::vector<int> parents = {-1, 0, 1, 2, 3, 4, 3, 6, 7, 8, 3, 10, 11, 12, 0, 14, 15, 16, 0, 18, 19, 20};
  std::vector<Vec3d> off = {
      {0, hips_y, 0},
      {0, c.spine, 0},
      {0, c.spine, 0},
      {0, c.spine, 0},
      {0, c.neck, 0},
      {0, c.head, 0},
      {c.shoulder_x, c.shoulder_y, 0},
      {c.clavicle, 0, 0},
      {c.arm, 0, 0},
      {c.forearm, 0, 0},
      {-c.shoulder_x, c.shoulder_y, 0},
      {-c.clavicle, 0, 0},
      {-c.arm, 0, 0},
      {-c.forearm, 0, 0},
      {c.hip_width, -c.hip_drop, 0},
      {0, -c.thigh, 0},
      {0, -c.shin, 0},
      {0, -c.ankle, c.toe},
      {-c.hip_width, -c.hip_drop, 0},
      {0, -c.thigh, 0},
      {0, -c.shin, 0},
      {0, -c.ankle, c.toe},
  };
  return Skeleton(standard_joint_names(), std::move(parents), std::move(off));
}

namespace detail {

inline void add_part(SkinnedMesh& mesh, const TriMesh& part, int joint) {
  TriMesh tmp{mesh.vertices, mesh.triangles};
  append(tmp, part);
  mesh.vertices = std::move(tmp.vertices);
  mesh.triangles = std::move(tmp.triangles);
  mesh.weights.resize(mesh.vertices.size(), {SkinWeight{joint, 1.0}});
}

}  // namespace detail

inline SkinnedMesh make_mesh(const CharacterParams& c, const Skeleton& s) {
  const auto& p = s.rest_positions();
  auto at = [&](const char* n) { return p[static_cast<std::size_t>(s.index_of(n))]; };
  SkinnedMesh mesh;
  // Torso from just above the hips to the shoulder line.
  const double bottom = at("Hips").y;
  const double top = at("LeftShoulder").y + 0.02;
  const Vec3d center{0.0, 0.5 * (bottom + top), 0.0};
  detail::add_part(mesh, ellipsoid(center, {c.torso_rx, 0.5 * (top - bottom), c.torso_rz}, 14, 20),
                   s.index_of("Spine1"));
  detail::add_part(mesh, icosphere(2, c.head_radius, at("Head") + Vec3d{0, c.head_radius * 0.6, 0}),
                   s.index_of("Head"));
  // Capsules start one radius past the joint so their caps end on it.
  auto bone = [&](const char* from, const char* to, double r, int stacks, int rings, int segs) {
    const Vec3d a = at(from), b = at(to);
    const Vec3d dir = (b - a) / norm(b - a);
    detail::add_part(mesh, capsule(a + dir * r, b, r, stacks, rings, segs), s.index_of(from));
  };
  for (const char* side : {"Left", "Right"}) {
    const std::string sd(side);
    bone((sd + "Arm").c_str(), (sd + "ForeArm").c_str(), c.arm_radius, 3, 6, 12);
    bone((sd + "ForeArm").c_str(), (sd + "Hand").c_str(), c.arm_radius * 0.9, 3, 6, 12);
    const Vec3d hand = at((sd + "Hand").c_str());
    const Vec3d out = hand - at((sd + "ForeArm").c_str());
    detail::add_part(mesh, icosphere(1, c.hand_radius, hand + out / norm(out) * c.hand_radius),
                     s.index_of(sd + "Hand"));
    bone((sd + "UpLeg").c_str(), (sd + "Leg").c_str(), c.leg_radius, 2, 2, 8);
    bone((sd + "Leg").c_str(), (sd + "Foot").c_str(), c.leg_radius * 0.85, 2, 2, 8);
    bone((sd + "Foot").c_str(), (sd + "ToeBase").c_str(), c.leg_radius * 0.7, 2, 1, 8);
  }
  return assign_parts(std::move(mesh), s);
}

inline Character make_character(const CharacterParams& c) {
  Skeleton s = make_skeleton(c);
  SkinnedMesh m = make_mesh(c, s);
  return Character(c.name, std::move(s), std::move(m));
}

// ---------------------------------------------------------------------------
// Families.

// Two characters whose forearm/arm ratios differ by a factor of two.
inline std::vector<CharacterParams> armfold_family() {
  CharacterParams a;
  a.name = "longarm";
  a.arm = 0.3125;
  a.forearm = 0.1875;
  CharacterParams b;
  b.name = "longforearm";
  b.arm = 0.2273;
  b.forearm = 0.2727;
  return {a, b};
}

// A slim source and a bulky target of the same skeleton.
inline std::vector<CharacterParams> penetration_family() {
  CharacterParams slim;
  slim.name = "slim";
  slim.torso_rx = 0.09;
  slim.torso_rz = 0.06;
  CharacterParams bulky;
  bulky.name = "bulky";
  bulky.torso_rx = 0.22;
  bulky.torso_rz = 0.28;
  bulky.clavicle = 0.14;
  bulky.arm_radius = 0.05;
  return {slim, bulky};
}

inline std::vector<CharacterParams> family_by_name(const std::string& name) {
  if (name == "armfold") return armfold_family();
  if (name == "penetration") return penetration_family();
  throw ConfigError("unknown synthetic family '" + name + "' (expected armfold or penetration)");
}

// ---------------------------------------------------------------------------
// Motions.

enum class MotionStyle { kArmFold, kHug };

struct MotionParams {
  MotionStyle style = MotionStyle::kArmFold;
  std::size_t frames = 64;
  double fps = 30.0;
  std::uint64_t seed = 1;
  double spine_amplitude = 0.0;  // degrees
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

inline Quaternion rot(const Vec3d& axis, double degrees) { return quat_from_axis_angle(axis, deg2rad(degrees)); }

// Shortest-arc rotation taking unit vector a onto unit vector b.
inline Quaternion quat_between(const Vec3d& a, const Vec3d& b) {
  const Vec3d axis = cross(a, b);
  const double s = norm(axis);
  if (s < 1e-12) return dot(a, b) > 0.0 ? Quaternion::identity() : quat_from_axis_angle({0, 0, 1}, std::numbers::pi);
  return quat_from_axis_angle(axis / s, std::atan2(s, dot(a, b)));
}

// Left-arm pose, degrees. The upper arm swings down and forward from the
// T-pose; the forearm points inward (azimuth from -x towards +z) and up
// (elevation). The right arm uses the mirror image (x -> -x).
struct ArmPose {
  double down, forward, azimuth, elevation;
};

inline std::array<Quaternion, 2> left_arm(const ArmPose& a) {
  const Quaternion upper = normalize(multiply(rot({0, 1, 0}, -a.forward), rot({0, 0, 1}, -a.down)));
  const double az = deg2rad(a.azimuth), el = deg2rad(a.elevation);
  const Vec3d dir{-std::cos(az) * std::cos(el), std::sin(el), std::sin(az) * std::cos(el)};
  const Vec3d local = rotate(conjugate(upper), dir);
  return {upper, normalize(quat_between({1, 0, 0}, local / norm(local)))};
}

inline Quaternion mirror_x(const Quaternion& q) { return {q.w, q.x, -q.y, -q.z}; }

inline ArmPose sample_arm(std::mt19937_64& rng, MotionStyle style) {
  if (style == MotionStyle::kArmFold) {
    return {uniform(rng, 60, 85), uniform(rng, 20, 45), uniform(rng, 0, 45), uniform(rng, 0, 30)};
  }
  return {uniform(rng, 60, 85), uniform(rng, 25, 50), uniform(rng, 10, 50), uniform(rng, -10, 20)};
}

// Rejection sampling keeps every y Euler angle within 90 degrees, so the
// generated motions never trigger the rotation-limit loss by themselves.
inline std::array<Quaternion, 2> sample_limited_arm(std::mt19937_64& rng, MotionStyle style) {
  while (true) {
    const auto q = left_arm(sample_arm(rng, style));
    if (std::abs(euler_y(q[0])) <= 90.0 && std::abs(euler_y(q[1])) <= 90.0) return q;
  }
}

}  // namespace detail

// Smooth motion: per-frame poses interpolate between random keyframes every
// 8 frames. Spine and legs move a little; arms follow the style's ranges.
inline MotionSequence make_motion(const Skeleton& skeleton, const MotionParams& p) {
  if (p.frames == 0) throw ConfigError("motion needs at least one frame");
  std::mt19937_64 rng(p.seed);
  const std::size_t n = skeleton.size();
  const std::size_t stride = 8;
  const std::size_t keys = (p.frames + stride - 1) / stride + 1;
  std::vector<std::vector<Quaternion>> key_poses;
  for (std::size_t k = 0; k < keys; ++k) {
    std::vector<Quaternion> q(n, Quaternion::identity());
    for (const char* name : {"Spine", "Spine1", "Spine2"}) {
      if (p.spine_amplitude > 0.0) {
        q[static_cast<std::size_t>(skeleton.index_of(name))] = multiply(
            detail::rot({1, 0, 0}, detail::uniform(rng, -p.spine_amplitude, p.spine_amplitude)),
            detail::rot({0, 1, 0}, detail::uniform(rng, -p.spine_amplitude, p.spine_amplitude)));
      }
    }
    const auto l = detail::sample_limited_arm(rng, p.style);
    const auto r = detail::sample_limited_arm(rng, p.style);
    q[static_cast<std::size_t>(skeleton.index_of("LeftArm"))] = l[0];
    q[static_cast<std::size_t>(skeleton.index_of("LeftForeArm"))] = l[1];
    q[static_cast<std::size_t>(skeleton.index_of("RightArm"))] = detail::mirror_x(r[0]);
    q[static_cast<std::size_t>(skeleton.index_of("RightForeArm"))] = detail::mirror_x(r[1]);
    for (const char* side : {"Left", "Right"}) {
      const std::string sd(side);
      const double hip = detail::uniform(rng, -25, 10);
      q[static_cast<std::size_t>(skeleton.index_of(sd + "UpLeg"))] = detail::rot({1, 0, 0}, hip);
      q[static_cast<std::size_t>(skeleton.index_of(sd + "Leg"))] =
          detail::rot({1, 0, 0}, detail::uniform(rng, 0, 30));
    }
    for (auto& x : q) x = normalize(x);
    key_poses.push_back(std::move(q));
  }
  MotionSequence m;
  m.joint_names = skeleton.joint_names();
  m.fps = p.fps;
  for (std::size_t t = 0; t < p.frames; ++t) {
    const std::size_t k = t / stride;
    const double u = static_cast<double>(t % stride) / static_cast<double>(stride);
    MotionFrame f;
    f.rotations.resize(n);
    for (std::size_t j = 0; j < n; ++j) f.rotations[j] = nlerp(key_poses[k][j], key_poses[k + 1][j], u);
    f.root.linear_velocity = {detail::uniform(rng, -0.01, 0.01), 0.0, detail::uniform(rng, 0.0, 0.02)};
    f.root.yaw = detail::uniform(rng, -0.01, 0.01);
    m.frames.push_back(std::move(f));
  }
  return m;
}

}  // namespace skinret
