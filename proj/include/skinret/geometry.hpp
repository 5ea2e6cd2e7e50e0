#pragma once

// Skinned meshes: linear blend skinning, body-part labels, the per-joint
// shape descriptor and the limb/hand vertex sets.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"

namespace skinret {

enum class BodyPart : std::uint8_t {
  kBody,
  kLeftArm,
  kRightArm,
  kLeftLeg,
  kRightLeg,
  kLeftHand,
  kRightHand,
};

inline std::string_view part_name(BodyPart p) {
  switch (p) {
    case BodyPart::kBody: return "body";
    case BodyPart::kLeftArm: return "left_arm";
    case BodyPart::kRightArm: return "right_arm";
    case BodyPart::kLeftLeg: return "left_leg";
    case BodyPart::kRightLeg: return "right_leg";
    case BodyPart::kLeftHand: return "left_hand";
    case BodyPart::kRightHand: return "right_hand";
  }
  return "body";
}

// The four limbs, in the order used for vertex sets and limb networks.
inline constexpr std::array<BodyPart, 4> kLimbs = {BodyPart::kLeftArm, BodyPart::kRightArm,
                                                   BodyPart::kLeftLeg, BodyPart::kRightLeg};

// Body-part group of a joint from its name (Mixamo-style naming; an optional
// "namespace:" prefix is ignored).
//   Left*/Right* + Arm, ForeArm      -> arm
//   Left*/Right* + Hand*             -> hand
//   Left*/Right* + UpLeg, Leg, Foot, Toe* -> leg
//   Left*/Right* + Shoulder          -> body
//   Hips, Spine*, Neck*, Head*       -> body
inline std::optional<BodyPart> classify_joint(std::string_view name) {
  if (auto colon = name.rfind(':'); colon != std::string_view::npos) name = name.substr(colon + 1);
  auto starts = [](std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; };
  int side = 0;
  if (starts(name, "Left")) {
    side = 1;
    name.remove_prefix(4);
  } else if (starts(name, "Right")) {
    side = 2;
    name.remove_prefix(5);
  }
  if (side == 0) {
    if (name == "Hips" || starts(name, "Spine") || starts(name, "Neck") || starts(name, "Head")) {
      return BodyPart::kBody;
    }
    return std::nullopt;
  }
  const bool left = side == 1;
  if (name == "Shoulder") return BodyPart::kBody;
  if (name == "Arm" || name == "ForeArm") return left ? BodyPart::kLeftArm : BodyPart::kRightArm;
  if (starts(name, "Hand")) return left ? BodyPart::kLeftHand : BodyPart::kRightHand;
  if (name == "UpLeg" || name == "Leg" || name == "Foot" || starts(name, "Toe")) {
    return left ? BodyPart::kLeftLeg : BodyPart::kRightLeg;
  }
  return std::nullopt;
}

// Part of every joint; throws LabelingError naming all unmatched joints.
inline std::vector<BodyPart> joint_parts(const Skeleton& skeleton) {
  std::vector<BodyPart> out(skeleton.size());
  std::string unmatched;
  for (std::size_t j = 0; j < skeleton.size(); ++j) {
    auto p = classify_joint(skeleton.joint_names()[j]);
    if (!p) {
      unmatched += (unmatched.empty() ? "" : ", ") + skeleton.joint_names()[j];
      continue;
    }
    out[j] = *p;
  }
  if (!unmatched.empty()) throw LabelingError("unrecognized joint names: " + unmatched);
  return out;
}

// Joints driven by each limb network: the limb's own joints plus its hand.
inline std::array<std::vector<int>, 4> limb_joint_chains(const Skeleton& skeleton) {
  const auto parts = joint_parts(skeleton);
  std::array<std::vector<int>, 4> chains;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const int ji = static_cast<int>(j);
    switch (parts[j]) {
      case BodyPart::kLeftArm:
      case BodyPart::kLeftHand: chains[0].push_back(ji); break;
      case BodyPart::kRightArm:
      case BodyPart::kRightHand: chains[1].push_back(ji); break;
      case BodyPart::kLeftLeg: chains[2].push_back(ji); break;
      case BodyPart::kRightLeg: chains[3].push_back(ji); break;
      case BodyPart::kBody: break;
    }
  }
  return chains;
}

struct SkinWeight {
  int joint = 0;
  double weight = 0.0;
};

using Triangle = std::array<int, 3>;

struct SkinnedMesh {
  std::vector<Vec3d> vertices;  // rest pose
  std::vector<Triangle> triangles;
  std::vector<std::vector<SkinWeight>> weights;  // per vertex, sparse
  std::vector<BodyPart> parts;                   // filled by assign_parts

  std::size_t num_vertices() const { return vertices.size(); }

  void validate(const Skeleton& skeleton) const {
    const auto nv = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < triangles.size(); ++f) {
      for (int v : triangles[f]) {
        if (v < 0 || v >= nv) {
          throw InvalidRig("triangle " + std::to_string(f) + " references vertex " +
                           std::to_string(v) + " out of range");
        }
      }
    }
    if (weights.size() != vertices.size()) {
      throw InvalidRig("weights cover " + std::to_string(weights.size()) + " vertices, mesh has " +
                       std::to_string(vertices.size()));
    }
    for (std::size_t v = 0; v < weights.size(); ++v) {
      double s = 0.0;
      for (const auto& w : weights[v]) {
        if (w.joint < 0 || static_cast<std::size_t>(w.joint) >= skeleton.size()) {
          throw InvalidRig("vertex " + std::to_string(v) + " weights unknown joint " +
                           std::to_string(w.joint));
        }
        if (!(w.weight >= 0.0)) throw InvalidRig("vertex " + std::to_string(v) + " has a negative weight");
        s += w.weight;
      }
      if (std::abs(s - 1.0) > 1e-6) {
        throw InvalidRig("vertex " + std::to_string(v) + " weights sum to " + std::to_string(s));
      }
    }
    if (!parts.empty() && parts.size() != vertices.size()) {
      throw InvalidRig("part labels do not cover every vertex");
    }
  }
};

// Joint with the largest weight; ties go to the lowest joint index.
inline int dominant_joint(const std::vector<SkinWeight>& row) {
  int best = -1;
  double bw = -1.0;
  for (const auto& w : row) {
    if (w.weight > bw || (w.weight == bw && w.joint < best)) {
      best = w.joint;
      bw = w.weight;
    }
  }
  return best;
}

inline SkinnedMesh assign_parts(SkinnedMesh mesh, const Skeleton& skeleton) {
  const auto jp = joint_parts(skeleton);
  mesh.parts.assign(mesh.vertices.size(), BodyPart::kBody);
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const int j = dominant_joint(mesh.weights[v]);
    if (j < 0) throw InvalidRig("vertex " + std::to_string(v) + " has no skin weights");
    mesh.parts[v] = jp[static_cast<std::size_t>(j)];
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Skinning.

// Posed rigid transform of one joint relative to its rest placement:
// x -> R x + t.
template <class T>
struct JointTransform {
  std::array<T, 9> r;  // row-major
  Vec3<T> t;
};

template <class T>
std::array<T, 9> rotation_matrix(const Quat<T>& q) {
  const T two(2.0);
  const T xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const T xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const T wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  return {T(1.0) - two * (yy + zz), two * (xy - wz), two * (xz + wy),
          two * (xy + wz), T(1.0) - two * (xx + zz), two * (yz - wx),
          two * (xz - wy), two * (yz + wx), T(1.0) - two * (xx + yy)};
}

namespace detail {

// r · v + b for a constant vector v, one node per output when T = Var.
template <class T>
T affine_row(const T* r, const Vec3d& v, const T& b) {
  if constexpr (std::is_same_v<T, Var>) {
    const double c[3] = {v.x, v.y, v.z};
    return dot(std::span<const Var>(r, 3), std::span<const double>(c, 3), b);
  } else {
    return r[0] * v.x + r[1] * v.y + r[2] * v.z + b;
  }
}

}  // namespace detail

template <class T>
Vec3<T> apply(const JointTransform<T>& m, const Vec3d& v) {
  return {detail::affine_row(&m.r[0], v, m.t.x), detail::affine_row(&m.r[3], v, m.t.y),
          detail::affine_row(&m.r[6], v, m.t.z)};
}

template <class T>
std::vector<JointTransform<T>> skinning_transforms(const Skeleton& skeleton,
                                                   std::span<const Quat<T>> rotations,
                                                   const Vec3<T>& root_translation) {
  const auto pose = forward_kinematics_full(skeleton, rotations, root_translation);
  const auto& rest = skeleton.rest_positions();
  std::vector<JointTransform<T>> out(skeleton.size());
  for (std::size_t j = 0; j < skeleton.size(); ++j) {
    out[j].r = rotation_matrix(pose.global_rotations[j]);
    // t = p_posed - R p_rest
    const auto& r = out[j].r;
    const Vec3d& pr = rest[j];
    out[j].t = {pose.positions[j].x - (r[0] * pr.x + r[1] * pr.y + r[2] * pr.z),
                pose.positions[j].y - (r[3] * pr.x + r[4] * pr.y + r[5] * pr.z),
                pose.positions[j].z - (r[6] * pr.x + r[7] * pr.y + r[8] * pr.z)};
  }
  return out;
}

// v' = Σ_j w_vj (R_j (v - p_j^rest) + p_j^posed) for the listed vertices
// (all vertices when `subset` is empty).
template <class T>
std::vector<Vec3<T>> skin_vertices(const SkinnedMesh& mesh,
                                   const std::vector<JointTransform<T>>& transforms,
                                   std::span<const int> subset = {}) {
  const std::size_t count = subset.empty() ? mesh.vertices.size() : subset.size();
  std::vector<Vec3<T>> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t v = subset.empty() ? k : static_cast<std::size_t>(subset[k]);
    const auto& row = mesh.weights[v];
    if (row.size() == 1) {
      out[k] = apply(transforms[static_cast<std::size_t>(row[0].joint)], mesh.vertices[v]);
      if (row[0].weight != 1.0) out[k] = out[k] * T(row[0].weight);
      continue;
    }
    Vec3<T> acc(T(0.0), T(0.0), T(0.0));
    for (const auto& w : row) {
      if (w.weight == 0.0) continue;
      acc += apply(transforms[static_cast<std::size_t>(w.joint)], mesh.vertices[v]) * T(w.weight);
    }
    out[k] = acc;
  }
  return out;
}

template <class T>
std::vector<Vec3<T>> linear_blend_skinning(const SkinnedMesh& mesh, const Skeleton& skeleton,
                                           std::span<const Quat<T>> rotations,
                                           const Vec3<T>& root_translation,
                                           std::span<const int> subset = {}) {
  mesh.validate(skeleton);
  return skin_vertices(mesh, skinning_transforms(skeleton, rotations, root_translation), subset);
}

inline std::vector<Vec3d> linear_blend_skinning(const SkinnedMesh& mesh, const Skeleton& skeleton,
                                                const std::vector<Quaternion>& rotations,
                                                const Vec3d& root_translation = {}) {
  return linear_blend_skinning<double>(mesh, skeleton, std::span<const Quaternion>(rotations),
                                       root_translation);
}

// ---------------------------------------------------------------------------
// Shape descriptor.

// Orthonormal rest frame of a joint. The first axis runs along the bone
// (towards the first child, or away from the parent for end joints); the
// second is the world up (or forward, when the bone is vertical) made
// orthogonal to it.
inline std::array<Vec3d, 3> bone_frame(const Skeleton& skeleton, int joint) {
  const auto& rest = skeleton.rest_positions();
  const auto ju = static_cast<std::size_t>(joint);
  Vec3d dir{};
  const auto kids = skeleton.children(joint);
  if (!kids.empty()) {
    dir = rest[static_cast<std::size_t>(kids[0])] - rest[ju];
  } else if (skeleton.parents()[ju] != -1) {
    dir = rest[ju] - rest[static_cast<std::size_t>(skeleton.parents()[ju])];
  }
  if (norm(dir) < 1e-12) return {Vec3d{1, 0, 0}, Vec3d{0, 1, 0}, Vec3d{0, 0, 1}};
  const Vec3d e1 = dir / norm(dir);
  Vec3d up{0.0, 1.0, 0.0};
  if (std::abs(dot(up, e1)) > 0.9) up = {0.0, 0.0, 1.0};
  Vec3d e2 = up - e1 * dot(up, e1);
  e2 = e2 / norm(e2);
  return {e1, e2, cross(e1, e2)};
}

// Row j: bounding-box edge lengths, in joint j's rest frame, of the rest
// vertices whose dominant joint is j. Zero row for joints without vertices.
inline std::vector<Vec3d> shape_descriptor(const SkinnedMesh& mesh, const Skeleton& skeleton) {
  const std::size_t n = skeleton.size();
  std::vector<Vec3d> lo(n, Vec3d{1e300, 1e300, 1e300});
  std::vector<Vec3d> hi(n, Vec3d{-1e300, -1e300, -1e300});
  std::vector<std::array<Vec3d, 3>> frames(n);
  for (std::size_t j = 0; j < n; ++j) frames[j] = bone_frame(skeleton, static_cast<int>(j));
  std::vector<bool> seen(n, false);
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const int j = dominant_joint(mesh.weights[v]);
    if (j < 0) continue;
    const auto ju = static_cast<std::size_t>(j);
    const Vec3d d = mesh.vertices[v] - skeleton.rest_positions()[ju];
    for (int a = 0; a < 3; ++a) {
      const double c = dot(d, frames[ju][static_cast<std::size_t>(a)]);
      lo[ju][a] = std::min(lo[ju][a], c);
      hi[ju][a] = std::max(hi[ju][a], c);
    }
    seen[ju] = true;
  }
  std::vector<Vec3d> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (seen[j]) out[j] = hi[j] - lo[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vertex sets and body surface.

struct VertexSets {
  std::array<std::vector<int>, 4> limbs;  // in kLimbs order
  std::vector<int> hands;

  std::vector<int> all_limbs() const {
    std::vector<int> out;
    for (const auto& l : limbs) out.insert(out.end(), l.begin(), l.end());
    return out;
  }
};

inline VertexSets extract_vertex_sets(const SkinnedMesh& mesh) {
  if (mesh.parts.size() != mesh.vertices.size()) {
    throw InvalidRig("extract_vertex_sets: parts not assigned");
  }
  VertexSets s;
  for (std::size_t v = 0; v < mesh.parts.size(); ++v) {
    const int vi = static_cast<int>(v);
    switch (mesh.parts[v]) {
      case BodyPart::kLeftArm: s.limbs[0].push_back(vi); break;
      case BodyPart::kRightArm: s.limbs[1].push_back(vi); break;
      case BodyPart::kLeftLeg: s.limbs[2].push_back(vi); break;
      case BodyPart::kRightLeg: s.limbs[3].push_back(vi); break;
      case BodyPart::kLeftHand:
      case BodyPart::kRightHand: s.hands.push_back(vi); break;
      case BodyPart::kBody: break;
    }
  }
  return s;
}

// Main-body surface: triangles whose three vertices are body-labeled,
// reindexed over the body vertices.
struct BodySurface {
  std::vector<int> vertex_ids;  // into the full mesh
  std::vector<Triangle> triangles;
};

inline BodySurface extract_body_surface(const SkinnedMesh& mesh) {
  if (mesh.parts.size() != mesh.vertices.size()) {
    throw InvalidRig("extract_body_surface: parts not assigned");
  }
  BodySurface s;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& t : mesh.triangles) {
    bool body = true;
    for (int v : t) body = body && mesh.parts[static_cast<std::size_t>(v)] == BodyPart::kBody;
    if (!body) continue;
    Triangle nt{};
    for (int k = 0; k < 3; ++k) {
      const auto v = static_cast<std::size_t>(t[static_cast<std::size_t>(k)]);
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(s.vertex_ids.size());
        s.vertex_ids.push_back(static_cast<int>(v));
      }
      nt[static_cast<std::size_t>(k)] = remap[v];
    }
    s.triangles.push_back(nt);
  }
  return s;
}

template <class T>
std::vector<Vec3<T>> gather(const std::vector<Vec3<T>>& all, std::span<const int> ids) {
  std::vector<Vec3<T>> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace skinret
