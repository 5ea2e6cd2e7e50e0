#pragma once

// Skeletons, forward kinematics and root-motion handling.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/math.hpp"

namespace skinret {

// Rest-pose joint hierarchy. Rest rotations are identity; the rest pose is
// fully described by the per-joint offsets.
class Skeleton {
 public:
  Skeleton() = default;

  // Validates the hierarchy (single root, no cycles, indices in range) and
  // derives the height as the vertical extent of the rest joint positions.
  Skeleton(std::vector<std::string> names, std::vector<int> parents, std::vector<Vec3d> offsets)
      : names_(std::move(names)), parents_(std::move(parents)), offsets_(std::move(offsets)) {
    const std::size_t n = names_.size();
    if (n == 0) throw InvalidSkeleton("skeleton has no joints");
    if (parents_.size() != n || offsets_.size() != n) {
      throw InvalidSkeleton("skeleton: names, parents and offsets differ in length");
    }
    int roots = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int p = parents_[i];
      if (p == -1) {
        ++roots;
        root_ = static_cast<int>(i);
      } else if (p < 0 || static_cast<std::size_t>(p) >= n) {
        throw InvalidSkeleton("joint '" + names_[i] + "' has out-of-range parent " +
                              std::to_string(p));
      }
      if (!is_finite(offsets_[i])) throw InvalidSkeleton("joint '" + names_[i] + "' offset is not finite");
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
        throw InvalidSkeleton("duplicate joint name '" + names_[i] + "'");
      }
    }
    if (roots != 1) {
      throw InvalidSkeleton("skeleton must have exactly one root, found " + std::to_string(roots));
    }
    // Cycle check: every chain must reach the root within n steps.
    for (std::size_t i = 0; i < n; ++i) {
      int j = static_cast<int>(i);
      std::size_t steps = 0;
      while (j != -1) {
        j = parents_[static_cast<std::size_t>(j)];
        if (++steps > n) {
          throw InvalidSkeleton("cycle in parent chain starting at joint '" + names_[i] + "'");
        }
      }
    }
    // Parents-before-children evaluation order.
    std::vector<int> depth(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = parents_[i]; j != -1; j = parents_[static_cast<std::size_t>(j)]) ++depth[i];
    }
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = static_cast<int>(i);
    std::stable_sort(order_.begin(), order_.end(),
                     [&](int a, int b) { return depth[static_cast<std::size_t>(a)] < depth[static_cast<std::size_t>(b)]; });

    rest_positions_.resize(n);
    for (int j : order_) {
      const auto ju = static_cast<std::size_t>(j);
      rest_positions_[ju] = parents_[ju] == -1 ? offsets_[ju]
                                               : rest_positions_[static_cast<std::size_t>(parents_[ju])] + offsets_[ju];
    }
    double lo = rest_positions_[0].y, hi = rest_positions_[0].y;
    for (const Vec3d& p : rest_positions_) {
      lo = std::min(lo, p.y);
      hi = std::max(hi, p.y);
    }
    height_ = hi - lo;
    if (!(height_ > 0.0)) {
      throw InvalidSkeleton("skeleton height (vertical rest extent) must be positive");
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& joint_names() const { return names_; }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<Vec3d>& offsets() const { return offsets_; }
  const std::vector<int>& order() const { return order_; }
  const std::vector<Vec3d>& rest_positions() const { return rest_positions_; }
  double height() const { return height_; }
  int root() const { return root_; }

  std::optional<int> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int index_of(const std::string& name) const {
    auto j = find(name);
    if (!j) throw ValidationError("unknown joint '" + name + "'");
    return *j;
  }

  // Children of a joint in index order.
  std::vector<int> children(int joint) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < parents_.size(); ++i) {
      if (parents_[i] == joint) out.push_back(static_cast<int>(i));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<int> parents_;
  std::vector<Vec3d> offsets_;
  std::vector<int> order_;
  std::vector<Vec3d> rest_positions_;
  std::unordered_map<std::string, int> index_;
  double height_ = 0.0;
  int root_ = 0;
};

template <class T>
struct PoseResult {
  std::vector<Vec3<T>> positions;
  std::vector<Quat<T>> global_rotations;
};

// Global joint positions and rotations from local rotations.
//
//   R_root = q_root,                p_root = t + R_root · offset_root
//   R_i    = R_parent ⊗ q_i,        p_i    = p_parent + R_parent · offset_i
//
// Rotations compose through hamilton_product (renormalized at every step).
template <class T>
PoseResult<T> forward_kinematics_full(const Skeleton& skeleton, std::span<const Quat<T>> local,
                                      const Vec3<T>& root_translation) {
  const std::size_t n = skeleton.size();
  if (local.size() != n) {
    throw DimensionError("forward_kinematics: expected " + std::to_string(n) + " rotations, got " +
                         std::to_string(local.size()));
  }
  PoseResult<T> r;
  r.positions.resize(n);
  r.global_rotations.resize(n);
  const auto& parents = skeleton.parents();
  const auto& offsets = skeleton.offsets();
  for (int j : skeleton.order()) {
    const auto ju = static_cast<std::size_t>(j);
    const Vec3<T> off(T(offsets[ju].x), T(offsets[ju].y), T(offsets[ju].z));
    const int p = parents[ju];
    if (p == -1) {
      r.global_rotations[ju] = normalize(local[ju]);
      r.positions[ju] = root_translation + rotate(r.global_rotations[ju], off);
    } else {
      const auto pu = static_cast<std::size_t>(p);
      r.global_rotations[ju] = hamilton_product(r.global_rotations[pu], local[ju]);
      r.positions[ju] = r.positions[pu] + rotate(r.global_rotations[pu], off);
    }
  }
  return r;
}

template <class T>
std::vector<Vec3<T>> forward_kinematics(const Skeleton& skeleton, std::span<const Quat<T>> local,
                                        const Vec3<T>& root_translation = Vec3<T>(T(0.0), T(0.0), T(0.0))) {
  return forward_kinematics_full(skeleton, local, root_translation).positions;
}

inline std::vector<Vec3d> forward_kinematics(const Skeleton& skeleton,
                                             const std::vector<Quaternion>& local,
                                             const Vec3d& root_translation = {}) {
  return forward_kinematics<double>(skeleton, std::span<const Quaternion>(local), root_translation);
}

// ---------------------------------------------------------------------------
// Root motion.

// Per-frame global root channel: 3 components of linear velocity (length per
// frame, world axes) and one yaw increment about +y (radians per frame).
struct RootChannel {
  Vec3d linear_velocity{};
  double yaw = 0.0;
};

inline RootChannel retarget_root(const RootChannel& root, double source_height, double target_height) {
  if (!(source_height > 0.0) || !(target_height > 0.0)) {
    throw InvalidSkeleton("retarget_root: heights must be positive");
  }
  if (source_height == target_height) return root;
  const double s = target_height / source_height;
  return {root.linear_velocity * s, root.yaw};
}

struct MotionFrame {
  RootChannel root;
  std::vector<Quaternion> rotations;
};

struct MotionSequence {
  std::vector<std::string> joint_names;
  std::vector<MotionFrame> frames;
  double fps = 30.0;

  std::size_t num_frames() const { return frames.size(); }
  std::size_t num_joints() const { return joint_names.size(); }

  // Throws ValidationError unless the sequence is well-formed and its joint
  // list matches the skeleton's.
  void validate(const Skeleton& skeleton) const {
    if (frames.empty()) throw ValidationError("motion has no frames");
    if (!(fps > 0.0)) throw ValidationError("motion fps must be positive");
    if (joint_names != skeleton.joint_names()) {
      throw ValidationError("motion joint list does not match the skeleton");
    }
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (frames[t].rotations.size() != skeleton.size()) {
        throw DimensionError("frame " + std::to_string(t) + " has " +
                             std::to_string(frames[t].rotations.size()) + " rotations, expected " +
                             std::to_string(skeleton.size()));
      }
      for (const auto& q : frames[t].rotations) {
        if (!is_finite(q) || std::abs(quat_dot(q, q) - 1.0) > 1e-9) {
          throw ValidationError("frame " + std::to_string(t) + " has a non-unit rotation");
        }
      }
      if (!is_finite(frames[t].root.linear_velocity) || !std::isfinite(frames[t].root.yaw)) {
        throw ValidationError("frame " + std::to_string(t) + " has a non-finite root channel");
      }
    }
  }
};

struct RootPlacement {
  Vec3d translation{};
  Quaternion heading = Quaternion::identity();
};

// Integrates the root channel from a zero origin: translation and heading at
// frame t are the running sums of velocities and yaw increments up to and
// including t.
inline std::vector<RootPlacement> root_trajectory(const MotionSequence& motion) {
  std::vector<RootPlacement> out(motion.frames.size());
  Vec3d p{};
  double yaw = 0.0;
  for (std::size_t t = 0; t < motion.frames.size(); ++t) {
    p += motion.frames[t].root.linear_velocity;
    yaw += motion.frames[t].root.yaw;
    out[t].translation = p;
    out[t].heading = quat_from_axis_angle({0.0, 1.0, 0.0}, yaw);
  }
  return out;
}

// World-space joint positions for every frame: heading and translation of
// the root trajectory applied on top of the local-pose FK.
inline std::vector<std::vector<Vec3d>> global_joint_positions(const MotionSequence& motion,
                                                              const Skeleton& skeleton) {
  motion.validate(skeleton);
  const auto traj = root_trajectory(motion);
  std::vector<std::vector<Vec3d>> out(motion.frames.size());
  for (std::size_t t = 0; t < motion.frames.size(); ++t) {
    auto local = forward_kinematics(skeleton, motion.frames[t].rotations);
    for (auto& p : local) p = traj[t].translation + rotate(traj[t].heading, p);
    out[t] = std::move(local);
  }
  return out;
}

template <class T>
std::vector<Quat<T>> to_scalar(std::span<const Quaternion> q) {
  std::vector<Quat<T>> out;
  out.reserve(q.size());
  for (const auto& x : q) out.push_back(Quat<T>(T(x.w), T(x.x), T(x.y), T(x.z)));
  return out;
}

}  // namespace skinret
