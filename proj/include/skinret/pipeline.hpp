#pragma once

// Single-pass retargeting of a source motion onto a target character:
//   q_cp  = q_A                       (motion copy)
//   q_sem = Δq_s ⊗ q_cp               (skeleton residual)
//   q_geo = Δq_g ⊗ q_sem              (shape residual, limbs only)
//   q_B   = nlerp(q_sem, q_geo, w)    (balancing gate)
// and the root channel rescaled by the height ratio.

#include <optional>
#include <string>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"
#include "skinret/networks.hpp"

namespace skinret {

// A character: skeleton plus optional skinned mesh. The shape descriptor is
// computed when the mesh is attached.
struct Character {
  std::string name;
  Skeleton skeleton;
  std::optional<SkinnedMesh> mesh;
  std::vector<Vec3d> shape;

  Character(std::string n, Skeleton s) : name(std::move(n)), skeleton(std::move(s)) {}
  Character(std::string n, Skeleton s, SkinnedMesh m) : name(std::move(n)), skeleton(std::move(s)) {
    attach_mesh(std::move(m));
  }

  void attach_mesh(SkinnedMesh m) {
    m.validate(skeleton);
    if (m.parts.size() != m.vertices.size()) m = assign_parts(std::move(m), skeleton);
    shape = shape_descriptor(m, skeleton);
    mesh = std::move(m);
  }
};

// Trained (or freshly initialized) modules. A missing module acts as its
// zero-parameter counterpart: identity residuals and w = 0.5.
struct NetworkSet {
  std::optional<SkeletonNet<double>> skeleton;
  std::optional<ShapeNets<double>> shape;
  std::optional<GateNet<double>> gate;
};

struct WControl {
  std::optional<std::vector<double>> w_override;
  double w_scale = 1.0;
};

// Override wins; otherwise the network weights scaled and clamped to [0, 1].
inline std::vector<double> apply_w_control(const std::vector<double>& w_network,
                                           const std::optional<std::vector<double>>& w_override,
                                           double w_scale = 1.0) {
  if (!(w_scale >= 0.0) || !std::isfinite(w_scale)) throw ValidationError("w_scale must be finite and >= 0");
  if (w_override) {
    if (w_override->size() != w_network.size()) {
      throw ValidationError("w_override has " + std::to_string(w_override->size()) + " entries, expected " +
                            std::to_string(w_network.size()));
    }
    for (std::size_t j = 0; j < w_override->size(); ++j) {
      const double x = (*w_override)[j];
      if (!(x >= 0.0 && x <= 1.0)) {
        throw ValidationError("w_override[" + std::to_string(j) + "] is outside [0, 1]");
      }
    }
    return *w_override;
  }
  if (w_scale == 1.0) return w_network;
  std::vector<double> out(w_network.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = clamp(w_network[j] * w_scale, 0.0, 1.0);
  return out;
}

struct RetargetRequest {
  const MotionSequence* motion = nullptr;
  const Skeleton* source = nullptr;
  const Character* target = nullptr;
  const NetworkSet* networks = nullptr;  // null: all modules absent
  WControl control;
  bool geometry = true;  // false: skeleton residual only, q_B = q_sem

  void validate() const {
    if (!motion || !source || !target) throw ConfigError("retarget request is incomplete");
    motion->validate(*source);
    if (source->size() != target->skeleton.size()) {
      throw DimensionError("source and target joint counts differ");
    }
    if (geometry && !target->mesh) throw ConfigError("geometry stage enabled but target has no mesh");
    if (control.w_override && control.w_override->size() != source->size()) {
      throw ValidationError("w_override length does not match the joint count");
    }
  }
};

struct FrameResult {
  std::vector<Quaternion> q_copy;
  std::vector<Quaternion> q_sem;
  std::vector<Quaternion> q_geo;
  std::vector<double> w_network;
  std::vector<double> w;
  std::vector<Quaternion> q_b;
};

inline std::vector<Quaternion> compose(const std::vector<Quaternion>& delta, const std::vector<Quaternion>& q) {
  std::vector<Quaternion> out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = hamilton_product(delta[j], q[j]);
  return out;
}

inline std::vector<Quaternion> blend(const std::vector<Quaternion>& q_sem, const std::vector<Quaternion>& q_geo,
                                     const std::vector<double>& w) {
  std::vector<Quaternion> out(q_sem.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = nlerp(q_sem[j], q_geo[j], w[j]);
  return out;
}

// Skeleton residual for one frame of copied rotations.
inline std::vector<Quaternion> semantics_pose(const NetworkSet* nets, const Skeleton& source,
                                              const Skeleton& target, const std::vector<Quaternion>& q_cp) {
  if (!nets || !nets->skeleton) return q_cp;
  return compose(nets->skeleton->forward(source, target, std::span<const Quaternion>(q_cp)), q_cp);
}

inline std::vector<Quaternion> geometry_pose(const NetworkSet* nets, const Character& target,
                                             const std::vector<Quaternion>& q_sem) {
  if (!nets || !nets->shape) return q_sem;
  return compose(nets->shape->forward(target.shape, target.skeleton.height(), std::span<const Quaternion>(q_sem)),
                 q_sem);
}

inline std::vector<double> gate_weights(const NetworkSet* nets, const Character& target,
                                        const std::vector<Quaternion>& q_sem) {
  if (!nets || !nets->gate) return std::vector<double>(q_sem.size(), 0.5);
  return nets->gate->forward(target.skeleton, target.shape, std::span<const Quaternion>(q_sem));
}

namespace detail {

inline FrameResult retarget_frame_unchecked(const RetargetRequest& req, std::size_t t) {
  FrameResult r;
  r.q_copy = req.motion->frames[t].rotations;
  r.q_sem = semantics_pose(req.networks, *req.source, req.target->skeleton, r.q_copy);
  if (!req.geometry) {
    r.q_geo = r.q_sem;
    r.w_network.assign(r.q_sem.size(), 0.0);
    r.w = r.w_network;
    r.q_b = r.q_sem;
    return r;
  }
  r.q_geo = geometry_pose(req.networks, *req.target, r.q_sem);
  r.w_network = gate_weights(req.networks, *req.target, r.q_sem);
  r.w = apply_w_control(r.w_network, req.control.w_override, req.control.w_scale);
  r.q_b = blend(r.q_sem, r.q_geo, r.w);
  return r;
}

}  // namespace detail

inline FrameResult retarget_frame(const RetargetRequest& req, std::size_t t) {
  req.validate();
  if (t >= req.motion->num_frames()) throw ValidationError("frame index out of range");
  return detail::retarget_frame_unchecked(req, t);
}

// Re-interpolates a cached frame with new gate weights; equal to
// retarget_frame with the same weights, without running any network.
inline FrameResult rebalance_frame(const FrameResult& cached, const WControl& control) {
  FrameResult r = cached;
  r.w = apply_w_control(cached.w_network, control.w_override, control.w_scale);
  r.q_b = blend(r.q_sem, r.q_geo, r.w);
  return r;
}

struct RetargetResult {
  MotionSequence motion;
  std::vector<FrameResult> frames;
};

inline RetargetResult retarget_sequence(const RetargetRequest& req) {
  req.validate();
  RetargetResult out;
  out.motion.joint_names = req.target->skeleton.joint_names();
  out.motion.fps = req.motion->fps;
  const double ha = req.source->height();
  const double hb = req.target->skeleton.height();
  for (std::size_t t = 0; t < req.motion->num_frames(); ++t) {
    FrameResult f = detail::retarget_frame_unchecked(req, t);
    out.motion.frames.push_back({retarget_root(req.motion->frames[t].root, ha, hb), f.q_b});
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace skinret
