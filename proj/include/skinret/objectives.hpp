#pragma once

// Training losses: reconstruction, y-angle limit and gate regularization,
// plus the three composite objectives (skeleton stage, limb networks, gate).

#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "skinret/autodiff.hpp"
#include "skinret/errors.hpp"
#include "skinret/fields.hpp"
#include "skinret/geometry.hpp"
#include "skinret/kinematics.hpp"
#include "skinret/math.hpp"
#include "skinret/semantics.hpp"

namespace skinret {

struct LossWeights {
  double lambda = 2.0;  // adversarial weight; no discriminator is built, so unused
  double mu = 10.0;
  double nu = 100.0;
  double kappa = 0.5;
  double iota = 0.5;
  double tau = 0.005;
  double alpha = 100.0;  // degrees

  void validate() const {
    for (double x : {lambda, mu, nu, kappa, iota, tau}) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("loss weights must be finite and nonnegative");
    }
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  }
};

namespace detail {

template <class T>
void check_same_size(std::span<const Quat<T>> a, std::span<const Quat<T>> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": rotation counts differ (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

template <class A, class B>
auto lift_quats(std::span<const Quat<A>> q) {
  if constexpr (std::is_same_v<A, B>) {
    return std::vector<Quat<B>>(q.begin(), q.end());
  } else {
    std::vector<Quat<B>> out;
    out.reserve(q.size());
    for (const auto& x : q) out.push_back(Quat<B>(B(x.w), B(x.x), B(x.y), B(x.z)));
    return out;
  }
}

}  // namespace detail

// Σ_j ||q_j - q̂_j||², with q̂_j flipped when q_j·q̂_j < 0.
template <class T>
T quaternion_distance(std::span<const Quat<T>> q, std::span<const Quat<T>> q_hat) {
  detail::check_same_size(q, q_hat, "quaternion_distance");
  std::vector<T> d;
  d.reserve(4 * q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const Quat<T> b = value(quat_dot(q[j], q_hat[j])) < 0.0 ? -q_hat[j] : q_hat[j];
    d.push_back(q[j].w - b.w);
    d.push_back(q[j].x - b.x);
    d.push_back(q[j].y - b.y);
    d.push_back(q[j].z - b.z);
  }
  return dot(std::span<const T>(d), std::span<const T>(d));
}

// Σ_j ||f_K(q)_j - f_K(q̂)_j||² on `skeleton` with the root at the origin.
template <class T>
T position_distance(const Skeleton& skeleton, std::span<const Quat<T>> q, std::span<const Quat<T>> q_hat) {
  detail::check_same_size(q, q_hat, "position_distance");
  const auto a = forward_kinematics(skeleton, q);
  const auto b = forward_kinematics(skeleton, q_hat);
  std::vector<T> d;
  d.reserve(3 * a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    d.push_back(a[j].x - b[j].x);
    d.push_back(a[j].y - b[j].y);
    d.push_back(a[j].z - b[j].z);
  }
  return dot(std::span<const T>(d), std::span<const T>(d));
}

// Reconstruction loss for one frame: rotation term plus FK position term.
template <class T>
T reconstruction_loss(const Skeleton& skeleton, std::span<const Quat<T>> q, std::span<const Quat<T>> q_hat) {
  return quaternion_distance(q, q_hat) + position_distance(skeleton, q, q_hat);
}

// Mean of the per-frame reconstruction loss over a sequence.
inline double reconstruction_loss(const Skeleton& skeleton, const std::vector<std::vector<Quaternion>>& q,
                                  const std::vector<std::vector<Quaternion>>& q_hat) {
  if (q.size() != q_hat.size()) throw DimensionError("reconstruction_loss: frame counts differ");
  if (q.empty()) throw UndefinedMean("reconstruction_loss: no frames");
  double total = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    total += reconstruction_loss<double>(skeleton, q[t], q_hat[t]);
  }
  return total / static_cast<double>(q.size());
}

// Σ_j max(0, |ε_y(q_j)| - α)², in degrees².
template <class T>
T rotation_constraint_loss(std::span<const Quat<T>> q, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("rotation_constraint_loss: alpha must be positive");
  std::vector<T> excess;
  for (const auto& r : q) {
    const T a = abs(euler_y(r));
    if (value(a) > alpha) excess.push_back(a - alpha);
  }
  if (excess.empty()) return T(0.0);
  return dot(std::span<const T>(excess), std::span<const T>(excess));
}

template <class T>
T gate_regularizer(std::span<const T> w) {
  return dot(w, w);
}

// Per-term breakdown of a composite objective; unused terms stay zero.
template <class T>
struct LossTerms {
  T total = T(0.0);
  T rec = T(0.0);
  T rot = T(0.0);
  T sem = T(0.0);
  T rep = T(0.0);
  T att = T(0.0);
  T reg = T(0.0);
};

inline std::vector<std::string> loss_term_names() { return {"total", "rec", "rot", "sem", "rep", "att", "reg"}; }

template <class T>
std::vector<double> loss_term_values(const LossTerms<T>& t) {
  return {value(t.total), value(t.rec), value(t.rot), value(t.sem), value(t.rep), value(t.att), value(t.reg)};
}

// Skeleton stage, one frame:
//   [same character] L_rec(q_cp, q^γ) + μ L_rot(q^γ) + ν L_sem.
// Source positions use the source skeleton with the copied rotations;
// target positions use the target skeleton with q^γ.
template <class T>
LossTerms<T> stage1_objective(const Skeleton& source, const Skeleton& target, std::span<const Quaternion> q_cp,
                              std::span<const Quat<T>> q_gamma, bool same_character, const LossWeights& w) {
  const auto cp = detail::lift_quats<double, T>(q_cp);
  detail::check_same_size(std::span<const Quat<T>>(cp), q_gamma, "stage1_objective");
  LossTerms<T> out;
  if (same_character) out.rec = reconstruction_loss(target, std::span<const Quat<T>>(cp), q_gamma);
  out.rot = rotation_constraint_loss(q_gamma, w.alpha);
  const auto pa = forward_kinematics<double>(source, q_cp);
  const auto pa_t = std::vector<Vec3<T>>(pa.begin(), pa.end());
  const auto pb = forward_kinematics(target, q_gamma);
  out.sem = semantics_loss<T>(std::span<const Vec3<T>>(pa_t), source.height(), std::span<const Vec3<T>>(pb),
                              target.height());
  out.total = out.rec + out.rot * w.mu + out.sem * w.nu;
  return out;
}

// ---------------------------------------------------------------------------
// Geometry context shared by the two shape-stage objectives.

struct FieldSettings {
  double spacing = 0.02;                // × height
  double repulsive_truncation = 0.2;    // × height
  double attractive_truncation = 0.1;   // × height

  void validate() const {
    if (!(spacing > 0.0) || !(repulsive_truncation > 0.0) || !(attractive_truncation > 0.0)) {
      throw ConfigError("field spacing and truncations must be positive");
    }
  }
};

// Target character with part labels, vertex sets and the body surface
// extracted once.
struct GeometryScene {
  const Skeleton* skeleton = nullptr;
  const SkinnedMesh* mesh = nullptr;
  VertexSets sets;
  BodySurface body;

  GeometryScene() = default;
  GeometryScene(const Skeleton& s, const SkinnedMesh& m)
      : skeleton(&s), mesh(&m), sets(extract_vertex_sets(m)), body(extract_body_surface(m)) {
    m.validate(s);
    if (body.triangles.empty()) throw InvalidRig("mesh has no body surface");
    require_watertight(body.triangles, body.vertex_ids.size());
    for (std::size_t l = 0; l < 4; ++l) {
      if (sets.limbs[l].empty()) {
        throw InvalidRig(std::string("no vertices on ") + std::string(part_name(kLimbs[l])));
      }
    }
  }

  // Body vertices posed by `rotations` with the root at the origin.
  std::vector<Vec3d> posed_body(std::span<const Quaternion> rotations) const {
    const auto tr = skinning_transforms<double>(*skeleton, rotations, Vec3d{});
    return skin_vertices(*mesh, tr, std::span<const int>(body.vertex_ids));
  }
};

// Distance fields keyed by the exact bytes of the posed body vertices, so a
// field is rebuilt whenever the body moves and reused otherwise.
class FieldCache {
 public:
  explicit FieldCache(FieldSettings settings = {}, std::size_t capacity = 4096)
      : settings_(settings), capacity_(capacity) {
    settings_.validate();
  }

  const FieldSettings& settings() const { return settings_; }

  std::shared_ptr<const DistanceFields> get(const GeometryScene& scene, std::span<const Quaternion> rotations) {
    const auto verts = scene.posed_body(rotations);
    const std::uint64_t key = hash(verts, scene.skeleton->height());
    {
      std::lock_guard lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end() && it->second.first == verts) return it->second.second;
    }
    const double h = scene.skeleton->height();
    auto f = std::make_shared<const DistanceFields>(
        voxelize_both(verts, scene.body.triangles, settings_.spacing * h, settings_.repulsive_truncation * h,
                      settings_.attractive_truncation * h));
    std::lock_guard lock(mutex_);
    if (cache_.size() >= capacity_) cache_.clear();
    cache_[key] = {verts, f};
    return f;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  static std::uint64_t hash(const std::vector<Vec3d>& v, double h) {
    std::uint64_t x = 1469598103934665603ULL;
    auto mix = [&](double d) {
      unsigned char b[sizeof(double)];
      std::memcpy(b, &d, sizeof d);
      for (unsigned char c : b) {
        x ^= c;
        x *= 1099511628211ULL;
      }
    };
    mix(h);
    for (const auto& p : v) {
      mix(p.x);
      mix(p.y);
      mix(p.z);
    }
    return x;
  }

  FieldSettings settings_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, std::pair<std::vector<Vec3d>, std::shared_ptr<const DistanceFields>>> cache_;
};

// Posed limb and hand vertices for a rotation set (root at the origin).
template <class T>
struct PosedSets {
  std::array<std::vector<Vec3<T>>, 4> limbs;
  std::vector<Vec3<T>> hands;
};

template <class T>
PosedSets<T> pose_vertex_sets(const GeometryScene& scene, std::span<const Quat<T>> rotations, bool with_hands) {
  const auto tr = skinning_transforms<T>(*scene.skeleton, rotations, Vec3<T>(T(0.0), T(0.0), T(0.0)));
  PosedSets<T> out;
  for (std::size_t l = 0; l < 4; ++l) {
    out.limbs[l] = skin_vertices(*scene.mesh, tr, std::span<const int>(scene.sets.limbs[l]));
  }
  if (with_hands) out.hands = skin_vertices(*scene.mesh, tr, std::span<const int>(scene.sets.hands));
  return out;
}

// Limb networks, one frame:
//   L_rec(q^γ, q^{γ+φ}) + μ L_rot(q^{γ+φ}) + κ Σ_i L_rep(limb i).
// `fields` must be built from the body posed by q^γ.
template <class T>
LossTerms<T> stage2_geometry_objective(const GeometryScene& scene, const DistanceFields* fields,
                                       std::span<const Quaternion> q_gamma, std::span<const Quat<T>> q_geo,
                                       const LossWeights& w) {
  if (fields == nullptr) throw ConfigError("stage2_geometry_objective: distance fields missing");
  const auto qg = detail::lift_quats<double, T>(q_gamma);
  detail::check_same_size(std::span<const Quat<T>>(qg), q_geo, "stage2_geometry_objective");
  LossTerms<T> out;
  out.rec = reconstruction_loss(*scene.skeleton, std::span<const Quat<T>>(qg), q_geo);
  out.rot = rotation_constraint_loss(q_geo, w.alpha);
  const auto posed = pose_vertex_sets(scene, q_geo, false);
  std::vector<T> reps;
  for (std::size_t l = 0; l < 4; ++l) {
    reps.push_back(repulsive_loss(fields->repulsive, std::span<const Vec3<T>>(posed.limbs[l])));
  }
  out.rep = sum(std::span<const T>(reps));
  out.total = out.rec + out.rot * w.mu + out.rep * w.kappa;
  return out;
}

// Per-joint interpolation between the two network outputs.
template <class T>
std::vector<Quat<T>> blend_rotations(std::span<const Quaternion> q_gamma, std::span<const Quaternion> q_geo,
                                     std::span<const T> w) {
  if (q_gamma.size() != q_geo.size() || w.size() != q_gamma.size()) {
    throw DimensionError("blend_rotations: sizes differ");
  }
  std::vector<Quat<T>> out(q_gamma.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const Quat<T> a(T(q_gamma[j].w), T(q_gamma[j].x), T(q_gamma[j].y), T(q_gamma[j].z));
    const Quat<T> b(T(q_geo[j].w), T(q_geo[j].x), T(q_geo[j].y), T(q_geo[j].z));
    out[j] = nlerp(a, b, w[j]);
  }
  return out;
}

// Gate, one frame, with q_B = nlerp(q^γ, q^{γ+φ}, w):
//   L_rec(q^{γ+φ}, q_B) + μ L_rot(q_B) + κ L_rep + ι L_att + τ ||w||².
// L_rep runs over all limb vertices at once; L_att over the hand vertices.
template <class T>
LossTerms<T> stage2_gate_objective(const GeometryScene& scene, const DistanceFields* fields,
                                   std::span<const Quaternion> q_gamma, std::span<const Quaternion> q_geo,
                                   std::span<const T> w, const LossWeights& lw) {
  if (fields == nullptr) throw ConfigError("stage2_gate_objective: distance fields missing");
  const auto qb = blend_rotations(q_gamma, q_geo, w);
  const auto qgeo = detail::lift_quats<double, T>(q_geo);
  LossTerms<T> out;
  out.rec = reconstruction_loss(*scene.skeleton, std::span<const Quat<T>>(qgeo), std::span<const Quat<T>>(qb));
  out.rot = rotation_constraint_loss(std::span<const Quat<T>>(qb), lw.alpha);
  const auto posed = pose_vertex_sets(scene, std::span<const Quat<T>>(qb), true);
  std::vector<Vec3<T>> limbs;
  for (const auto& l : posed.limbs) limbs.insert(limbs.end(), l.begin(), l.end());
  out.rep = repulsive_loss(fields->repulsive, std::span<const Vec3<T>>(limbs));
  if (!posed.hands.empty()) out.att = attractive_loss(fields->attractive, std::span<const Vec3<T>>(posed.hands));
  out.reg = gate_regularizer(w);
  out.total = out.rec + out.rot * lw.mu + out.rep * lw.kappa + out.att * lw.iota + out.reg * lw.tau;
  return out;
}

}  // namespace skinret
