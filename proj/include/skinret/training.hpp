#pragma once

// Adam, the two-stage training procedure and direct residual optimization.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skinret/autodiff.hpp"
#include "skinret/errors.hpp"
#include "skinret/networks.hpp"
#include "skinret/objectives.hpp"
#include "skinret/pipeline.hpp"

namespace skinret {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig c = {}) : c_(c) {}

  // One bias-corrected update of `params` in place.
  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) {
      throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                           std::to_string(grads.size()) + " gradients");
    }
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    } else if (m_.size() != params.size()) {
      throw DimensionError("adam: parameter count changed between steps");
    }
    ++t_;
    const double b1t = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double b2t = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * grads[i];
      v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * grads[i] * grads[i];
      const double mh = m_[i] / b1t;
      const double vh = v_[i] / b2t;
      params[i] -= c_.learning_rate * mh / (std::sqrt(vh) + c_.eps);
    }
  }

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return c_; }

 private:
  AdamConfig c_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  AdamConfig adam;
  std::size_t iterations = 1000;         // stage 1
  std::size_t stage2_iterations = 1000;  // per sub-stage when sequential
  std::size_t batch = 8;
  std::size_t window = 60;
  double self_probability = 0.5;
  bool joint_stage2 = false;
  LossWeights weights;
  FieldSettings fields;
  SkeletonNetConfig skeleton_net;
  ShapeNetConfig shape_net;
  GateNetConfig gate_net;

  void validate() const {
    if (iterations == 0 || stage2_iterations == 0) throw ConfigError("iteration counts must be positive");
    if (batch == 0 || window == 0) throw ConfigError("batch and window must be positive");
    if (!(self_probability >= 0.0 && self_probability <= 1.0)) {
      throw ConfigError("self_probability must be in [0, 1]");
    }
    if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw ConfigError("adam betas must be in [0, 1)");
    }
    weights.validate();
    fields.validate();
  }
};

// Characters sharing one joint topology and a pool of motions (local
// rotations are character independent).
struct TrainingData {
  std::vector<Character> characters;
  std::vector<MotionSequence> motions;

  void validate(bool need_meshes) const {
    if (characters.empty()) throw ConfigError("training needs at least one character");
    if (motions.empty()) throw ConfigError("training needs at least one motion");
    const auto& names = characters.front().skeleton.joint_names();
    for (const auto& c : characters) {
      if (c.skeleton.joint_names() != names) throw ConfigError("characters do not share a joint topology");
      if (need_meshes && !c.mesh) throw ConfigError("character '" + c.name + "' has no mesh");
    }
    for (const auto& m : motions) m.validate(characters.front().skeleton);
  }
};

struct Sample {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t motion = 0;
  std::vector<std::size_t> frames;
};

// Deterministic sampler: a random source, a target equal to the source with
// probability p (otherwise a different character when one exists), a random
// motion and `batch` frames from a random window of it.
class Sampler {
 public:
  Sampler(const TrainingData& d, std::uint64_t seed, double p_self, std::size_t batch, std::size_t window)
      : d_(d), rng_(seed), p_self_(p_self), batch_(batch), window_(window) {}

  Sample next() {
    Sample s;
    const std::size_t nc = d_.characters.size();
    s.source = pick(nc);
    const bool self = nc == 1 || unit() < p_self_;
    if (self) {
      s.target = s.source;
    } else {
      s.target = pick(nc - 1);
      if (s.target >= s.source) ++s.target;
    }
    s.motion = pick(d_.motions.size());
    const std::size_t len = d_.motions[s.motion].num_frames();
    const std::size_t w = std::min(window_, len);
    const std::size_t start = pick(len - w + 1);
    for (std::size_t b = 0; b < batch_; ++b) s.frames.push_back(start + pick(w));
    return s;
  }

 private:
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  const TrainingData& d_;
  std::mt19937_64 rng_;
  double p_self_;
  std::size_t batch_, window_;
};

// Per-iteration mean loss terms (iteration, total, rec, rot, sem, rep, att, reg).
struct LossCurve {
  std::string stage;
  std::vector<std::vector<double>> rows;

  void add(std::size_t iteration, const std::vector<double>& terms) {
    std::vector<double> r{static_cast<double>(iteration)};
    r.insert(r.end(), terms.begin(), terms.end());
    rows.push_back(std::move(r));
  }
  std::vector<double> totals() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[1]);
    return out;
  }
};

namespace detail {

inline std::vector<double> gradient_of(const Gradients& g, const std::vector<Var>& leaves) {
  std::vector<double> out(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) out[i] = g[leaves[i]];
  return out;
}

template <class Net>
void adam_update(Net& net, Adam& opt, const std::vector<double>& grads) {
  std::vector<double> flat = flatten(net);
  opt.step(flat, grads);
  unflatten(net, std::span<const double>(flat));
}

inline void check_finite(double loss, const std::string& stage, std::size_t it) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(stage + ": loss became non-finite at iteration " + std::to_string(it));
  }
}

template <class T>
std::vector<Quat<T>> compose_residual(std::span<const Quat<T>> delta, std::span<const Quat<T>> q) {
  std::vector<Quat<T>> out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = hamilton_product(delta[j], q[j]);
  return out;
}

template <class T>
void accumulate(LossTerms<T>& acc, const LossTerms<T>& x, double scale) {
  acc.total = acc.total + x.total * scale;
  acc.rec = acc.rec + x.rec * scale;
  acc.rot = acc.rot + x.rot * scale;
  acc.sem = acc.sem + x.sem * scale;
  acc.rep = acc.rep + x.rep * scale;
  acc.att = acc.att + x.att * scale;
  acc.reg = acc.reg + x.reg * scale;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: skeleton residual network.

struct Stage1Result {
  SkeletonNet<double> net;
  LossCurve curve;
};

// Mean stage-1 objective of a batch for network parameters on `tape`.
template <class T>
LossTerms<T> stage1_batch(const SkeletonNet<T>& net, const TrainingData& d, const Sample& s, const LossWeights& w) {
  const auto& src = d.characters[s.source].skeleton;
  const auto& tgt = d.characters[s.target].skeleton;
  const bool same = s.source == s.target;
  LossTerms<T> acc;
  const double scale = 1.0 / static_cast<double>(s.frames.size());
  for (std::size_t f : s.frames) {
    const auto& q = d.motions[s.motion].frames[f].rotations;
    const auto qc = to_scalar<T>(std::span<const Quaternion>(q));
    const auto dq = net.forward(src, tgt, std::span<const Quat<T>>(qc));
    const auto qg = detail::compose_residual(std::span<const Quat<T>>(dq), std::span<const Quat<T>>(qc));
    detail::accumulate(acc, stage1_objective<T>(src, tgt, q, std::span<const Quat<T>>(qg), same, w), scale);
  }
  return acc;
}

inline Stage1Result train_stage1(const TrainConfig& cfg, const TrainingData& d,
                                 const std::function<void(std::size_t, const std::vector<double>&)>& log = {}) {
  cfg.validate();
  d.validate(false);
  SkeletonNetConfig nc = cfg.skeleton_net;
  nc.joints = d.characters.front().skeleton.size();
  Stage1Result r{SkeletonNet<double>(nc), {"stage1", {}}};
  r.net.init(cfg.seed);
  Adam opt(cfg.adam);
  Sampler sampler(d, cfg.seed ^ 0x5eedULL, cfg.self_probability, cfg.batch, cfg.window);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Sample s = sampler.next();
    Tape tape;
    std::vector<Var> leaves;
    const auto nv = lift<SkeletonNet>(r.net, tape, &leaves);
    const auto terms = stage1_batch(nv, d, s, cfg.weights);
    const auto vals = loss_term_values(terms);
    detail::check_finite(vals[0], "stage1", it);
    const auto g = tape.backward(terms.total);
    detail::adam_update(r.net, opt, detail::gradient_of(g, leaves));
    r.curve.add(it, vals);
    if (log) log(it, vals);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2: limb networks and gate with the skeleton network frozen.

struct Stage2Result {
  ShapeNets<double> shape;
  GateNet<double> gate;
  LossCurve geometry_curve;
  LossCurve gate_curve;
  std::uint64_t skeleton_checksum_before = 0;
  std::uint64_t skeleton_checksum_after = 0;
};

class Stage2Trainer {
 public:
  Stage2Trainer(const TrainConfig& cfg, const TrainingData& d, SkeletonNet<double>& skeleton)
      : cfg_(cfg), d_(d), skeleton_(skeleton), cache_(cfg.fields) {
    cfg.validate();
    d.validate(true);
    for (const auto& c : d.characters) scenes_.emplace_back(c.skeleton, *c.mesh);
    ShapeNetConfig sc = cfg.shape_net;
    sc.joints = d.characters.front().skeleton.size();
    GateNetConfig gc = cfg.gate_net;
    gc.joints = sc.joints;
    shape_ = ShapeNets<double>(sc, limb_joint_chains(d.characters.front().skeleton));
    shape_.init(cfg.seed + 1);
    gate_ = GateNet<double>(gc);
    gate_.init(cfg.seed + 2);
  }

  ShapeNets<double>& shape() { return shape_; }
  GateNet<double>& gate() { return gate_; }

  std::vector<Quaternion> q_sem(const Sample& s, std::size_t frame) const {
    const auto& q = d_.motions[s.motion].frames[frame].rotations;
    NetworkSet nets;
    nets.skeleton = skeleton_;
    return semantics_pose(&nets, d_.characters[s.source].skeleton, d_.characters[s.target].skeleton, q);
  }

  template <class T>
  LossTerms<T> geometry_batch(const ShapeNets<T>& net, const Sample& s) {
    const Character& tgt = d_.characters[s.target];
    LossTerms<T> acc;
    const double scale = 1.0 / static_cast<double>(s.frames.size());
    for (std::size_t f : s.frames) {
      const auto qs = q_sem(s, f);
      const auto fields = cache_.get(scenes_[s.target], qs);
      const auto qc = to_scalar<T>(std::span<const Quaternion>(qs));
      const auto dq = net.forward(tgt.shape, tgt.skeleton.height(), std::span<const Quat<T>>(qc));
      const auto qg = detail::compose_residual(std::span<const Quat<T>>(dq), std::span<const Quat<T>>(qc));
      detail::accumulate(acc,
                         stage2_geometry_objective<T>(scenes_[s.target], fields.get(), qs,
                                                      std::span<const Quat<T>>(qg), cfg_.weights),
                         scale);
    }
    return acc;
  }

  template <class T>
  LossTerms<T> gate_batch(const GateNet<T>& net, const Sample& s) {
    const Character& tgt = d_.characters[s.target];
    NetworkSet nets;
    nets.shape = shape_;
    LossTerms<T> acc;
    const double scale = 1.0 / static_cast<double>(s.frames.size());
    for (std::size_t f : s.frames) {
      const auto qs = q_sem(s, f);
      const auto qg = geometry_pose(&nets, tgt, qs);
      const auto fields = cache_.get(scenes_[s.target], qs);
      const auto qc = to_scalar<T>(std::span<const Quaternion>(qs));
      const auto w = net.forward(tgt.skeleton, tgt.shape, std::span<const Quat<T>>(qc));
      detail::accumulate(acc,
                         stage2_gate_objective<T>(scenes_[s.target], fields.get(), qs, qg,
                                                  std::span<const T>(w), cfg_.weights),
                         scale);
    }
    return acc;
  }

  std::vector<double> geometry_step(const Sample& s, Adam& opt, std::size_t it) {
    Tape tape;
    std::vector<Var> leaves;
    const auto nv = lift<ShapeNets>(shape_, tape, &leaves);
    const auto terms = geometry_batch(nv, s);
    const auto vals = loss_term_values(terms);
    detail::check_finite(vals[0], "stage2-geometry", it);
    const auto g = tape.backward(terms.total);
    detail::adam_update(shape_, opt, detail::gradient_of(g, leaves));
    return vals;
  }

  std::vector<double> gate_step(const Sample& s, Adam& opt, std::size_t it) {
    Tape tape;
    std::vector<Var> leaves;
    const auto nv = lift<GateNet>(gate_, tape, &leaves);
    const auto terms = gate_batch(nv, s);
    const auto vals = loss_term_values(terms);
    detail::check_finite(vals[0], "stage2-gate", it);
    const auto g = tape.backward(terms.total);
    detail::adam_update(gate_, opt, detail::gradient_of(g, leaves));
    return vals;
  }

 private:
  const TrainConfig& cfg_;
  const TrainingData& d_;
  SkeletonNet<double>& skeleton_;
  FieldCache cache_;
  std::vector<GeometryScene> scenes_;
  ShapeNets<double> shape_;
  GateNet<double> gate_;
};

// Sequential by default: the limb networks first, then the gate with the
// limb networks fixed. With joint_stage2 both update every iteration.
inline Stage2Result train_stage2(const TrainConfig& cfg, const TrainingData& d, SkeletonNet<double> skeleton,
                                 const std::function<void(const std::string&, std::size_t,
                                                          const std::vector<double>&)>& log = {}) {
  Stage2Result r;
  r.skeleton_checksum_before = checksum(skeleton);
  Stage2Trainer trainer(cfg, d, skeleton);
  Adam geo_opt(cfg.adam), gate_opt(cfg.adam);
  Sampler geo_sampler(d, cfg.seed ^ 0x6e0ULL, cfg.self_probability, cfg.batch, cfg.window);
  Sampler gate_sampler(d, cfg.seed ^ 0x6a7eULL, cfg.self_probability, cfg.batch, cfg.window);
  r.geometry_curve.stage = "stage2-geometry";
  r.gate_curve.stage = "stage2-gate";
  if (cfg.joint_stage2) {
    for (std::size_t it = 0; it < cfg.stage2_iterations; ++it) {
      const auto gv = trainer.geometry_step(geo_sampler.next(), geo_opt, it);
      r.geometry_curve.add(it, gv);
      if (log) log(r.geometry_curve.stage, it, gv);
      const auto wv = trainer.gate_step(gate_sampler.next(), gate_opt, it);
      r.gate_curve.add(it, wv);
      if (log) log(r.gate_curve.stage, it, wv);
    }
  } else {
    for (std::size_t it = 0; it < cfg.stage2_iterations; ++it) {
      const auto gv = trainer.geometry_step(geo_sampler.next(), geo_opt, it);
      r.geometry_curve.add(it, gv);
      if (log) log(r.geometry_curve.stage, it, gv);
    }
    for (std::size_t it = 0; it < cfg.stage2_iterations; ++it) {
      const auto wv = trainer.gate_step(gate_sampler.next(), gate_opt, it);
      r.gate_curve.add(it, wv);
      if (log) log(r.gate_curve.stage, it, wv);
    }
  }
  r.shape = trainer.shape();
  r.gate = trainer.gate();
  r.skeleton_checksum_after = checksum(skeleton);
  if (r.skeleton_checksum_after != r.skeleton_checksum_before) {
    throw Error("stage2 modified the skeleton network");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Direct optimization: per-frame residuals (or gate weights) optimized with
// Adam in place of the networks.

enum class DirectObjective { kSemantics, kGeometry, kGate };

struct DirectOptions {
  DirectObjective objective = DirectObjective::kSemantics;
  std::size_t iterations = 300;
  AdamConfig adam{1e-2, 0.9, 0.999, 1e-8};
  LossWeights weights;
  FieldSettings fields;
};

struct DirectResult {
  // Per frame: the optimized residuals (identity for untouched joints), the
  // resulting pose, and for the gate objective the weights.
  std::vector<std::vector<Quaternion>> residuals;
  std::vector<std::vector<Quaternion>> poses;
  std::vector<std::vector<double>> w;
  LossCurve curve;  // mean over frames per iteration
};

// kSemantics: residual on every joint on top of the copied rotations,
//             minimizing the stage-1 objective (source vs target).
// kGeometry:  residual on limb-chain joints on top of q_sem (from the
//             request's networks), minimizing the limb-network objective.
// kGate:      per-joint gate logits between q_sem and q_geo, minimizing the
//             gate objective.
inline DirectResult direct_optimize(const RetargetRequest& req, const DirectOptions& opt) {
  req.validate();
  opt.weights.validate();
  if (opt.iterations == 0) throw ConfigError("direct_optimize: iterations must be positive");
  const Skeleton& src = *req.source;
  const Character& tgt = *req.target;
  const std::size_t n = src.size();
  const std::size_t frames = req.motion->num_frames();
  const bool geometric = opt.objective != DirectObjective::kSemantics;
  if (geometric && !tgt.mesh) throw ConfigError("direct_optimize: geometry objectives need a target mesh");
  std::optional<GeometryScene> scene;
  std::optional<FieldCache> cache;
  if (geometric) {
    scene.emplace(tgt.skeleton, *tgt.mesh);
    cache.emplace(opt.fields);
  }

  // Which joints carry free residuals.
  std::vector<int> free;
  if (opt.objective == DirectObjective::kGeometry) {
    for (const auto& chain : limb_joint_chains(tgt.skeleton)) free.insert(free.end(), chain.begin(), chain.end());
  } else {
    for (std::size_t j = 0; j < n; ++j) free.push_back(static_cast<int>(j));
  }
  const std::size_t dim = opt.objective == DirectObjective::kGate ? n : 4 * free.size();

  struct FrameState {
    std::vector<Quaternion> base;   // q_cp or q_sem
    std::vector<Quaternion> other;  // q_geo for the gate objective
    std::shared_ptr<const DistanceFields> fields;
    std::vector<double> params;
    Adam adam;
  };
  std::vector<FrameState> st;
  for (std::size_t t = 0; t < frames; ++t) {
    FrameState s{{}, {}, nullptr, std::vector<double>(dim, 0.0), Adam(opt.adam)};
    const auto& q = req.motion->frames[t].rotations;
    s.base = opt.objective == DirectObjective::kSemantics ? q : semantics_pose(req.networks, src, tgt.skeleton, q);
    if (opt.objective == DirectObjective::kGate) s.other = geometry_pose(req.networks, tgt, s.base);
    if (geometric) s.fields = cache->get(*scene, s.base);
    st.push_back(std::move(s));
  }
  const bool same = src.parents() == tgt.skeleton.parents() && src.offsets() == tgt.skeleton.offsets();

  auto pose_from = [&](const FrameState& s, auto params) {
    using T = typename decltype(params)::element_type;
    using S = std::remove_cv_t<T>;
    auto q = to_scalar<S>(std::span<const Quaternion>(s.base));
    for (std::size_t k = 0; k < free.size(); ++k) {
      const auto j = static_cast<std::size_t>(free[k]);
      q[j] = hamilton_product(decode_residual(params.data() + 4 * k), q[j]);
    }
    return q;
  };

  auto objective = [&](const FrameState& s, auto params) {
    using S = std::remove_cv_t<typename decltype(params)::element_type>;
    switch (opt.objective) {
      case DirectObjective::kSemantics: {
        const auto q = pose_from(s, params);
        return stage1_objective<S>(src, tgt.skeleton, s.base, std::span<const Quat<S>>(q), same, opt.weights);
      }
      case DirectObjective::kGeometry: {
        const auto q = pose_from(s, params);
        return stage2_geometry_objective<S>(*scene, s.fields.get(), s.base, std::span<const Quat<S>>(q),
                                            opt.weights);
      }
      case DirectObjective::kGate: {
        std::vector<S> w(params.size());
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = sigmoid(params[j]);
        return stage2_gate_objective<S>(*scene, s.fields.get(), s.base, s.other, std::span<const S>(w),
                                        opt.weights);
      }
    }
    throw ConfigError("direct_optimize: unknown objective");
  };

  DirectResult r;
  r.curve.stage = "direct";
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::vector<double> mean_terms(loss_term_names().size(), 0.0);
    for (auto& s : st) {
      Tape tape;
      const auto vars = tape.variables(s.params);
      const auto terms = objective(s, std::span<const Var>(vars));
      const auto vals = loss_term_values(terms);
      detail::check_finite(vals[0], "direct", it);
      for (std::size_t k = 0; k < vals.size(); ++k) mean_terms[k] += vals[k] / static_cast<double>(frames);
      const auto g = tape.backward(terms.total);
      s.adam.step(s.params, g.of(vars));
    }
    r.curve.add(it, mean_terms);
  }
  for (const auto& s : st) {
    if (opt.objective == DirectObjective::kGate) {
      std::vector<double> w(n);
      for (std::size_t j = 0; j < n; ++j) w[j] = sigmoid(s.params[j]);
      std::vector<Quaternion> q(n);
      for (std::size_t j = 0; j < n; ++j) q[j] = nlerp(s.base[j], s.other[j], w[j]);
      r.residuals.emplace_back(n, Quaternion::identity());
      r.poses.push_back(std::move(q));
      r.w.push_back(std::move(w));
      continue;
    }
    std::vector<Quaternion> res(n, Quaternion::identity());
    for (std::size_t k = 0; k < free.size(); ++k) {
      res[static_cast<std::size_t>(free[k])] = decode_residual(s.params.data() + 4 * k);
    }
    r.poses.push_back(pose_from(s, std::span<const double>(s.params)));
    r.residuals.push_back(std::move(res));
  }
  return r;
}

// Mean of the first and last `k` entries of a series.
inline std::pair<double, double> smoothed_ends(const std::vector<double>& v, std::size_t k = 50) {
  if (v.empty()) throw UndefinedMean("smoothed_ends: empty series");
  k = std::min(k, v.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    a += v[i];
    b += v[v.size() - 1 - i];
  }
  return {a / static_cast<double>(k), b / static_cast<double>(k)};
}

}  // namespace skinret
