#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape is an append-only list of nodes. Each node stores the ids of its
// parents and the local partial derivative with respect to each parent, so
// n-ary nodes (dot products, sums, quaternion normalization) cost one node
// instead of n. Nodes are appended in evaluation order, which is already a
// topological order; backward() walks the list once in reverse.
//
// Var is a value plus a (tape, id) handle. A Var without a tape is a
// constant: it takes part in arithmetic but records nothing. All numeric
// code in the library is templated over the scalar type and instantiated
// with both double and Var.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "skinret/errors.hpp"

namespace skinret {

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kSqrt,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kRelu,
  kAbs,
  kMax,
  kMin,
  kClamp,
  kAtan2,
  kDot,
  kSum,
  kQuatNormalize,
  kNorm,
  kSample,
  kCustom,
};

class Tape;

struct Var {
  double val = 0.0;
  std::int32_t id = -1;
  Tape* tape = nullptr;

  Var() = default;
  // Implicit so that generic code can write `T x = 0.0;`.
  Var(double v) : val(v) {}  // NOLINT
  Var(double v, std::int32_t node, Tape* t) : val(v), id(node), tape(t) {}

  bool is_constant() const { return tape == nullptr; }
};

class Gradients;

class Tape {
 public:
  Tape() { offsets_.push_back(0); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(double value) { return push(OpKind::kLeaf, value); }

  std::vector<Var> variables(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(variable(v));
    return out;
  }

  // Records a node whose value is `value` and whose partial derivative with
  // respect to inputs[i] is partials[i]. Constant inputs are dropped.
  Var record(OpKind kind, double value, std::span<const Var> inputs,
             std::span<const double> partials) {
    if (inputs.size() != partials.size()) {
      throw ShapeError("record: inputs and partials differ in length");
    }
    for (const Var& in : inputs) {
      if (in.tape != nullptr && in.tape != this) {
        throw TapeError("record: input belongs to a different tape");
      }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].tape != nullptr) {
        parents_.push_back(inputs[i].id);
        partials_.push_back(partials[i]);
      }
    }
    return push(kind, value);
  }

  std::size_t size() const { return kinds_.size(); }
  OpKind kind(std::int32_t id) const { return kinds_.at(static_cast<std::size_t>(id)); }

  Gradients backward(const Var& loss) const;

  // Fast path used by the helpers below: pairs of (input, partial), constants
  // already filtered by the caller.
  Var push_pairs(OpKind kind, double value, const Var* inputs,
                 const double* partials, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (inputs[i].tape != nullptr) {
        parents_.push_back(inputs[i].id);
        partials_.push_back(partials[i]);
      }
    }
    return push(kind, value);
  }

 private:
  Var push(OpKind kind, double value) {
    const auto id = static_cast<std::int32_t>(kinds_.size());
    kinds_.push_back(kind);
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return Var(value, id, this);
  }

  friend class Gradients;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::int32_t> parents_;
  std::vector<double> partials_;
  std::vector<OpKind> kinds_;
};

// Result of a backward pass: d(loss)/d(node) for every node of one tape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<double> adjoint)
      : tape_(tape), adjoint_(std::move(adjoint)) {}

  double operator[](const Var& v) const {
    if (v.tape == nullptr) return 0.0;
    if (v.tape != tape_) throw TapeError("gradient query on a foreign tape");
    return adjoint_[static_cast<std::size_t>(v.id)];
  }

  std::vector<double> of(std::span<const Var> vars) const {
    std::vector<double> out(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) out[i] = (*this)[vars[i]];
    return out;
  }

 private:
  const Tape* tape_ = nullptr;
  std::vector<double> adjoint_;
};

inline Gradients Tape::backward(const Var& loss) const {
  std::vector<double> adj(kinds_.size(), 0.0);
  if (loss.tape == nullptr) return Gradients(this, std::move(adj));
  if (loss.tape != this) throw TapeError("backward: loss recorded on a different tape");
  adj[static_cast<std::size_t>(loss.id)] = 1.0;
  for (std::size_t n = static_cast<std::size_t>(loss.id) + 1; n-- > 0;) {
    const double a = adj[n];
    if (a == 0.0) continue;
    for (std::uint32_t k = offsets_[n]; k < offsets_[n + 1]; ++k) {
      adj[static_cast<std::size_t>(parents_[k])] += partials_[k] * a;
    }
  }
  return Gradients(this, std::move(adj));
}

inline Gradients backward(const Var& loss) {
  if (loss.tape == nullptr) return Gradients();
  return loss.tape->backward(loss);
}

// Entry point for callers holding a shape-tagged buffer: only a single
// element (a scalar loss) can be differentiated.
inline Gradients backward(std::span<const Var> loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + std::to_string(loss.size()) +
                     " elements");
  }
  return backward(loss[0]);
}

namespace detail {

inline Tape* common_tape(const Var& a, const Var& b) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw TapeError("operation mixes variables from different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

inline Var unary(OpKind kind, const Var& a, double value, double da) {
  if (a.tape == nullptr) return Var(value);
  return a.tape->push_pairs(kind, value, &a, &da, 1);
}

inline Var binary(OpKind kind, const Var& a, const Var& b, double value, double da,
                  double db) {
  Tape* t = common_tape(a, b);
  if (t == nullptr) return Var(value);
  const Var in[2] = {a, b};
  const double d[2] = {da, db};
  return t->push_pairs(kind, value, in, d, 2);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic on Var.

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(OpKind::kAdd, a, b, a.val + b.val, 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(OpKind::kSub, a, b, a.val - b.val, 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(OpKind::kMul, a, b, a.val * b.val, b.val, a.val);
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.val / b.val;
  return detail::binary(OpKind::kDiv, a, b, q, 1.0 / b.val, -q / b.val);
}
inline Var operator-(const Var& a) { return detail::unary(OpKind::kNeg, a, -a.val, -1.0); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

// Comparisons look at values only; they are used for branch selection.
inline bool operator<(const Var& a, const Var& b) { return a.val < b.val; }
inline bool operator>(const Var& a, const Var& b) { return a.val > b.val; }
inline bool operator<=(const Var& a, const Var& b) { return a.val <= b.val; }
inline bool operator>=(const Var& a, const Var& b) { return a.val >= b.val; }

// ---------------------------------------------------------------------------
// Elementary functions, with matching double overloads so generic code can
// call them unqualified.

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.val; }

inline double sqrt(double x) { return std::sqrt(x); }
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double abs(double x) { return std::abs(x); }
inline double atan2(double y, double x) { return std::atan2(y, x); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// max/min/clamp take the active branch at equality (first argument for max
// and min, the bound for clamp), so the subgradient at the kink is that of
// the active side.
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double clamp(double x, double lo, double hi) { return x <= lo ? lo : (x >= hi ? hi : x); }

inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val);
  return detail::unary(OpKind::kSqrt, a, s, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.val);
  return detail::unary(OpKind::kExp, a, e, e);
}
inline Var log(const Var& a) { return detail::unary(OpKind::kLog, a, std::log(a.val), 1.0 / a.val); }
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.val);
  return detail::unary(OpKind::kTanh, a, t, 1.0 - t * t);
}
inline Var sigmoid(const Var& a) {
  const double s = sigmoid(a.val);
  return detail::unary(OpKind::kSigmoid, a, s, s * (1.0 - s));
}
inline Var relu(const Var& a) {
  return detail::unary(OpKind::kRelu, a, relu(a.val), a.val > 0.0 ? 1.0 : 0.0);
}
inline Var abs(const Var& a) {
  return detail::unary(OpKind::kAbs, a, std::abs(a.val), a.val >= 0.0 ? 1.0 : -1.0);
}
inline Var max(const Var& a, const Var& b) {
  const bool first = a.val >= b.val;
  return detail::binary(OpKind::kMax, a, b, first ? a.val : b.val, first ? 1.0 : 0.0,
                        first ? 0.0 : 1.0);
}
inline Var min(const Var& a, const Var& b) {
  const bool first = a.val <= b.val;
  return detail::binary(OpKind::kMin, a, b, first ? a.val : b.val, first ? 1.0 : 0.0,
                        first ? 0.0 : 1.0);
}
inline Var clamp(const Var& x, double lo, double hi) {
  if (x.val <= lo) return Var(lo);
  if (x.val >= hi) return Var(hi);
  return detail::unary(OpKind::kClamp, x, x.val, 1.0);
}
inline Var atan2(const Var& y, const Var& x) {
  const double r2 = x.val * x.val + y.val * y.val;
  const double dy = r2 > 0.0 ? x.val / r2 : 0.0;
  const double dx = r2 > 0.0 ? -y.val / r2 : 0.0;
  return detail::binary(OpKind::kAtan2, y, x, std::atan2(y.val, x.val), dy, dx);
}

// ---------------------------------------------------------------------------
// n-ary reductions.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sum(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x;
  return s;
}

namespace detail {

// Shared scratch buffers for n-ary recording.
struct NaryScratch {
  std::vector<Var> in;
  std::vector<double> d;
  void clear() {
    in.clear();
    d.clear();
  }
  void add(const Var& v, double partial) {
    if (v.tape != nullptr) {
      in.push_back(v);
      d.push_back(partial);
    }
  }
  Var emit(OpKind kind, double value) {
    Tape* t = nullptr;
    for (const Var& v : in) {
      if (t && v.tape != t) throw TapeError("operation mixes variables from different tapes");
      t = v.tape;
    }
    if (t == nullptr) return Var(value);
    return t->push_pairs(kind, value, in.data(), d.data(), in.size());
  }
};

inline NaryScratch& scratch() {
  thread_local NaryScratch s;
  return s;
}

}  // namespace detail

// a·b + bias, recorded as a single node.
inline Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias = Var(0.0)) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  auto& s = detail::scratch();
  s.clear();
  double v = bias.val;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v += a[i].val * b[i].val;
    s.add(a[i], b[i].val);
    s.add(b[i], a[i].val);
  }
  s.add(bias, 1.0);
  return s.emit(OpKind::kDot, v);
}

inline Var dot(std::span<const Var> a, std::span<const double> b, const Var& bias = Var(0.0)) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  auto& s = detail::scratch();
  s.clear();
  double v = bias.val;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v += a[i].val * b[i];
    s.add(a[i], b[i]);
  }
  s.add(bias, 1.0);
  return s.emit(OpKind::kDot, v);
}

inline Var sum(std::span<const Var> a) {
  auto& s = detail::scratch();
  s.clear();
  double v = 0.0;
  for (const Var& x : a) {
    v += x.val;
    s.add(x, 1.0);
  }
  return s.emit(OpKind::kSum, v);
}

template <class T>
T mean(std::span<const T> a) {
  if (a.empty()) throw UndefinedMean("mean of an empty set");
  return sum(a) / static_cast<double>(a.size());
}

// Numerically stable softmax.
template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (const T& l : logits) m = std::max(m, value(l));
  std::vector<T> e;
  e.reserve(logits.size());
  for (const T& l : logits) e.push_back(exp(l - m));
  const T z = sum(std::span<const T>(e));
  for (T& x : e) x = x / z;
  return e;
}

template <class T>
inline constexpr bool is_var_v = std::is_same_v<std::remove_cvref_t<T>, Var>;

template <class T>
concept Scalar = std::is_same_v<T, double> || std::is_same_v<T, Var>;

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.

struct GradcheckOptions {
  double eps = 1e-6;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Check at most this many coordinates (chosen at random); 0 checks all.
  std::size_t max_coords = 0;
  std::uint64_t seed = 7;
  // Flag coordinates where the eps and eps/2 differences disagree, which
  // means the point sits within eps of a kink.
  bool detect_kinks = false;
  double kink_tolerance = 1e-4;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
  bool kink_detected = false;
};

// `f` must be callable with std::span<const double> (returning double) and
// with std::span<const Var> (returning Var).
template <class F>
GradcheckResult gradcheck(F&& f, std::span<const double> point, const GradcheckOptions& opt = {}) {
  Tape tape;
  std::vector<Var> vars = tape.variables(point);
  const Var out = f(std::span<const Var>(vars));
  const Gradients g = tape.backward(out);

  std::vector<std::size_t> coords(point.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (opt.max_coords != 0 && opt.max_coords < coords.size()) {
    std::mt19937_64 rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(opt.max_coords);
  }

  std::vector<double> x(point.begin(), point.end());
  auto central = [&](std::size_t i, double h) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(std::span<const double>(x));
    x[i] = x0 - h;
    const double fm = f(std::span<const double>(x));
    x[i] = x0;
    return (fp - fm) / (2.0 * h);
  };

  GradcheckResult r;
  for (std::size_t i : coords) {
    const double a = g[vars[i]];
    const double n = central(i, opt.eps);
    if (opt.detect_kinks) {
      const double n2 = central(i, 0.5 * opt.eps);
      const double scale = std::max({std::abs(n), std::abs(n2), opt.floor});
      if (std::abs(n - n2) / scale > opt.kink_tolerance) r.kink_detected = true;
    }
    const double denom = std::max({std::abs(a), std::abs(n), opt.floor});
    const double err = std::abs(a - n) / denom;
    if (err >= r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.analytic = a;
      r.numeric = n;
    }
    ++r.coords_checked;
  }
  return r;
}

}  // namespace skinret
