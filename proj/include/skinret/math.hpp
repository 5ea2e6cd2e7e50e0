#pragma once

// Small fixed-size vector and quaternion types, generic over the scalar so
// the same kinematics code runs on plain doubles and on tape variables.
//
// Conventions: quaternions are stored (w, x, y, z) and act as right-handed
// rotations; the world is y-up.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "skinret/autodiff.hpp"
#include "skinret/errors.hpp"

namespace skinret {

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  Vec3() = default;
  Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}
  template <class U>
    requires(!std::is_same_v<U, T> && std::is_convertible_v<U, T>)
  explicit Vec3(const Vec3<U>& o) : x(o.x), y(o.y), z(o.z) {}

  T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend Vec3 operator*(const Vec3& a, const T& s) { return {a.x * s, a.y * s, a.z * s}; }
  friend Vec3 operator*(const T& s, const Vec3& a) { return {a.x * s, a.y * s, a.z * s}; }
  friend Vec3 operator/(const Vec3& a, const T& s) { return {a.x / s, a.y / s, a.z / s}; }
  Vec3& operator+=(const Vec3& b) { return *this = *this + b; }
  Vec3& operator-=(const Vec3& b) { return *this = *this - b; }
  friend bool operator==(const Vec3& a, const Vec3& b)
    requires std::is_same_v<T, double>
  {
    return a.x == b.x && a.y == b.y && a.z == b.z;
  }
};

using Vec3d = Vec3<double>;

template <class T>
T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
T squared_norm(const Vec3<T>& a) {
  return dot(a, a);
}

// Euclidean length. The derivative at the origin is taken as zero.
inline double norm(const Vec3d& a) { return std::sqrt(squared_norm(a)); }

inline Var norm(const Vec3<Var>& a) {
  const double n = std::sqrt(a.x.val * a.x.val + a.y.val * a.y.val + a.z.val * a.z.val);
  const Var in[3] = {a.x, a.y, a.z};
  const double d[3] = {n > 0.0 ? a.x.val / n : 0.0, n > 0.0 ? a.y.val / n : 0.0,
                       n > 0.0 ? a.z.val / n : 0.0};
  auto& s = detail::scratch();
  s.clear();
  for (int i = 0; i < 3; ++i) s.add(in[i], d[i]);
  return s.emit(OpKind::kNorm, n);
}

template <class T>
Vec3<Var> to_var(const Vec3<T>& v) {
  return {Var(value(v.x)), Var(value(v.y)), Var(value(v.z))};
}

inline Vec3d to_double(const Vec3<Var>& v) { return {v.x.val, v.y.val, v.z.val}; }
inline Vec3d to_double(const Vec3d& v) { return v; }

template <class T>
bool is_finite(const Vec3<T>& v) {
  return std::isfinite(value(v.x)) && std::isfinite(value(v.y)) && std::isfinite(value(v.z));
}

// ---------------------------------------------------------------------------

template <class T>
struct Quat {
  T w{1.0}, x{}, y{}, z{};

  Quat() = default;
  Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}

  static Quat identity() { return Quat(1.0, 0.0, 0.0, 0.0); }

  T& operator[](int i) { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }
  const T& operator[](int i) const { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }

  friend Quat operator-(const Quat& q) { return {-q.w, -q.x, -q.y, -q.z}; }
  friend bool operator==(const Quat& a, const Quat& b)
    requires std::is_same_v<T, double>
  {
    return a.w == b.w && a.x == b.x && a.y == b.y && a.z == b.z;
  }
};

using Quaternion = Quat<double>;

template <class T>
T quat_dot(const Quat<T>& a, const Quat<T>& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Quat<T> conjugate(const Quat<T>& q) {
  return {q.w, -q.x, -q.y, -q.z};
}

template <class T>
bool is_finite(const Quat<T>& q) {
  return std::isfinite(value(q.w)) && std::isfinite(value(q.x)) && std::isfinite(value(q.y)) &&
         std::isfinite(value(q.z));
}

inline Quat<Var> to_var(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }
inline Quaternion to_double(const Quat<Var>& q) { return {q.w.val, q.x.val, q.y.val, q.z.val}; }
inline Quaternion to_double(const Quaternion& q) { return q; }

// Squared-norm band inside which a quaternion is treated as already unit and
// returned unchanged. Keeps normalization idempotent bit-for-bit.
inline constexpr double kUnitNormSlack = 1e-13;

// q / |q|. Throws InvalidQuaternion for non-finite or zero input.
inline Quaternion normalize(const Quaternion& q) {
  if (!is_finite(q)) throw InvalidQuaternion("normalize: non-finite component");
  const double n2 = quat_dot(q, q);
  if (!(n2 > 0.0)) throw InvalidQuaternion("normalize: zero quaternion");
  if (std::abs(n2 - 1.0) <= kUnitNormSlack) return q;
  const double n = std::sqrt(n2);
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

// Tape version: the value follows the double path exactly; the recorded
// Jacobian is that of q / |q|, (I - u u^T) / |q|.
inline Quat<Var> normalize(const Quat<Var>& q) {
  const Quaternion v = normalize(to_double(q));
  const double n = std::sqrt(q.w.val * q.w.val + q.x.val * q.x.val + q.y.val * q.y.val +
                             q.z.val * q.z.val);
  const double u[4] = {q.w.val / n, q.x.val / n, q.y.val / n, q.z.val / n};
  const Var in[4] = {q.w, q.x, q.y, q.z};
  const double out_val[4] = {v.w, v.x, v.y, v.z};
  Quat<Var> r;
  auto& s = detail::scratch();
  for (int i = 0; i < 4; ++i) {
    s.clear();
    for (int j = 0; j < 4; ++j) s.add(in[j], ((i == j ? 1.0 : 0.0) - u[i] * u[j]) / n);
    r[i] = s.emit(OpKind::kQuatNormalize, out_val[i]);
  }
  return r;
}

// Raw Hamilton product without renormalization.
template <class T>
Quat<T> multiply(const Quat<T>& a, const Quat<T>& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

// Composed rotation a ⊗ b (apply b, then a), renormalized.
template <class T>
Quat<T> hamilton_product(const Quat<T>& a, const Quat<T>& b) {
  if (!is_finite(a) || !is_finite(b)) {
    throw InvalidQuaternion("hamilton_product: non-finite input");
  }
  return normalize(multiply(a, b));
}

// Rotates v by the unit quaternion q.
template <class T>
Vec3<T> rotate(const Quat<T>& q, const Vec3<T>& v) {
  const Vec3<T> u{q.x, q.y, q.z};
  const Vec3<T> t = cross(u, v) * T(2.0);
  return v + t * q.w + cross(u, t);
}

inline Quaternion quat_from_axis_angle(const Vec3d& axis, double radians) {
  const double n = norm(axis);
  if (!(n > 0.0)) throw InvalidQuaternion("axis-angle: zero axis");
  const double s = std::sin(0.5 * radians) / n;
  return normalize(Quaternion{std::cos(0.5 * radians), axis.x * s, axis.y * s, axis.z * s});
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

inline Quaternion quat_from_euler_y(double degrees) {
  return quat_from_axis_angle({0.0, 1.0, 0.0}, deg2rad(degrees));
}

// Angle of the rotation about the y axis, in degrees, in (-180, 180].
//
// Decomposition order is intrinsic Y-X-Z, R = Ry(a) Rx(b) Rz(c), so the y
// angle is the outermost one and covers the full circle:
//   a = atan2(R02, R22).
// At gimbal lock (|R12| = 1, b = ±90°) c is set to zero and
//   a = atan2(-R20, R00).
template <class T>
T euler_y(const Quat<T>& q) {
  const T r02 = T(2.0) * (q.x * q.z + q.w * q.y);
  const T r22 = T(1.0) - T(2.0) * (q.x * q.x + q.y * q.y);
  const T r12 = T(2.0) * (q.y * q.z - q.w * q.x);
  T a;
  if (std::abs(value(r12)) >= 1.0 - 1e-12) {
    const T r20 = T(2.0) * (q.x * q.z - q.w * q.y);
    const T r00 = T(1.0) - T(2.0) * (q.y * q.y + q.z * q.z);
    a = atan2(-r20, r00);
  } else {
    a = atan2(r02, r22);
  }
  T deg = a * (180.0 / std::numbers::pi);
  if (value(deg) <= -180.0) deg = deg + 360.0;
  return deg;
}

// Normalized linear interpolation (1 - t) a + t b', where b' is b flipped
// onto a's hemisphere when a·b < 0 (kept as-is at a·b = 0). The endpoints
// t = 0 and t = 1 return a and b unchanged; equal endpoints return a.
template <class T>
Quat<T> nlerp(const Quat<T>& a, const Quat<T>& b, const T& t) {
  const double tv = value(t);
  Quat<T> bb = b;
  if (value(quat_dot(a, b)) < 0.0) bb = -b;
  if (tv == 0.0) return a;
  if (tv == 1.0) return b;
  if (value(a.w) == value(bb.w) && value(a.x) == value(bb.x) && value(a.y) == value(bb.y) &&
      value(a.z) == value(bb.z)) {
    return a;
  }
  const T s = T(1.0) - t;
  return normalize(Quat<T>{s * a.w + t * bb.w, s * a.x + t * bb.x, s * a.y + t * bb.y,
                           s * a.z + t * bb.z});
}

// Geodesic angle between two rotations in radians, in [0, pi].
inline double geodesic_angle(const Quaternion& a, const Quaternion& b) {
  const double d = std::min(1.0, std::abs(quat_dot(a, b)));
  return 2.0 * std::acos(d);
}

}  // namespace skinret
