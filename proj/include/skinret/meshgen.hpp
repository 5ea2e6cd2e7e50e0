#pragma once

// Closed, outward-oriented triangle meshes for tests and synthetic
// characters: icospheres, ellipsoids and capsules.

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "skinret/geometry.hpp"
#include "skinret/math.hpp"

namespace skinret {

struct TriMesh {
  std::vector<Vec3d> vertices;
  std::vector<Triangle> triangles;
};

inline double signed_volume(const TriMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles) {
    v += dot(m.vertices[static_cast<std::size_t>(t[0])],
             cross(m.vertices[static_cast<std::size_t>(t[1])], m.vertices[static_cast<std::size_t>(t[2])]));
  }
  return v / 6.0;
}

inline void orient_outward(TriMesh& m) {
  if (signed_volume(m) < 0.0) {
    for (auto& t : m.triangles) std::swap(t[1], t[2]);
  }
}

// Unit icosphere: icosahedron subdivided `levels` times, vertices on the
// sphere. Level 3 has 642 vertices and 1280 triangles.
inline TriMesh icosphere(int levels, double radius = 1.0, const Vec3d& center = {}) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.vertices) v = v / norm(v);
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      Vec3d p = (m.vertices[static_cast<std::size_t>(a)] + m.vertices[static_cast<std::size_t>(b)]) * 0.5;
      p = p / norm(p);
      m.vertices.push_back(p);
      const int id = static_cast<int>(m.vertices.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& tri : m.triangles) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v = center + v * radius;
  orient_outward(m);
  return m;
}

// Surface of revolution about +y from a profile of (radius, y) pairs running
// from the top pole to the bottom pole. Pole entries must have radius 0.
inline TriMesh revolve(const std::vector<std::pair<double, double>>& profile, int segments) {
  TriMesh m;
  const std::size_t rings = profile.size();
  m.vertices.push_back({0.0, profile.front().second, 0.0});
  for (std::size_t r = 1; r + 1 < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * std::numbers::pi * s / segments;
      m.vertices.push_back({profile[r].first * std::cos(a), profile[r].second, profile[r].first * std::sin(a)});
    }
  }
  m.vertices.push_back({0.0, profile.back().second, 0.0});
  const int bottom = static_cast<int>(m.vertices.size()) - 1;
  auto ring = [&](std::size_t r, int s) { return 1 + static_cast<int>(r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) m.triangles.push_back({0, ring(1, s + 1), ring(1, s)});
  for (std::size_t r = 1; r + 2 < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      m.triangles.push_back({ring(r, s), ring(r, s + 1), ring(r + 1, s)});
      m.triangles.push_back({ring(r, s + 1), ring(r + 1, s + 1), ring(r + 1, s)});
    }
  }
  for (int s = 0; s < segments; ++s) m.triangles.push_back({bottom, ring(rings - 2, s), ring(rings - 2, s + 1)});
  orient_outward(m);
  return m;
}

inline TriMesh ellipsoid(const Vec3d& center, const Vec3d& radii, int stacks = 12, int segments = 16) {
  std::vector<std::pair<double, double>> profile;
  for (int i = 0; i <= stacks; ++i) {
    const double phi = std::numbers::pi * i / stacks;
    profile.emplace_back(i == 0 || i == stacks ? 0.0 : std::sin(phi), std::cos(phi));
  }
  TriMesh m = revolve(profile, segments);
  for (auto& v : m.vertices) v = center + Vec3d{v.x * radii.x, v.y * radii.y, v.z * radii.z};
  orient_outward(m);
  return m;
}

// Capsule of the given radius around segment a-b, hemispherical caps.
inline TriMesh capsule(const Vec3d& a, const Vec3d& b, double radius, int cap_stacks = 3,
                       int body_rings = 4, int segments = 10) {
  const double len = norm(b - a);
  std::vector<std::pair<double, double>> profile;
  const double half = 0.5 * len;
  for (int i = 0; i <= cap_stacks; ++i) {
    const double phi = 0.5 * std::numbers::pi * i / cap_stacks;
    profile.emplace_back(i == 0 ? 0.0 : radius * std::sin(phi), half + radius * std::cos(phi));
  }
  for (int i = 1; i < body_rings; ++i) {
    profile.emplace_back(radius, half - len * i / body_rings);
  }
  for (int i = 0; i <= cap_stacks; ++i) {
    const double phi = 0.5 * std::numbers::pi + 0.5 * std::numbers::pi * i / cap_stacks;
    profile.emplace_back(i == cap_stacks ? 0.0 : radius * std::sin(phi), -half + radius * std::cos(phi));
  }
  TriMesh m = revolve(profile, segments);
  // Map +y onto the a->b direction, centered at the midpoint.
  const Vec3d dir = len > 0.0 ? (b - a) / len : Vec3d{0, 1, 0};
  const Vec3d up{0.0, 1.0, 0.0};
  const Vec3d axis = cross(up, dir);
  const double s = norm(axis), c = dot(up, dir);
  Quaternion q = Quaternion::identity();
  if (s > 1e-12) {
    q = quat_from_axis_angle(axis, std::atan2(s, c));
  } else if (c < 0.0) {
    q = quat_from_axis_angle({1.0, 0.0, 0.0}, std::numbers::pi);
  }
  const Vec3d mid = (a + b) * 0.5;
  for (auto& v : m.vertices) v = mid + rotate(q, v);
  return m;
}

// Appends `part` to `mesh`, returning the index of its first vertex.
inline int append(TriMesh& mesh, const TriMesh& part) {
  const int base = static_cast<int>(mesh.vertices.size());
  mesh.vertices.insert(mesh.vertices.end(), part.vertices.begin(), part.vertices.end());
  for (const auto& t : part.triangles) mesh.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  return base;
}

}  // namespace skinret
