#pragma once

// Truncated voxel distance fields around a closed body surface.
//
// A repulsive field stores the depth below the surface (zero outside), an
// attractive field the distance above it (zero inside); both are clamped to
// a truncation radius. Fields are sampled with trilinear interpolation and
// differentiate with respect to the query point only; grid values act as
// constants.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/geometry.hpp"
#include "skinret/math.hpp"

namespace skinret {

enum class FieldKind : std::uint8_t { kRepulsive, kAttractive };

inline std::string_view field_kind_name(FieldKind k) {
  return k == FieldKind::kRepulsive ? "repulsive" : "attractive";
}

struct VoxelField {
  Vec3d origin{};
  double spacing = 1.0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<double> values;  // x fastest, then y, then z
  FieldKind kind = FieldKind::kRepulsive;
  double truncation = 0.0;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(i);
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3d node(int i, int j, int k) const {
    return {origin.x + spacing * i, origin.y + spacing * j, origin.z + spacing * k};
  }
  // Value reported for queries outside the grid.
  double outside_value() const { return kind == FieldKind::kRepulsive ? 0.0 : truncation; }
};

// ---------------------------------------------------------------------------
// Triangle-mesh queries.

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection).
inline Vec3d closest_point_on_triangle(const Vec3d& p, const Vec3d& a, const Vec3d& b, const Vec3d& c) {
  const Vec3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3d bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3d cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double point_triangle_distance(const Vec3d& p, const Vec3d& a, const Vec3d& b, const Vec3d& c) {
  return norm(p - closest_point_on_triangle(p, a, b, c));
}

// Throws NonWatertight unless every directed edge is matched by exactly one
// opposite edge (closed, consistently oriented, edge-manifold surface).
inline void require_watertight(std::span<const Triangle> triangles, std::size_t num_vertices) {
  if (triangles.empty()) throw NonWatertight("surface has no triangles");
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[static_cast<std::size_t>(k)];
      const int b = t[static_cast<std::size_t>((k + 1) % 3)];
      if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= num_vertices ||
          static_cast<std::size_t>(b) >= num_vertices) {
        throw NonWatertight("triangle index out of range");
      }
      if (++edges[{a, b}] > 1) {
        throw NonWatertight("edge " + std::to_string(a) + "-" + std::to_string(b) +
                            " is used twice in the same direction");
      }
    }
  }
  for (const auto& [e, count] : edges) {
    auto it = edges.find({e.second, e.first});
    if (it == edges.end() || it->second != count) {
      throw NonWatertight("open edge " + std::to_string(e.first) + "-" + std::to_string(e.second));
    }
  }
}

// Generalized winding number of a closed surface around p (solid angles).
inline double winding_number(const Vec3d& p, std::span<const Vec3d> vertices,
                             std::span<const Triangle> triangles) {
  double total = 0.0;
  for (const auto& t : triangles) {
    const Vec3d a = vertices[static_cast<std::size_t>(t[0])] - p;
    const Vec3d b = vertices[static_cast<std::size_t>(t[1])] - p;
    const Vec3d c = vertices[static_cast<std::size_t>(t[2])] - p;
    const double la = norm(a), lb = norm(b), lc = norm(c);
    const double num = dot(a, cross(b, c));
    const double den = la * lb * lc + dot(a, b) * lc + dot(a, c) * lb + dot(b, c) * la;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

inline bool point_inside(const Vec3d& p, std::span<const Vec3d> vertices,
                         std::span<const Triangle> triangles) {
  return std::abs(winding_number(p, vertices, triangles)) > 0.5;
}

inline double distance_to_surface(const Vec3d& p, std::span<const Vec3d> vertices,
                                  std::span<const Triangle> triangles) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : triangles) {
    best = std::min(best, point_triangle_distance(p, vertices[static_cast<std::size_t>(t[0])],
                                                  vertices[static_cast<std::size_t>(t[1])],
                                                  vertices[static_cast<std::size_t>(t[2])]));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Voxelization.

namespace detail {

struct GridSpec {
  Vec3d origin{};
  double spacing = 1.0;
  std::array<int, 3> dims{0, 0, 0};
  std::size_t count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(i);
  }
  Vec3d node(int i, int j, int k) const {
    return {origin.x + spacing * i, origin.y + spacing * j, origin.z + spacing * k};
  }
};

inline GridSpec make_grid(std::span<const Vec3d> vertices, double spacing, double padding) {
  Vec3d lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& v : vertices) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  GridSpec g;
  g.spacing = spacing;
  g.origin = lo - Vec3d{padding, padding, padding};
  for (int a = 0; a < 3; ++a) {
    g.dims[static_cast<std::size_t>(a)] =
        static_cast<int>(std::ceil((hi[a] - lo[a] + 2.0 * padding) / spacing - 1e-9)) + 1;
  }
  return g;
}

// Unsigned distance per node, exact for every node within `radius` of the
// surface; farther nodes stay at infinity and are clamped by the caller.
inline std::vector<double> unsigned_distance(const GridSpec& g, std::span<const Vec3d> vertices,
                                             std::span<const Triangle> triangles, double radius) {
  const std::size_t count = g.count();
  std::vector<double> dist(count, std::numeric_limits<double>::infinity());
  auto tri_dist = [&](const Vec3d& p, int t) {
    const auto& tr = triangles[static_cast<std::size_t>(t)];
    return point_triangle_distance(p, vertices[static_cast<std::size_t>(tr[0])],
                                   vertices[static_cast<std::size_t>(tr[1])],
                                   vertices[static_cast<std::size_t>(tr[2])]);
  };
  const int band = static_cast<int>(std::ceil(radius / g.spacing)) + 1;
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    std::array<int, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      double mn = 1e300, mx = -1e300;
      for (int v : triangles[t]) {
        mn = std::min(mn, vertices[static_cast<std::size_t>(v)][a]);
        mx = std::max(mx, vertices[static_cast<std::size_t>(v)][a]);
      }
      const auto au = static_cast<std::size_t>(a);
      lo[au] = std::max(0, static_cast<int>(std::floor((mn - g.origin[a]) / g.spacing)) - band);
      hi[au] = std::min(g.dims[au] - 1, static_cast<int>(std::ceil((mx - g.origin[a]) / g.spacing)) + band);
    }
    // Bounding sphere gives a lower bound that skips most exact queries.
    const auto& tr = triangles[t];
    const Vec3d c = (vertices[static_cast<std::size_t>(tr[0])] + vertices[static_cast<std::size_t>(tr[1])] +
                     vertices[static_cast<std::size_t>(tr[2])]) /
                    3.0;
    double rr = 0.0;
    for (int v : tr) rr = std::max(rr, norm(vertices[static_cast<std::size_t>(v)] - c));
    for (int k = lo[2]; k <= hi[2]; ++k) {
      for (int j = lo[1]; j <= hi[1]; ++j) {
        for (int i = lo[0]; i <= hi[0]; ++i) {
          const std::size_t n = g.index(i, j, k);
          const Vec3d p = g.node(i, j, k);
          const double bound = norm(p - c) - rr;
          if (bound > radius || bound >= dist[n]) continue;
          const double d = tri_dist(p, static_cast<int>(t));
          if (d < dist[n]) dist[n] = d;
        }
      }
    }
  }
  return dist;
}

// Sign of the canonical 2D edge function of edge (u, v) at p in the (y, z)
// plane. Edges are evaluated with their lower vertex index first so that two
// triangles sharing an edge see bit-identical values; exact zeros are broken
// by symbolically perturbing p by (eps, eps^2).
inline int edge_sign(int iu, const Vec3d& u, int iv, const Vec3d& v, double py, double pz) {
  const bool swap = iv < iu;
  const Vec3d& a = swap ? v : u;
  const Vec3d& b = swap ? u : v;
  const double dy = b.y - a.y, dz = b.z - a.z;
  const double e = dy * (pz - a.z) - dz * (py - a.y);
  int s;
  if (e > 0.0) {
    s = 1;
  } else if (e < 0.0) {
    s = -1;
  } else if (dz != 0.0) {
    s = dz < 0.0 ? 1 : -1;
  } else {
    s = dy > 0.0 ? 1 : (dy < 0.0 ? -1 : 0);
  }
  return swap ? -s : s;
}

inline double edge_value(const Vec3d& u, const Vec3d& v, double py, double pz) {
  return (v.y - u.y) * (pz - u.z) - (v.z - u.z) * (py - u.y);
}

// Inside flag per node from signed ray crossings along +x: the winding number
// of a node is the sum, over surface crossings beyond it, of the sign of the
// crossed triangle's normal x-component.
inline std::vector<std::uint8_t> inside_flags(const GridSpec& g, std::span<const Vec3d> vertices,
                                              std::span<const Triangle> triangles) {
  const int ny = g.dims[1], nz = g.dims[2];
  std::vector<std::vector<std::pair<double, int>>> rows(static_cast<std::size_t>(ny) *
                                                        static_cast<std::size_t>(nz));
  for (const auto& t : triangles) {
    const int ia = t[0], ib = t[1], ic = t[2];
    const Vec3d& a = vertices[static_cast<std::size_t>(ia)];
    const Vec3d& b = vertices[static_cast<std::size_t>(ib)];
    const Vec3d& c = vertices[static_cast<std::size_t>(ic)];
    const double area = (b.y - a.y) * (c.z - a.z) - (b.z - a.z) * (c.y - a.y);
    if (area == 0.0) continue;
    const int orient = area > 0.0 ? 1 : -1;
    const double ymin = std::min({a.y, b.y, c.y}), ymax = std::max({a.y, b.y, c.y});
    const double zmin = std::min({a.z, b.z, c.z}), zmax = std::max({a.z, b.z, c.z});
    const int j0 = std::max(0, static_cast<int>(std::floor((ymin - g.origin.y) / g.spacing)));
    const int j1 = std::min(ny - 1, static_cast<int>(std::ceil((ymax - g.origin.y) / g.spacing)));
    const int k0 = std::max(0, static_cast<int>(std::floor((zmin - g.origin.z) / g.spacing)));
    const int k1 = std::min(nz - 1, static_cast<int>(std::ceil((zmax - g.origin.z) / g.spacing)));
    for (int k = k0; k <= k1; ++k) {
      const double pz = g.origin.z + g.spacing * k;
      for (int j = j0; j <= j1; ++j) {
        const double py = g.origin.y + g.spacing * j;
        if (edge_sign(ia, a, ib, b, py, pz) != orient) continue;
        if (edge_sign(ib, b, ic, c, py, pz) != orient) continue;
        if (edge_sign(ic, c, ia, a, py, pz) != orient) continue;
        const double la = edge_value(b, c, py, pz);
        const double lb = edge_value(c, a, py, pz);
        const double lc = edge_value(a, b, py, pz);
        const double s = la + lb + lc;
        const double x = s != 0.0 ? (la * a.x + lb * b.x + lc * c.x) / s : (a.x + b.x + c.x) / 3.0;
        rows[static_cast<std::size_t>(k) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(j)]
            .emplace_back(x, orient);
      }
    }
  }
  std::vector<std::uint8_t> inside(g.count(), 0);
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      auto& row = rows[static_cast<std::size_t>(k) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(j)];
      if (row.empty()) continue;
      std::sort(row.begin(), row.end());
      // Suffix sums: winding beyond each crossing.
      int winding = 0;
      for (const auto& c : row) winding += c.second;
      std::size_t next = 0;
      for (int i = 0; i < g.dims[0]; ++i) {
        const double x = g.origin.x + g.spacing * i;
        while (next < row.size() && row[next].first <= x) {
          winding -= row[next].second;
          ++next;
        }
        inside[g.index(i, j, k)] = winding != 0 ? 1 : 0;
      }
    }
  }
  return inside;
}

inline VoxelField make_field(const GridSpec& g, const std::vector<double>& dist,
                             const std::vector<std::uint8_t>& inside, FieldKind kind, double truncation) {
  VoxelField f;
  f.origin = g.origin;
  f.spacing = g.spacing;
  f.dims = g.dims;
  f.kind = kind;
  f.truncation = truncation;
  f.values.resize(g.count());
  for (std::size_t n = 0; n < g.count(); ++n) {
    const bool want = kind == FieldKind::kRepulsive ? inside[n] != 0 : inside[n] == 0;
    f.values[n] = want ? std::min(dist[n], truncation) : 0.0;
  }
  return f;
}

inline void check_voxel_args(std::span<const Vec3d> vertices, std::span<const Triangle> triangles,
                             double spacing, double truncation) {
  if (!(spacing > 0.0)) throw ConfigError("voxelize: spacing must be positive");
  if (!(truncation > 0.0)) throw ConfigError("voxelize: truncation must be positive");
  for (const auto& v : vertices) {
    if (!is_finite(v)) throw ValidationError("voxelize: non-finite vertex");
  }
  require_watertight(triangles, vertices.size());
}

}  // namespace detail

// Truncated distance field of one kind over the surface's bounding box
// padded by the truncation radius.
inline VoxelField voxelize(std::span<const Vec3d> vertices, std::span<const Triangle> triangles,
                           double spacing, double truncation, FieldKind kind) {
  detail::check_voxel_args(vertices, triangles, spacing, truncation);
  const auto g = detail::make_grid(vertices, spacing, truncation);
  const auto dist = detail::unsigned_distance(g, vertices, triangles, truncation);
  const auto inside = detail::inside_flags(g, vertices, triangles);
  return detail::make_field(g, dist, inside, kind, truncation);
}

struct DistanceFields {
  VoxelField repulsive;
  VoxelField attractive;
};

// Both fields on one shared grid (padded by the larger truncation).
inline DistanceFields voxelize_both(std::span<const Vec3d> vertices, std::span<const Triangle> triangles,
                                    double spacing, double repulsive_truncation,
                                    double attractive_truncation) {
  detail::check_voxel_args(vertices, triangles, spacing, std::min(repulsive_truncation, attractive_truncation));
  const double reach = std::max(repulsive_truncation, attractive_truncation);
  const auto g = detail::make_grid(vertices, spacing, reach);
  const auto dist = detail::unsigned_distance(g, vertices, triangles, reach);
  const auto inside = detail::inside_flags(g, vertices, triangles);
  return {detail::make_field(g, dist, inside, FieldKind::kRepulsive, repulsive_truncation),
          detail::make_field(g, dist, inside, FieldKind::kAttractive, attractive_truncation)};
}

// ---------------------------------------------------------------------------
// Sampling.

struct FieldSample {
  double value = 0.0;
  Vec3d gradient{};
};

// Trilinear interpolation over the enclosing 8-node cell and its analytic
// spatial gradient. Queries outside the grid return the field's outside
// value with zero gradient.
inline FieldSample sample_with_gradient(const VoxelField& f, const Vec3d& p) {
  double u[3];
  int c[3];
  for (int a = 0; a < 3; ++a) {
    const auto au = static_cast<std::size_t>(a);
    u[a] = (p[a] - f.origin[a]) / f.spacing;
    if (!(u[a] >= 0.0) || u[a] > static_cast<double>(f.dims[au] - 1) || f.dims[au] < 2) {
      return {f.outside_value(), {}};
    }
    c[a] = std::min(static_cast<int>(std::floor(u[a])), f.dims[au] - 2);
    u[a] -= c[a];
  }
  double v[2][2][2];
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) v[dk][dj][di] = f.at(c[0] + di, c[1] + dj, c[2] + dk);
  const double fx = u[0], fy = u[1], fz = u[2];
  // Interpolate along x, then y, then z.
  double vx[2][2], dvx[2][2];
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj) {
      vx[dk][dj] = v[dk][dj][0] + fx * (v[dk][dj][1] - v[dk][dj][0]);
      dvx[dk][dj] = v[dk][dj][1] - v[dk][dj][0];
    }
  double vy[2], dvy_dx[2], dvy_dy[2];
  for (int dk = 0; dk < 2; ++dk) {
    vy[dk] = vx[dk][0] + fy * (vx[dk][1] - vx[dk][0]);
    dvy_dx[dk] = dvx[dk][0] + fy * (dvx[dk][1] - dvx[dk][0]);
    dvy_dy[dk] = vx[dk][1] - vx[dk][0];
  }
  FieldSample s;
  s.value = vy[0] + fz * (vy[1] - vy[0]);
  s.gradient = Vec3d{(dvy_dx[0] + fz * (dvy_dx[1] - dvy_dx[0])) / f.spacing,
                     (dvy_dy[0] + fz * (dvy_dy[1] - dvy_dy[0])) / f.spacing, (vy[1] - vy[0]) / f.spacing};
  return s;
}

inline double sample(const VoxelField& f, const Vec3d& p) { return sample_with_gradient(f, p).value; }

inline Var sample(const VoxelField& f, const Vec3<Var>& p) {
  const FieldSample s = sample_with_gradient(f, to_double(p));
  auto& sc = detail::scratch();
  sc.clear();
  sc.add(p.x, s.gradient.x);
  sc.add(p.y, s.gradient.y);
  sc.add(p.z, s.gradient.z);
  return sc.emit(OpKind::kSample, s.value);
}

namespace detail {

template <class T>
T mean_sample(const VoxelField& f, std::span<const Vec3<T>> points, const char* what) {
  if (points.empty()) throw UndefinedMean(std::string(what) + ": empty vertex set");
  std::vector<T> vals;
  vals.reserve(points.size());
  for (const auto& p : points) vals.push_back(sample(f, p));
  return sum(std::span<const T>(vals)) / static_cast<double>(points.size());
}

}  // namespace detail

// Mean repulsive depth over a vertex set (limb vertices).
template <class T>
T repulsive_loss(const VoxelField& field, std::span<const Vec3<T>> vertices) {
  if (field.kind != FieldKind::kRepulsive) throw ConfigError("repulsive_loss: field is not repulsive");
  return detail::mean_sample(field, vertices, "repulsive_loss");
}

// Mean attractive distance over a vertex set (hand vertices).
template <class T>
T attractive_loss(const VoxelField& field, std::span<const Vec3<T>> vertices) {
  if (field.kind != FieldKind::kAttractive) throw ConfigError("attractive_loss: field is not attractive");
  return detail::mean_sample(field, vertices, "attractive_loss");
}

}  // namespace skinret
