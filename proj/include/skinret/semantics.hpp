#pragma once

// Pose semantics as a normalized joint distance matrix, and the similarity
// loss between a source and a target pose.

#include <span>
#include <string>
#include <vector>

#include "skinret/errors.hpp"
#include "skinret/math.hpp"

namespace skinret {

// Dense N×N matrix, row-major. Row i holds the distances from joint i to
// every other joint.
template <class T>
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<T> values;

  T& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

template <class T>
DistanceMatrix<T> distance_matrix(std::span<const Vec3<T>> positions) {
  const std::size_t n = positions.size();
  if (n < 2) throw DimensionError("distance_matrix: need at least two joints");
  for (const auto& p : positions) {
    if (!is_finite(p)) throw ValidationError("distance_matrix: non-finite joint position");
  }
  DistanceMatrix<T> d{n, std::vector<T>(n * n, T(0.0))};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const T dist = norm(positions[i] - positions[j]);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

// Divides by the height, then L1-normalizes each row. All-zero rows stay zero.
template <class T>
DistanceMatrix<T> normalize_rows(const DistanceMatrix<T>& d, double height) {
  if (!(height > 0.0)) throw InvalidSkeleton("normalize_rows: height must be positive");
  DistanceMatrix<T> out{d.n, std::vector<T>(d.values.size(), T(0.0))};
  std::vector<T> row(d.n);
  for (std::size_t i = 0; i < d.n; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) row[j] = d(i, j) / height;
    const T s = sum(std::span<const T>(row));
    if (value(s) == 0.0) continue;
    for (std::size_t j = 0; j < d.n; ++j) out(i, j) = row[j] / s;
  }
  return out;
}

// Squared Frobenius distance between the normalized matrices of two poses.
template <class T>
T semantics_loss(std::span<const Vec3<T>> source_positions, double source_height,
                 std::span<const Vec3<T>> target_positions, double target_height) {
  if (source_positions.size() != target_positions.size()) {
    throw DimensionError("semantics_loss: joint counts differ (" +
                         std::to_string(source_positions.size()) + " vs " +
                         std::to_string(target_positions.size()) + ")");
  }
  const auto a = normalize_rows(distance_matrix(source_positions), source_height);
  const auto b = normalize_rows(distance_matrix(target_positions), target_height);
  std::vector<T> diff(a.values.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = a.values[k] - b.values[k];
  return dot(std::span<const T>(diff), std::span<const T>(diff));
}

inline double semantics_loss(const std::vector<Vec3d>& source_positions, double source_height,
                             const std::vector<Vec3d>& target_positions, double target_height) {
  return semantics_loss<double>(std::span<const Vec3d>(source_positions), source_height,
                                std::span<const Vec3d>(target_positions), target_height);
}

// Mean of the per-frame loss over a sequence.
inline double sequence_semantics_loss(const std::vector<std::vector<Vec3d>>& source_frames,
                                      double source_height,
                                      const std::vector<std::vector<Vec3d>>& target_frames,
                                      double target_height) {
  if (source_frames.size() != target_frames.size()) {
    throw DimensionError("sequence_semantics_loss: frame counts differ");
  }
  if (source_frames.empty()) throw UndefinedMean("sequence_semantics_loss: no frames");
  double total = 0.0;
  for (std::size_t t = 0; t < source_frames.size(); ++t) {
    total += semantics_loss(source_frames[t], source_height, target_frames[t], target_height);
  }
  return total / static_cast<double>(source_frames.size());
}

}  // namespace skinret
