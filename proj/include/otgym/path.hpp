#pragma once

#include <vector>

#include "otgym/vec2.hpp"

namespace otgym {

/// Polyline parameterized by arc length. Consecutive duplicate vertices are
/// dropped on construction so cumulative arc length is strictly increasing.
class SmoothPath {
 public:
  SmoothPath() = default;
  explicit SmoothPath(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& arc_lengths() const { return arc_; }
  bool empty() const { return points_.empty(); }
  double length() const { return arc_.empty() ? 0.0 : arc_.back(); }
  const Vec2& front() const { return points_.front(); }
  const Vec2& back() const { return points_.back(); }

  /// Point at arc length s, clamped to [0, length()].
  Vec2 point_at(double s) const;
  /// Unit tangent at arc length s; +x for single-point paths.
  Vec2 tangent_at(double s) const;
  /// Arc length of the closest point to p. With a hint, only the window
  /// [hint - window, hint + window] is searched, which keeps progress monotone
  /// along paths that pass close to themselves.
  double project(const Vec2& p) const;
  double project(const Vec2& p, double hint, double window) const;

 private:
  std::size_t segment_index(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> arc_;
};

}  // namespace otgym
