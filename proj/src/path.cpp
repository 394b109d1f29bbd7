#include "otgym/path.hpp"

#include <algorithm>
#include <limits>

namespace otgym {

SmoothPath::SmoothPath(std::vector<Vec2> points) {
  for (const auto& p : points) {
    if (!points_.empty() && p == points_.back()) continue;
    const double len = points_.empty() ? 0.0 : arc_.back() + distance(points_.back(), p);
    if (!points_.empty() && !(len > arc_.back())) continue;
    points_.push_back(p);
    arc_.push_back(len);
  }
}

std::size_t SmoothPath::segment_index(double s) const {
  // Index i of the segment [i, i+1] containing s.
  const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
  std::size_t i = it == arc_.begin() ? 0 : static_cast<std::size_t>(it - arc_.begin()) - 1;
  return std::min(i, points_.size() - 2);
}

Vec2 SmoothPath::point_at(double s) const {
  if (points_.empty()) return {};
  if (points_.size() == 1 || s <= 0.0) return points_.front();
  if (s >= length()) return points_.back();
  const std::size_t i = segment_index(s);
  const double t = (s - arc_[i]) / (arc_[i + 1] - arc_[i]);
  return points_[i] + (points_[i + 1] - points_[i]) * t;
}

Vec2 SmoothPath::tangent_at(double s) const {
  if (points_.size() < 2) return {1.0, 0.0};
  const std::size_t i = segment_index(std::clamp(s, 0.0, length()));
  return (points_[i + 1] - points_[i]).normalized();
}

double SmoothPath::project(const Vec2& p) const {
  return project(p, 0.0, std::numeric_limits<double>::infinity());
}

double SmoothPath::project(const Vec2& p, double hint, double window) const {
  if (points_.size() < 2) return 0.0;
  const double lo = hint - window, hi = hint + window;
  double best_s = std::clamp(hint, 0.0, length());
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    if (arc_[i + 1] < lo || arc_[i] > hi) continue;
    const Vec2 a = points_[i], b = points_[i + 1];
    const Vec2 ab = b - a;
    double t = std::clamp((p - a).dot(ab) / ab.squared_norm(), 0.0, 1.0);
    double s = arc_[i] + t * (arc_[i + 1] - arc_[i]);
    s = std::clamp(s, std::max(lo, 0.0), std::min(hi, length()));
    const double d = (point_at(s) - p).squared_norm();
    if (d < best_d) {
      best_d = d;
      best_s = s;
    }
  }
  return best_s;
}

}  // namespace otgym
