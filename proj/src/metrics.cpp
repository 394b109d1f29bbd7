#include "otgym/metrics.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include "otgym/path.hpp"

namespace otgym {

double path_length(std::span<const Vec2> polyline) {
  if (polyline.size() < 2) throw MetricsError("path_length needs at least 2 points");
  double len = 0.0;
  for (std::size_t i = 1; i < polyline.size(); ++i) len += distance(polyline[i - 1], polyline[i]);
  return len;
}

namespace {

struct Turn {
  double angle;     // radians, signed
  double span_len;  // |s_i| + |s_i+1|
};

std::vector<Turn> turns(std::span<const Vec2> polyline) {
  if (polyline.size() < 3) throw MetricsError("curvature metrics need at least 3 points");
  std::vector<Vec2> segs;
  for (std::size_t i = 1; i < polyline.size(); ++i) {
    const Vec2 s = polyline[i] - polyline[i - 1];
    if (s.squared_norm() > 0.0) segs.push_back(s);
  }
  if (segs.size() < 2) throw MetricsError("polyline is degenerate");
  std::vector<Turn> out;
  out.reserve(segs.size() - 1);
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
    const double angle = std::atan2(segs[i].cross(segs[i + 1]), segs[i].dot(segs[i + 1]));
    out.push_back({angle, segs[i].norm() + segs[i + 1].norm()});
  }
  return out;
}

}  // namespace

double mean_curvature(std::span<const Vec2> polyline) {
  const auto ts = turns(polyline);
  double sum = 0.0;
  for (const auto& t : ts) sum += 2.0 * std::abs(t.angle) / t.span_len;
  return sum / static_cast<double>(ts.size());
}

double angular_deviation(std::span<const Vec2> polyline) {
  const auto ts = turns(polyline);
  double sum = 0.0;
  for (const auto& t : ts) sum += std::abs(t.angle);
  return sum / static_cast<double>(ts.size()) * 180.0 / std::numbers::pi;
}

std::vector<Vec2> resample_by_arc_length(std::span<const Vec2> polyline, int n) {
  const SmoothPath path(std::vector<Vec2>(polyline.begin(), polyline.end()));
  std::vector<Vec2> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(path.point_at(path.length() * i / (n - 1)));
  return out;
}

namespace {

double hf_ratio(const std::vector<double>& signal, double cutoff_fraction) {
  const std::size_t n = signal.size();
  const std::size_t nyquist = n / 2;
  double total = 0.0, high = 0.0;
  for (std::size_t k = 1; k <= nyquist; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += signal[t] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    const double e = std::norm(acc);
    total += e;
    if (static_cast<double>(k) > cutoff_fraction * static_cast<double>(nyquist)) high += e;
  }
  // Energies far below round-off of the coordinates count as no signal.
  return total > 1e-18 * static_cast<double>(n * n) ? high / total : 0.0;
}

}  // namespace

double spectral_smoothness(std::span<const Vec2> polyline, double cutoff_fraction, int samples) {
  if (polyline.size() < 8) throw MetricsError("spectral_smoothness needs at least 8 points");
  if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0)) {
    throw MetricsError("cutoff_fraction must lie in (0, 1)");
  }
  const auto pts = resample_by_arc_length(polyline, samples);
  const Vec2 a = pts.front(), b = pts.back();
  std::vector<double> xs(pts.size()), ys(pts.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(pts.size() - 1);
    const Vec2 chord = a + (b - a) * t;
    xs[i] = pts[i].x - chord.x;
    ys[i] = pts[i].y - chord.y;
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    xs[i] -= mx;
    ys[i] -= my;
  }
  return 0.5 * (hf_ratio(xs, cutoff_fraction) + hf_ratio(ys, cutoff_fraction));
}

TrajectoryMetrics compute_metrics(std::span<const Vec2> polyline, double cutoff_fraction) {
  return {path_length(polyline), mean_curvature(polyline), angular_deviation(polyline),
          spectral_smoothness(polyline, cutoff_fraction)};
}

}  // namespace otgym
