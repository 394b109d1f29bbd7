#include <doctest.h>

#include <cmath>
#include <numbers>

#include "otgym/metrics.hpp"
#include "otgym/rng.hpp"

using namespace otgym;

namespace {

std::vector<Vec2> arc(double radius, int n_segments, double sweep) {
  std::vector<Vec2> pts;
  for (int i = 0; i <= n_segments; ++i) {
    const double a = sweep * i / n_segments;
    pts.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return pts;
}

std::vector<Vec2> transform(std::span<const Vec2> pts, double angle, double scale, Vec2 shift) {
  std::vector<Vec2> out;
  for (const auto& p : pts) {
    out.push_back(Vec2{scale * (std::cos(angle) * p.x - std::sin(angle) * p.y),
                       scale * (std::sin(angle) * p.x + std::cos(angle) * p.y)} +
                  shift);
  }
  return out;
}

}  // namespace

TEST_CASE("straight line: no curvature, no turning, no high-frequency energy") {
  std::vector<Vec2> line;
  for (double t : {0.0, 0.5, 1.0, 2.5, 3.0, 4.0, 4.25, 5.0, 6.0}) line.push_back({t, 2 * t});
  CHECK(path_length(line) == doctest::Approx(6 * std::sqrt(5.0)));
  CHECK(mean_curvature(line) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(angular_deviation(line) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(spectral_smoothness(line) < 1e-20);
}

TEST_CASE("right-angle corner by hand") {
  const std::vector<Vec2> l = {{0, 0}, {1, 0}, {1, 1}};
  // turn pi/2 over |s1| + |s2| = 2
  CHECK(mean_curvature(l) == doctest::Approx(std::numbers::pi / 2));
  CHECK(angular_deviation(l) == doctest::Approx(90.0));
  CHECK(path_length(l) == 2.0);
}

TEST_CASE("regular polygon arc: closed-form curvature tends to 1/R") {
  for (double r : {2.0, 10.0, 50.0}) {
    const int n = 90;
    const auto pts = arc(r, n, std::numbers::pi);
    const double step = std::numbers::pi / n;
    // turn angle = step, each chord = 2 R sin(step / 2)
    const double expect = step / (2.0 * r * std::sin(step / 2));
    CHECK(mean_curvature(pts) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(mean_curvature(pts) == doctest::Approx(1.0 / r).epsilon(1e-3));
    CHECK(angular_deviation(pts) == doctest::Approx(180.0 / n).epsilon(1e-10));
  }
}

TEST_CASE("metrics are invariant under rigid motion and behave under scaling") {
  Rng rng(3, Stream::Scenario);
  std::vector<Vec2> walk = {{0, 0}};
  for (int i = 0; i < 200; ++i) walk.push_back(walk.back() + Vec2{1.0, rng.uniform() - 0.5});
  const TrajectoryMetrics base = compute_metrics(walk);
  const auto moved = transform(walk, 0.7, 1.0, {13, -4});
  const TrajectoryMetrics m = compute_metrics(moved);
  CHECK(m.total_length == doctest::Approx(base.total_length).epsilon(1e-12));
  CHECK(m.mean_curvature == doctest::Approx(base.mean_curvature).epsilon(1e-9));
  CHECK(m.angular_deviation == doctest::Approx(base.angular_deviation).epsilon(1e-9));
  // The spectral share is averaged per axis, so only quarter turns leave it unchanged.
  const TrajectoryMetrics q = compute_metrics(transform(walk, std::numbers::pi / 2, 1.0, {-7, 2}));
  CHECK(q.hf_energy_ratio == doctest::Approx(base.hf_energy_ratio).epsilon(1e-6));
  const TrajectoryMetrics s = compute_metrics(transform(walk, 0.0, 3.0, {}));
  CHECK(s.total_length == doctest::Approx(3 * base.total_length).epsilon(1e-12));
  CHECK(s.mean_curvature == doctest::Approx(base.mean_curvature / 3).epsilon(1e-9));
  CHECK(s.angular_deviation == doctest::Approx(base.angular_deviation).epsilon(1e-9));
  CHECK(s.hf_energy_ratio == doctest::Approx(base.hf_energy_ratio).epsilon(1e-6));
}

TEST_CASE("jitter raises the high-frequency share; smooth curves keep it low") {
  const auto smooth = arc(40.0, 200, std::numbers::pi / 2);
  std::vector<Vec2> jitter = smooth;
  Rng rng(11, Stream::Scenario);
  for (std::size_t i = 1; i + 1 < jitter.size(); ++i) jitter[i] += Vec2{rng.uniform() - 0.5, rng.uniform() - 0.5};
  const double a = spectral_smoothness(smooth), b = spectral_smoothness(jitter);
  CHECK(a >= 0.0);
  CHECK(b <= 1.0);
  CHECK(a < 1e-3);
  CHECK(b > 10 * a);
  // A tighter cutoff counts more bins as high frequency.
  CHECK(spectral_smoothness(jitter, 0.1) >= spectral_smoothness(jitter, 0.5));
}

TEST_CASE("arc-length resampling keeps endpoints and spacing") {
  const std::vector<Vec2> l = {{0, 0}, {3, 0}, {3, 1}};
  const auto r = resample_by_arc_length(l, 5);
  REQUIRE(r.size() == 5);
  CHECK(r.front() == Vec2{0, 0});
  CHECK(r.back().x == doctest::Approx(3.0));
  CHECK(r.back().y == doctest::Approx(1.0));
  CHECK(r[2].x == doctest::Approx(2.0));
}

TEST_CASE("degenerate inputs are rejected") {
  const std::vector<Vec2> one = {{0, 0}};
  const std::vector<Vec2> two = {{0, 0}, {1, 0}};
  const std::vector<Vec2> stuck = {{1, 1}, {1, 1}, {1, 1}};
  CHECK_THROWS_AS(path_length(one), MetricsError);
  CHECK_THROWS_AS(mean_curvature(two), MetricsError);
  CHECK_THROWS_AS(angular_deviation(stuck), MetricsError);
  // Repeated vertices are skipped rather than producing NaN.
  const std::vector<Vec2> dup = {{0, 0}, {1, 0}, {1, 0}, {1, 1}};
  CHECK(angular_deviation(dup) == doctest::Approx(90.0));
}
