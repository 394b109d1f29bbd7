#include <doctest.h>

#include <cmath>

#include "otgym/rl.hpp"
#include "otgym/session.hpp"
#include "otgym/shared.hpp"

using namespace otgym;

TEST_CASE("alpha at the join points and in between") {
  CHECK(alpha(0.0) == 0.5);
  CHECK(alpha(0.5) == 0.5);
  CHECK(alpha(1.0) == 0.5);
  CHECK(alpha(1.5) == 0.3);
  CHECK(alpha(2.0) == 0.1);
  CHECK(alpha(3.0) == 0.1);
  CHECK(alpha(std::numeric_limits<double>::infinity()) == 0.1);
}

TEST_CASE("alpha is continuous and nonincreasing with range [0.1, 0.5]") {
  double prev = alpha(0.0), lo = prev, hi = prev;
  for (int i = 1; i <= 40000; ++i) {
    const double a = alpha(i * 1e-4);
    CHECK(a <= prev);
    CHECK(prev - a < 1e-3);  // no jumps at d1 or d2
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    prev = a;
  }
  CHECK(lo == 0.1);
  CHECK(hi == 0.5);
  CHECK(std::abs(alpha(std::nextafter(1.0, 2.0)) - 0.5) < 1e-12);
  CHECK(std::abs(alpha(std::nextafter(2.0, 3.0)) - 0.1) < 1e-12);
}

TEST_CASE("blend examples and linearity") {
  const Vec2 b = blend({1, 0}, {0, 1}, 0.5, 1.0);
  CHECK(b == Vec2{0.5, 0.5});
  CHECK(blend({0, 0}, {2, -4}, 0.1, 1.0) == Vec2{2 * 0.9, -4 * 0.9});
  CHECK(blend({3, 1}, {-2, 7}, 0.3, 0.0) == Vec2{0, 0});
  CHECK(blend({3, 1}, {-2, 7}, 1.0, 1.0) == Vec2{3, 1});
  CHECK(blend({3, 1}, {-2, 7}, 0.0, 1.0) == Vec2{-2, 7});
  const Vec2 h1{0.3, -0.2}, h2{1.1, 0.4}, r{0.7, 0.9};
  const Vec2 sum = blend(h1 + h2, r, 0.3, 0.8), split = blend(h1, r, 0.3, 0.8) + blend(h2, {0, 0}, 0.3, 0.8);
  CHECK(sum.x == doctest::Approx(split.x).epsilon(1e-14));
  CHECK(sum.y == doctest::Approx(split.y).epsilon(1e-14));
}

TEST_CASE("control label is a pure function of distance") {
  CHECK(control_label(0.2) == ControlLabel::FineTuning);
  CHECK(control_label(1.0) == ControlLabel::FineTuning);
  CHECK(control_label(1.5) == ControlLabel::Balanced);
  CHECK(control_label(2.0) == ControlLabel::Balanced);
  CHECK(control_label(2.01) == ControlLabel::Autonomous);
  CHECK(to_string(ControlLabel::FineTuning) == "fine-tuning");
  BlendConfig bad;
  bad.d2 = 0.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("minimum obstacle distance matches a brute-force scan") {
  WorldState w;
  auto add = [&](BodyKind k, Vec2 p, double r) {
    Body b;
    b.id = static_cast<int>(w.bodies.size());
    b.kind = k;
    b.position = p;
    b.radius = r;
    w.bodies.push_back(b);
  };
  add(BodyKind::Robot, {0, 0}, 1);
  CHECK(std::isinf(min_obstacle_distance(w)));
  add(BodyKind::Obstacle, {4, 0}, 1);
  CHECK(min_obstacle_distance(w) == 2.0);
  w.bodies[1].position = {2, 0};
  CHECK(min_obstacle_distance(w) == 0.0);

  Rng rng(8, Stream::Scenario);
  for (int trial = 0; trial < 50; ++trial) {
    w.bodies.clear();
    const int n = 2 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i) {
      const BodyKind k = i < 2 ? BodyKind::Robot : (rng.uniform() < 0.3 ? BodyKind::Cell : BodyKind::Obstacle);
      add(k, {40 * rng.uniform(), 40 * rng.uniform()}, 0.5 + 2 * rng.uniform());
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& a : w.bodies) {
      if (a.kind != BodyKind::Robot) continue;
      for (const auto& o : w.bodies) {
        if (o.kind != BodyKind::Obstacle) continue;
        const double c = std::hypot(a.position.x - o.position.x, a.position.y - o.position.y) - a.radius - o.radius;
        best = std::min(best, std::max(0.0, c));
      }
    }
    if (std::isinf(best)) CHECK(std::isinf(min_obstacle_distance(w)));
    else CHECK(min_obstacle_distance(w) == doctest::Approx(best).epsilon(1e-14));
  }
}

TEST_CASE("low-pass filter: identity, geometric decay, attenuation, bounded output") {
  LowPassState id{1.0, {5, 5}};
  CHECK(lowpass(id, {1, -2}) == Vec2{1, -2});

  LowPassState s{0.2, {0, 0}};
  for (int k = 1; k <= 30; ++k) {
    const Vec2 out = lowpass(s, {1, 0});
    CHECK(1.0 - out.x == doctest::Approx(std::pow(0.8, k)).epsilon(1e-12));
  }

  LowPassState alt{0.2, {0, 0}};
  double amp = 0.0;
  for (int k = 0; k < 200; ++k) {
    const Vec2 out = lowpass(alt, {k % 2 ? -1.0 : 1.0, 0});
    amp = std::max(amp, std::abs(out.x));
  }
  CHECK(amp < 0.35);

  LowPassState b{0.37, {0, 0}};
  Rng rng(2, Stream::Scenario);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 out = lowpass(b, {2 * rng.uniform() - 1, 0});
    CHECK(std::abs(out.x) <= 1.0);
  }
}

TEST_CASE("haptic sample renders the scaled reaction force") {
  OpticalTrap trap;
  LowPassState f{0.2, {0, 0}};
  const HapticSample zero = haptic_force(trap, {0, 0}, 10.0, f);
  CHECK(zero.raw_force == Vec2{0, 0});
  CHECK(zero.scaled_force == Vec2{0, 0});
  double prev = 0.0;
  HapticSample h;
  for (int k = 0; k < 200; ++k) {
    h = haptic_force(trap, {0.2, 0}, 10.0, f);
    CHECK(h.scaled_force.x >= prev);  // monotone, no overshoot
    CHECK(h.scaled_force.x <= 0.91 + 1e-12);
    prev = h.scaled_force.x;
  }
  CHECK(h.raw_force.x == doctest::Approx(0.091));  // reaction points away from the trap
  CHECK(h.scaled_force.x == doctest::Approx(0.91).epsilon(1e-9));
}

TEST_CASE("operator increments are clamped") {
  const double lim = operator_increment_limit(0.01);
  CHECK(lim == doctest::Approx(0.510 * 0.01 * 3));
  const Vec2 c = clamp_increment({3, 4}, lim);
  CHECK(c.norm() == doctest::Approx(lim));
  CHECK(c.x / c.y == doctest::Approx(0.75));
  CHECK(clamp_increment({0.001, 0}, lim) == Vec2{0.001, 0});
}

TEST_CASE("synthetic operator: silent on path, dodges obstacles, deterministic") {
  const SmoothPath path(std::vector<Vec2>{{0, 0}, {50, 0}});
  OperatorProfile p;
  p.tremor_std = 0.0;
  OperatorView view;
  view.progress = 10.0;
  view.reference = {10, 0};
  view.formation.push_back({{10, 0}, 1.0});
  SyntheticOperator op(p, 1);
  for (int i = 0; i < 50; ++i) CHECK(op.next(view, path).delta_p_h == Vec2{0, 0});

  view.obstacles.push_back({{12.5, 0}, 1.0});  // dead ahead, clearance 0.5
  const Vec2 v = op.intent(view, path);
  CHECK(std::abs(v.y) > 0.0);
  CHECK(v.y > 0.0);  // steps to the left of the heading

  OperatorProfile noisy = teleop_operator_profile();
  noisy.tremor_std = 0.3;
  SyntheticOperator a(noisy, 5), b(noisy, 5), c(noisy, 6);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const Vec2 x = a.next(view, path).delta_p_h;
    CHECK(x == b.next(view, path).delta_p_h);
    differs = differs || x != c.next(view, path).delta_p_h;
  }
  CHECK(differs);
}

TEST_CASE("reaction delay holds the first inputs back") {
  const SmoothPath path(std::vector<Vec2>{{0, 0}, {50, 0}});
  OperatorProfile p;
  p.advance_speed = 0.3;
  p.reaction_delay = 0.05;
  OperatorView view;
  view.dt = 0.01;
  view.reference = {10, 0};
  view.progress = 10;
  SyntheticOperator op(p, 1);
  int zeros = 0;
  for (int i = 0; i < 10; ++i) zeros += op.next(view, path).delta_p_h == Vec2{0, 0};
  CHECK(zeros == 5);
}

TEST_CASE("shared control with a silent operator commands the scaled autonomous increment") {
  const Scenario sc = load_scenario(data_dir() / "scenarios" / "crossing.json");
  const SmoothPath path = plan_task_path(sc);
  TransportEpisode ep(sc, path, {});
  ep.reset(4);
  SharedController ctl;
  const OperatorInput silent{};
  int far_ticks = 0;
  for (int i = 0; i < 400 && !ep.done(); ++i) {
    const Vec2 before = ep.reference();
    const SharedTelemetry t = ctl.step(ep, OperatingMode::Shared, 3, silent);
    CHECK(t.dp_h == Vec2{0, 0});
    CHECK(t.dp == t.dp_r * ((1.0 - t.alpha) * 1.0));
    CHECK(t.alpha == alpha(t.d));
    CHECK(t.label == control_label(t.d));
    CHECK(t.dp_r.norm() == doctest::Approx(kSpeedLevels[3] * ep.sim_config().dt));
    const Vec2 moved = ep.reference() - before;
    CHECK(moved.x == doctest::Approx(t.dp.x).epsilon(1e-9));
    CHECK(moved.y == doctest::Approx(t.dp.y).epsilon(1e-9));
    if (t.d > 2.0) {
      ++far_ticks;
      CHECK(t.dp == t.dp_r * 0.9);
    }
  }
  CHECK(far_ticks > 0);
}

TEST_CASE("mode names round-trip") {
  for (auto m : {OperatingMode::Manual, OperatingMode::Autonomous, OperatingMode::Shared})
    CHECK(operating_mode_from_string(to_string(m)) == m);
  CHECK_THROWS(operating_mode_from_string("hybrid"));
  CHECK(input_source_from_string("ui") == InputSource::Ui);
}
