#include <doctest.h>

#include <cmath>
#include <numbers>

#include "otgym/scenario.hpp"
#include "otgym/sim.hpp"

using namespace otgym;

namespace {

// Force law written out per branch in polar form, independent of the library.
Vec2 force_oracle(double r, double theta, const OpticalTrap& t) {
  if (r == 0.0) return {};
  const double mag = r < t.delta ? t.stiffness * r : t.far_a / (r * r) + t.far_c;
  // Object sits at trap + r(cos, sin); the force points back at the trap.
  return {-mag * std::cos(theta), -mag * std::sin(theta)};
}

WorldState lone_robot(Vec2 offset, double diffusion) {
  WorldState w;
  Body b;
  b.id = 0;
  b.kind = BodyKind::Robot;
  b.position = offset;
  b.radius = 1.0;
  b.gamma = 0.1;
  b.diffusion = diffusion;
  w.bodies.push_back(b);
  OpticalTrap t;
  t.id = 0;
  t.attached_body = 0;
  w.traps.push_back(t);
  w.rng = Rng(99, Stream::Brownian);
  return w;
}

}  // namespace

TEST_CASE("optical force: worked values") {
  OpticalTrap t;
  CHECK(optical_force(t, {0, 0}).norm() == 0.0);
  CHECK(optical_force(t, {0.2, 0}).x == doctest::Approx(-0.091).epsilon(1e-14));
  CHECK(optical_force(t, {0, -1.0}).y == doctest::Approx(0.068).epsilon(1e-14));
}

TEST_CASE("optical force matches both branches at sampled distances") {
  OpticalTrap t;
  t.position = {3.0, -2.0};
  for (int i = 1; i <= 100; ++i) {
    const double r = 1.5 * i / 100.0;  // spans 0.015 .. 1.5, across delta
    const double theta = 0.37 * i;
    const Vec2 p = t.position + Vec2{r * std::cos(theta), r * std::sin(theta)};
    // The recovered offset differs from (r, theta) by rounding; re-derive it.
    const Vec2 d = p - t.position;
    const Vec2 expect = force_oracle(d.norm(), std::atan2(d.y, d.x), t);
    const Vec2 got = optical_force(t, p);
    CHECK(std::abs(got.x - expect.x) <= 1e-15 + 4e-16 * std::abs(expect.x));
    CHECK(std::abs(got.y - expect.y) <= 1e-15 + 4e-16 * std::abs(expect.y));
  }
}

TEST_CASE("optical force jumps at the branch boundary") {
  OpticalTrap t;
  const double inside = optical_force(t, {std::nextafter(t.delta, 0.0), 0}).norm();
  const double outside = optical_force(t, {t.delta, 0}).norm();
  CHECK(inside == doctest::Approx(0.455 * 0.446));
  CHECK(outside == doctest::Approx(0.058 / (0.446 * 0.446) + 0.01));
  CHECK(outside > inside);
}

TEST_CASE("brownian displacement variance is 2 D dt per axis") {
  const double D = 0.05, dt = 0.01;
  Rng rng(2024, Stream::Brownian);
  const int n = 100000;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 d = brownian_displacement(D, dt, rng);
    sx += d.x;
    sy += d.y;
    sxx += d.x * d.x;
    syy += d.y * d.y;
    sxy += d.x * d.y;
  }
  const double var = 2 * D * dt;
  CHECK(std::abs(sxx / n - var) < 0.05 * var);
  CHECK(std::abs(syy / n - var) < 0.05 * var);
  CHECK(std::abs(sx / n) < 5 * std::sqrt(var / n));
  CHECK(std::abs(sxy / n) < 0.05 * var);  // axes uncorrelated

  Rng a(7, Stream::Brownian), b(7, Stream::Brownian);
  for (int i = 0; i < 100; ++i) CHECK(brownian_displacement(D, dt, a) == brownian_displacement(D, dt, b));
  CHECK(brownian_displacement(0.0, dt, a) == Vec2{});
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(5, Stream::Brownian), b(5, Stream::Brownian), c(5, Stream::Exploration);
  int same = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    same += x == c.next_u64();
  }
  CHECK(same == 0);
  Rng u(1);
  double mean = 0;
  for (int i = 0; i < 20000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v / 20000;
  }
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  Rng k(3);
  for (int i = 0; i < 1000; ++i) CHECK(k.below(6) < 6);
}

TEST_CASE("noise-free trapped robot relaxes as the explicit Euler product") {
  // Near branch, no noise, no flow: x' = -K x / gamma, integrated with dt / substeps.
  SimConfig cfg;
  WorldState w = lone_robot({0.3, 0.0}, 0.0);
  const double k = w.traps[0].stiffness, g = w.bodies[0].gamma, h = cfg.dt / cfg.substeps;
  double x = 0.3;
  for (int step = 0; step < 200; ++step) {
    advance_world(w, {}, cfg);
    for (int s = 0; s < cfg.substeps; ++s) x *= 1.0 - k * h / g;
    REQUIRE(!w.failure);
  }
  CHECK(w.bodies[0].position.x == doctest::Approx(x).epsilon(1e-12));
  CHECK(w.bodies[0].position.y == 0.0);
  // and close to the continuous solution
  CHECK(w.bodies[0].position.x == doctest::Approx(0.3 * std::exp(-k * 2.0 / g)).epsilon(0.01));
}

TEST_CASE("world stepping is deterministic under a fixed seed") {
  WorldState a = lone_robot({0.1, 0.1}, 0.05), b = lone_robot({0.1, 0.1}, 0.05);
  SimConfig cfg;
  for (int i = 0; i < 500; ++i) {
    advance_world(a, {}, cfg);
    advance_world(b, {}, cfg);
  }
  CHECK(serialize(a) == serialize(b));
  CHECK(world_hash(a) == world_hash(b));
  WorldState c = lone_robot({0.1, 0.1}, 0.05);
  c.rng = Rng(100, Stream::Brownian);
  for (int i = 0; i < 500; ++i) advance_world(c, {}, cfg);
  CHECK(world_hash(a) != world_hash(c));
}

TEST_CASE("trap escape is reported as a failure") {
  SimConfig cfg;
  WorldState w = lone_robot({0.0, 0.0}, 0.0);
  const Vec2 far[] = {{5.0, 0.0}};
  advance_world(w, far, cfg);
  REQUIRE(w.failure);
  CHECK(w.failure->kind == FailureKind::TrapEscape);
  CHECK_THROWS_AS(advance_world(w, {}, cfg), SimError);
}

TEST_CASE("trap command count is checked") {
  SimConfig cfg;
  WorldState w = lone_robot({0.0, 0.0}, 0.0);
  const Vec2 two[] = {{0, 0}, {1, 1}};
  CHECK_THROWS_AS(advance_world(w, two, cfg), SimError);
}

TEST_CASE("contact force is a repulsive spring on overlap") {
  Body a, b;
  a.position = {0, 0};
  b.position = {1.9, 0};
  a.radius = b.radius = 1.0;
  const ContactResult c = contact(a, b, 10.0, 0.0);
  CHECK(c.penetration == doctest::Approx(0.1));
  CHECK(c.force.x == doctest::Approx(-1.0));  // pushes a away from b
  b.position = {2.5, 0};
  CHECK(contact(a, b, 10.0, 0.0).force.norm() == 0.0);
}

TEST_CASE("patrolling obstacle follows its loop") {
  Body o;
  o.kind = BodyKind::Obstacle;
  o.waypoints = {{0, 0}, {4, 0}};
  o.patrol_speed = 1.0;
  CHECK(patrol_position(o, 0.0) == Vec2{0, 0});
  CHECK(patrol_position(o, 2.0).x == doctest::Approx(2.0));
  CHECK(patrol_position(o, 6.0).x == doctest::Approx(2.0));  // on the way back
  CHECK(patrol_position(o, 8.0).x == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chip geometry: free space, flow and walls") {
  const Scenario sc = load_scenario(data_dir() / "scenarios" / "crossing.json");
  REQUIRE(sc.world.chip);
  const ChipGeometry& chip = *sc.world.chip;
  CHECK(chip.is_free({0, 0}));
  CHECK(chip.is_free({0, 30}));
  CHECK_FALSE(chip.is_free({30, 30}));
  CHECK(chip.flow_at({-20, 0}) == Vec2{0.1, 0.0});
  CHECK(chip.wall_contact({-20, 12.0}, 1.0).penetration == doctest::Approx(0.5));
  CHECK(chip.wall_contact({0, 12.0}, 1.0).penetration <= 0.0);  // opening into the side branch
  CHECK(chip.wall_contact({0, 0}, 1.0).penetration <= 0.0);
}

TEST_CASE("scenario loading rejects bad documents with a field path") {
  nlohmann::json doc = load_scenario(data_dir() / "scenarios" / "crossing.json").source;
  doc["bodies"][0]["radius"] = -1.0;
  try {
    parse_scenario(doc);
    FAIL("expected ScenarioError");
  } catch (const ScenarioError& e) {
    CHECK(std::string(e.what()).find("bodies[0].radius") != std::string::npos);
  }
}
