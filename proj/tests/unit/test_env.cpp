#include <doctest.h>

#include <cmath>

#include "otgym/env.hpp"
#include "otgym/rl.hpp"
#include "otgym/session.hpp"

using namespace otgym;

namespace {

const Scenario& crossing() {
  static const Scenario sc = load_scenario(data_dir() / "scenarios" / "crossing.json");
  return sc;
}

}  // namespace

TEST_CASE("reward components by hand") {
  RewardConfig c;
  StepOutcome o;
  o.max_contact_force = 1.0;
  o.speed_index = 2;
  RewardBreakdown r = compute_reward(o, c);
  CHECK(r.contact_force == 0.5);
  CHECK(r.collision == 0.0);
  CHECK(r.speed == doctest::Approx(0.3));
  CHECK(r.total == doctest::Approx(0.8));
  CHECK_FALSE(r.done);

  o.max_contact_force = 0.0;  // lost grip
  CHECK(compute_reward(o, c).contact_force == -1.0);
  o.max_contact_force = 10.5;  // crushing
  CHECK(compute_reward(o, c).contact_force == -1.0);
  o.max_contact_force = c.f_damage;  // boundary is inside
  CHECK(compute_reward(o, c).contact_force == 0.5);

  for (int which = 0; which < 4; ++which) {
    StepOutcome f;
    f.max_contact_force = 1.0;
    f.speed_index = 5;
    f.collision = which == 0;
    f.trap_loss = which == 1;
    f.cell_lost = which == 2;
    f.deviation_sustained = which == 3;
    r = compute_reward(f, c);
    CHECK(r.done);
    CHECK(r.total == doctest::Approx(0.5 - 10.0 + 0.6));
  }
}

TEST_CASE("observation has 16 finite entries with progress in [0, 1]") {
  const SmoothPath path = plan_task_path(crossing());
  TransportEpisode ep(crossing(), path, {});
  ep.reset(3);
  for (int i = 0; i < 300 && !ep.done(); ++i) {
    ep.tick_along_path(kSpeedLevels[3]);
    const StateVector s = ep.observe(3);
    for (float v : s) CHECK(std::isfinite(v));
    CHECK(s[14] >= 0.0f);
    CHECK(s[14] <= 1.0f);
  }
  CHECK(ep.progress_fraction() > 0.0);
  CHECK(ep.observe(0)[15] != ep.observe(5)[15]);
}

TEST_CASE("reference advances by speed times dt per tick") {
  const SmoothPath path = plan_task_path(crossing());
  TransportEpisode ep(crossing(), path, {});
  ep.reset(1);
  const double dt = ep.sim_config().dt;
  for (int i = 0; i < 100; ++i) ep.tick_along_path(0.5);
  CHECK(ep.progress() == doctest::Approx(100 * 0.5 * dt).epsilon(1e-9));
  CHECK(ep.ticks() == 100);
}

TEST_CASE("episodes are deterministic for a seed") {
  const SmoothPath path = plan_task_path(crossing());
  EnvConfig cfg;
  cfg.max_decisions = 20;
  auto run = [&](std::uint64_t seed) {
    TransportEpisode ep(crossing(), path, cfg);
    RandomPolicy policy;
    Rng prng(seed, Stream::Exploration);
    return run_episode(ep, seed, policy, prng);
  };
  const EpisodeResult a = run(9), b = run(9), c = run(10);
  CHECK(a.actions == b.actions);
  CHECK(a.cumulative_reward == b.cumulative_reward);
  CHECK(a.trace.trap_distance == b.trace.trap_distance);
  CHECK(a.completion_time == b.completion_time);
  CHECK(a.trace.trap_distance != c.trace.trap_distance);
  CHECK(a.decisions <= 20);
}

TEST_CASE("emitted transitions mark only real terminations as done") {
  const SmoothPath path = plan_task_path(crossing());
  EnvConfig cfg;
  cfg.max_decisions = 5;  // truncation, not a terminal state
  TransportEpisode ep(crossing(), path, cfg);
  ConstantSpeedPolicy policy(0);
  Rng prng(1, Stream::Exploration);
  std::vector<Transition> seen;
  const EpisodeResult r = run_episode(ep, 2, policy, prng, [&](const Transition& t) { seen.push_back(t); });
  REQUIRE(seen.size() == 5);
  CHECK(r.termination == Termination::TimeLimit);
  for (const auto& t : seen) CHECK_FALSE(t.done);
  CHECK(seen[1].state == seen[0].next_state);
}

TEST_CASE("env config rejects unknown keys") {
  CHECK_THROWS(env_config_from_json({{"decision_intervals", 3}}));
  const EnvConfig c = env_config_from_json({{"decision_interval", 3}});
  CHECK(c.decision_interval == 3);
}
