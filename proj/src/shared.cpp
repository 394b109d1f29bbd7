#include "otgym/shared.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "otgym/rl.hpp"

namespace otgym {

void BlendConfig::validate() const {
  if (!(d1 >= 0.0 && d1 < d2)) throw std::invalid_argument("blend config: need 0 <= d1 < d2");
  if (!(alpha_near >= 0.0 && alpha_near <= 1.0 && alpha_far >= 0.0 && alpha_far <= 1.0)) {
    throw std::invalid_argument("blend config: alpha values must lie in [0, 1]");
  }
  if (!std::isfinite(tau)) throw std::invalid_argument("blend config: tau must be finite");
}

nlohmann::json to_json(const BlendConfig& c) {
  return {{"d1", c.d1}, {"d2", c.d2}, {"tau", c.tau}, {"alpha_near", c.alpha_near}, {"alpha_far", c.alpha_far}};
}

BlendConfig blend_config_from_json(const nlohmann::json& j, BlendConfig c) {
  if (!j.is_object()) throw std::invalid_argument("blend config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const double v = it.value().get<double>();
    if (k == "d1") c.d1 = v;
    else if (k == "d2") c.d2 = v;
    else if (k == "tau") c.tau = v;
    else if (k == "alpha_near") c.alpha_near = v;
    else if (k == "alpha_far") c.alpha_far = v;
    else throw std::invalid_argument("blend config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

double alpha(double d, const BlendConfig& cfg) {
  if (d <= cfg.d1) return cfg.alpha_near;
  if (d <= cfg.d2) {
    const double a = cfg.alpha_near - (cfg.alpha_near - cfg.alpha_far) * (d - cfg.d1) / (cfg.d2 - cfg.d1);
    // Rounding at d2 must not step past the far value.
    return std::clamp(a, std::min(cfg.alpha_near, cfg.alpha_far), std::max(cfg.alpha_near, cfg.alpha_far));
  }
  return cfg.alpha_far;
}

Vec2 blend(const Vec2& dp_h, const Vec2& dp_r, double a, double tau) {
  return (dp_h * a + dp_r * (1.0 - a)) * tau;
}

std::string to_string(ControlLabel label) {
  switch (label) {
    case ControlLabel::FineTuning: return "fine-tuning";
    case ControlLabel::Balanced: return "balanced";
    case ControlLabel::Autonomous: return "autonomous";
  }
  return "unknown";
}

ControlLabel control_label(double d, const BlendConfig& cfg) {
  if (d <= cfg.d1) return ControlLabel::FineTuning;
  if (d <= cfg.d2) return ControlLabel::Balanced;
  return ControlLabel::Autonomous;
}

double min_obstacle_distance(const WorldState& world, std::span<const int> extra_body_ids) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& a : world.bodies) {
    const bool counted = a.kind == BodyKind::Robot ||
                         std::find(extra_body_ids.begin(), extra_body_ids.end(), a.id) != extra_body_ids.end();
    if (!counted || a.is_obstacle()) continue;
    for (const auto& o : world.bodies) {
      if (!o.is_obstacle()) continue;
      best = std::min(best, std::max(0.0, distance(a.position, o.position) - a.radius - o.radius));
    }
  }
  return best;
}

Vec2 lowpass(LowPassState& state, const Vec2& sample) {
  state.previous = sample * state.beta + state.previous * (1.0 - state.beta);
  return state.previous;
}

HapticSample haptic_force(const OpticalTrap& trap, const Vec2& robot_pos, double scale, LowPassState& filter) {
  HapticSample h;
  h.raw_force = -optical_force(trap, robot_pos);
  h.scaled_force = lowpass(filter, h.raw_force) * scale;
  h.filtered = true;
  return h;
}

std::string to_string(InputSource s) {
  switch (s) {
    case InputSource::Ui: return "ui";
    case InputSource::Synthetic: return "synthetic";
    case InputSource::Replay: return "replay";
  }
  return "unknown";
}

InputSource input_source_from_string(const std::string& s) {
  if (s == "ui") return InputSource::Ui;
  if (s == "synthetic") return InputSource::Synthetic;
  if (s == "replay") return InputSource::Replay;
  throw std::invalid_argument("unknown input source '" + s + "'");
}

double operator_increment_limit(double dt) { return kSpeedLevels.back() * dt * 3.0; }

Vec2 clamp_increment(const Vec2& v, double limit) {
  if (!std::isfinite(v.x) || !std::isfinite(v.y)) return {};
  const double n = v.norm();
  return n > limit ? v * (limit / n) : v;
}

// ---------------------------------------------------------------------------
// Synthetic operator

void OperatorProfile::validate() const {
  auto bad = [](const char* m) { throw std::invalid_argument(std::string("operator profile: ") + m); };
  if (!(advance_speed >= 0.0)) bad("advance_speed must be >= 0");
  if (!(pull_gain >= 0.0)) bad("pull_gain must be >= 0");
  if (!(repulse_speed >= 0.0 && sidestep_speed >= 0.0)) bad("avoidance speeds must be >= 0");
  if (!(perception_range > 0.0)) bad("perception_range must be > 0");
  if (!(caution >= 0.0 && caution <= 1.0)) bad("caution must lie in [0, 1]");
  if (!(tremor_std >= 0.0)) bad("tremor_std must be >= 0");
  if (!(reaction_delay >= 0.0)) bad("reaction_delay must be >= 0");
}

OperatorProfile teleop_operator_profile() {
  OperatorProfile p;
  p.advance_speed = 0.13;
  p.tremor_std = 0.05;
  return p;
}

OperatorProfile sketch_operator_profile() {
  OperatorProfile p;
  p.advance_speed = 0.3;
  p.tremor_std = 0.5;
  return p;
}

nlohmann::json to_json(const OperatorProfile& p) {
  return {{"advance_speed", p.advance_speed}, {"pull_gain", p.pull_gain},
          {"repulse_speed", p.repulse_speed}, {"sidestep_speed", p.sidestep_speed},
          {"perception_range", p.perception_range}, {"caution", p.caution},
          {"tremor_std", p.tremor_std},       {"reaction_delay", p.reaction_delay}};
}

OperatorProfile operator_profile_from_json(const nlohmann::json& j, OperatorProfile p) {
  if (!j.is_object()) throw std::invalid_argument("operator profile must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const double v = it.value().get<double>();
    const std::string& k = it.key();
    if (k == "advance_speed") p.advance_speed = v;
    else if (k == "pull_gain") p.pull_gain = v;
    else if (k == "repulse_speed") p.repulse_speed = v;
    else if (k == "sidestep_speed") p.sidestep_speed = v;
    else if (k == "perception_range") p.perception_range = v;
    else if (k == "caution") p.caution = v;
    else if (k == "tremor_std") p.tremor_std = v;
    else if (k == "reaction_delay") p.reaction_delay = v;
    else throw std::invalid_argument("operator profile: unknown key '" + k + "'");
  }
  p.validate();
  return p;
}

OperatorView operator_view(const TransportEpisode& episode) {
  OperatorView v;
  const WorldState& w = episode.world();
  v.time = w.time;
  v.dt = episode.sim_config().dt;
  v.reference = episode.reference();
  v.progress = episode.progress();
  const TaskSpec& task = episode.task();
  for (int id : task.robot_ids) {
    const Body* b = w.find_body(id);
    v.formation.push_back({b->position, b->radius});
  }
  const Body* cell = w.find_body(task.cell_id);
  v.formation.push_back({cell->position, cell->radius});
  for (const auto& b : w.bodies) {
    if (b.is_obstacle()) v.obstacles.push_back({b.position, b.radius});
  }
  return v;
}

SyntheticOperator::SyntheticOperator(OperatorProfile profile, std::uint64_t seed)
    : profile_(profile), rng_(seed, Stream::Operator) {
  profile_.validate();
}

Vec2 SyntheticOperator::intent(const OperatorView& view, const SmoothPath& path) const {
  const OperatorProfile& p = profile_;
  const Vec2 on_path = path.point_at(view.progress);
  const Vec2 t = path.tangent_at(view.progress);
  const Vec2 n = t.perp();

  // Closest formation/obstacle pair.
  double d = std::numeric_limits<double>::infinity();
  Vec2 away, obstacle;
  for (const auto& f : view.formation) {
    for (const auto& o : view.obstacles) {
      const double c = std::max(0.0, distance(f.center, o.center) - f.radius - o.radius);
      if (c < d) {
        d = c;
        const Vec2 sep = f.center - o.center;
        away = sep.squared_norm() > 0.0 ? sep.normalized() : -t;
        obstacle = o.center;
      }
    }
  }
  const double range = p.perception_range;
  const double threat = d < range ? 1.0 - d / range : 0.0;  // 0 far, 1 at contact

  Vec2 v = t * (p.advance_speed * (1.0 - p.caution * threat));
  // Attention shifts from the path to the obstacle as it closes in.
  v += (on_path - view.reference) * (p.pull_gain * (1.0 - threat));
  if (threat > 0.0) {
    v += away * (p.repulse_speed * threat);
    const Vec2 rel = obstacle - view.reference;
    if (rel.dot(t) > 0.0) {
      const double lateral = rel.dot(n);
      const double side = lateral > 1e-9 ? -1.0 : 1.0;  // dead ahead: step to the left
      v += n * (side * p.sidestep_speed * threat);
    }
  }
  return v;
}

OperatorInput SyntheticOperator::next(const OperatorView& view, const SmoothPath& path) {
  Vec2 v = intent(view, path);
  // Both normals are drawn every tick so the noise sequence does not depend on
  // the profile.
  const double nx = rng_.normal(), ny = rng_.normal();
  v += Vec2{nx, ny} * profile_.tremor_std;
  pipeline_.push_back(v * view.dt);
  const auto delay_ticks = static_cast<std::size_t>(std::lround(profile_.reaction_delay / view.dt));
  Vec2 out;
  if (pipeline_.size() > delay_ticks) {
    out = pipeline_.front();
    pipeline_.pop_front();
  }
  return {clamp_increment(out, operator_increment_limit(view.dt)), view.time, InputSource::Synthetic};
}

// ---------------------------------------------------------------------------
// Arbitration

std::string to_string(OperatingMode m) {
  switch (m) {
    case OperatingMode::Manual: return "manual";
    case OperatingMode::Autonomous: return "autonomous";
    case OperatingMode::Shared: return "shared";
  }
  return "unknown";
}

OperatingMode operating_mode_from_string(const std::string& s) {
  if (s == "manual") return OperatingMode::Manual;
  if (s == "autonomous") return OperatingMode::Autonomous;
  if (s == "shared") return OperatingMode::Shared;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

nlohmann::json to_json(const SharedTelemetry& t) {
  nlohmann::json j = {{"time", t.time},
                      {"alpha", t.alpha},
                      {"mode", to_string(t.label)},
                      {"dp_h", to_json(t.dp_h)},
                      {"dp_r", to_json(t.dp_r)},
                      {"dp", to_json(t.dp)},
                      {"speed_level", t.speed_level}};
  j["d"] = std::isfinite(t.d) ? nlohmann::json(t.d) : nlohmann::json(nullptr);
  j["haptic"] = nlohmann::json::array();
  for (const auto& h : t.haptic) {
    j["haptic"].push_back({{"raw_force", to_json(h.raw_force)}, {"scaled_force", to_json(h.scaled_force)}});
  }
  return j;
}

SharedController::SharedController(BlendConfig blend, double filter_beta, double haptic_scale)
    : blend_(blend), beta_(filter_beta), haptic_scale_(haptic_scale) {
  blend_.validate();
  if (!(filter_beta > 0.0 && filter_beta <= 1.0)) throw std::invalid_argument("filter beta must lie in (0, 1]");
  reset();
}

void SharedController::reset() {
  operator_filter_ = {beta_, {}};
  haptic_filters_ = {LowPassState{beta_, {}}, LowPassState{beta_, {}}};
}

SharedTelemetry SharedController::step(TransportEpisode& episode, OperatingMode mode, int speed_level,
                                       const OperatorInput& input) {
  if (speed_level < 0 || speed_level >= kNumSpeedLevels) throw std::out_of_range("speed level out of range");
  SharedTelemetry tel;
  const double dt = episode.sim_config().dt;
  tel.time = episode.time();
  tel.speed_level = speed_level;
  tel.dp_h = lowpass(operator_filter_, clamp_increment(input.delta_p_h, operator_increment_limit(dt)));
  tel.dp_r = episode.heading_at(episode.progress()) * (kSpeedLevels[speed_level] * dt);
  const int cell = episode.task().cell_id;
  tel.d = min_obstacle_distance(episode.world(), std::span<const int>(&cell, 1));
  tel.label = control_label(tel.d, blend_);

  switch (mode) {
    case OperatingMode::Manual:
      tel.alpha = 1.0;
      tel.dp = tel.dp_h * blend_.tau;
      episode.tick_with_increment(tel.dp);
      break;
    case OperatingMode::Shared:
      tel.alpha = alpha(tel.d, blend_);
      tel.dp = blend(tel.dp_h, tel.dp_r, tel.alpha, blend_.tau);
      episode.tick_with_increment(tel.dp);
      break;
    case OperatingMode::Autonomous: {
      // Exact path following, as in training.
      tel.alpha = 0.0;
      const Vec2 before = episode.reference();
      episode.tick_along_path(kSpeedLevels[speed_level]);
      tel.dp = episode.reference() - before;
      break;
    }
  }

  const WorldState& w = episode.world();
  for (std::size_t i = 0; i < 2 && i < episode.task().robot_ids.size(); ++i) {
    const Body* robot = w.find_body(episode.task().robot_ids[i]);
    const OpticalTrap* trap = w.trap_for_body(robot->id);
    if (trap) tel.haptic[i] = haptic_force(*trap, robot->position, haptic_scale_, haptic_filters_[i]);
  }
  return tel;
}

nlohmann::json to_json(const ModeEpisodeResult& r) {
  nlohmann::json j = {{"mode", to_string(r.mode)},
                      {"seed", r.seed},
                      {"success", r.success},
                      {"termination", to_string(r.termination)},
                      {"completion_time", r.completion_time},
                      {"label_fraction",
                       {{"fine-tuning", r.label_fraction[0]},
                        {"balanced", r.label_fraction[1]},
                        {"autonomous", r.label_fraction[2]}}}};
  j["failure"] = r.failure ? nlohmann::json(to_string(*r.failure)) : nlohmann::json(nullptr);
  j["min_clearance"] = std::isfinite(r.min_clearance) ? nlohmann::json(r.min_clearance) : nlohmann::json(nullptr);
  return j;
}

ModeEpisodeResult run_mode_episode(OperatingMode mode, const Scenario& scenario, const SmoothPath& path,
                                   SpeedPolicy* policy, std::uint64_t seed, const ModeRunOptions& options) {
  if (mode != OperatingMode::Manual && policy == nullptr) {
    throw std::invalid_argument(to_string(mode) + " mode needs a speed policy");
  }
  TransportEpisode episode(scenario, path, options.env);
  episode.reset(seed);
  SharedController controller(options.blend, options.filter_beta, options.haptic_scale);
  SyntheticOperator op(options.operator_profile, seed);
  Rng policy_rng(seed, Stream::Exploration);

  ModeEpisodeResult r;
  r.mode = mode;
  r.seed = seed;
  const int interval = episode.config().decision_interval;
  int level = 0;
  std::array<std::uint64_t, 3> label_ticks{};
  std::uint64_t ticks = 0;
  r.reference_path.push_back(episode.reference());
  while (!episode.done()) {
    if (mode != OperatingMode::Manual && ticks % static_cast<std::uint64_t>(interval) == 0) {
      level = policy->act(episode.observe(level), policy_rng);
    }
    const OperatorInput input =
        mode == OperatingMode::Autonomous ? OperatorInput{} : op.next(operator_view(episode), path);
    const SharedTelemetry tel = controller.step(episode, mode, level, input);
    ++ticks;
    ++label_ticks[static_cast<int>(tel.label)];
    r.min_clearance = std::min(r.min_clearance, tel.d);
    r.reference_path.push_back(episode.reference());
    if (options.keep_telemetry) r.telemetry.push_back(tel);
  }
  r.termination = episode.termination();
  r.success = episode.success();
  if (episode.world().failure) r.failure = episode.world().failure->kind;
  r.completion_time = episode.time();
  for (int i = 0; i < 3; ++i) r.label_fraction[i] = ticks ? static_cast<double>(label_ticks[i]) / ticks : 0.0;
  return r;
}

std::vector<Vec2> operator_rollout(const Scenario& scenario, const SmoothPath& path, const OperatorProfile& profile,
                                   std::uint64_t seed, double max_time) {
  if (!(profile.advance_speed > 0.0)) throw std::invalid_argument("operator rollout needs advance_speed > 0");
  EnvConfig env;
  env.record_traces = false;
  TransportEpisode episode(scenario, path, env);
  episode.reset(seed);  // formation geometry and seeded obstacle phases
  const WorldState& world = episode.world();
  const TaskSpec& task = episode.task();
  const double dt = scenario.config.dt;

  SyntheticOperator op(profile, seed);
  LowPassState filter{0.2, {}};
  const Body* cell = world.find_body(task.cell_id);
  std::vector<const Body*> obstacles;
  for (const auto& b : world.bodies) {
    if (b.is_obstacle()) obstacles.push_back(&b);
  }

  OperatorView view;
  view.dt = dt;
  view.reference = path.front();
  view.progress = 0.0;
  std::vector<Vec2> out{view.reference};
  const double end = path.length();
  for (double t = 0.0; t < max_time && view.progress < end - 1e-9; t += dt) {
    view.time = t;
    view.formation.clear();
    const auto targets = episode.trap_targets(view.reference, episode.heading_at(view.progress));
    for (std::size_t i = 0; i < 2; ++i) {
      view.formation.push_back({targets[i], world.find_body(task.robot_ids[i])->radius});
    }
    view.formation.push_back({view.reference, cell->radius});
    view.obstacles.clear();
    for (const Body* o : obstacles) view.obstacles.push_back({patrol_position(*o, t), o->radius});

    const Vec2 dp = lowpass(filter, op.next(view, path).delta_p_h);
    view.reference += dp;
    view.progress = path.project(view.reference, view.progress, 1.0 + 10.0 * dp.norm());
    out.push_back(view.reference);
  }
  return out;
}

std::vector<Vec2> operator_sketch(const SmoothPath& path, const OperatorProfile& profile, std::uint64_t seed,
                                  double dt, double max_time) {
  if (!(profile.advance_speed > 0.0)) throw std::invalid_argument("operator sketch needs advance_speed > 0");
  if (!(dt > 0.0)) throw std::invalid_argument("operator sketch needs dt > 0");
  if (path.empty()) throw std::invalid_argument("operator sketch needs a path");
  if (max_time <= 0.0) max_time = 4.0 * path.length() / profile.advance_speed;

  SyntheticOperator op(profile, seed);
  LowPassState filter{0.2, {}};
  OperatorView view;
  view.dt = dt;
  view.reference = path.front();
  std::vector<Vec2> out{view.reference};
  const double end = path.length();
  for (double t = 0.0; t < max_time && view.progress < end - 1e-9; t += dt) {
    view.time = t;
    const Vec2 dp = lowpass(filter, op.next(view, path).delta_p_h);
    view.reference += dp;
    view.progress = path.project(view.reference, view.progress, 1.0 + 10.0 * dp.norm());
    out.push_back(view.reference);
  }
  return out;
}

}  // namespace otgym
