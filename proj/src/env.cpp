#include "otgym/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace otgym {

nlohmann::json to_json(const RewardConfig& c) {
  return {{"contact_ok", c.contact_ok}, {"contact_bad", c.contact_bad}, {"failure", c.failure},
          {"speed_unit", c.speed_unit}, {"f_grasp_min", c.f_grasp_min}, {"f_damage", c.f_damage}};
}

RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig c) {
  if (!j.is_object()) throw std::invalid_argument("reward config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const double v = it.value().get<double>();
    if (k == "contact_ok") c.contact_ok = v;
    else if (k == "contact_bad") c.contact_bad = v;
    else if (k == "failure") c.failure = v;
    else if (k == "speed_unit") c.speed_unit = v;
    else if (k == "f_grasp_min") c.f_grasp_min = v;
    else if (k == "f_damage") c.f_damage = v;
    else throw std::invalid_argument("reward config: unknown key '" + k + "'");
  }
  if (!(c.f_grasp_min < c.f_damage)) throw std::invalid_argument("reward config: need f_grasp_min < f_damage");
  return c;
}

nlohmann::json to_json(const EnvConfig& c) {
  return {{"decision_interval", c.decision_interval},
          {"max_decisions", c.max_decisions},
          {"deviation_persistence", c.deviation_persistence},
          {"max_time", c.max_time},
          {"record_traces", c.record_traces},
          {"terminate_on_deviation", c.terminate_on_deviation},
          {"reward", to_json(c.reward)}};
}

EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig c) {
  if (!j.is_object()) throw std::invalid_argument("env config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "decision_interval") c.decision_interval = v.get<int>();
    else if (k == "max_decisions") c.max_decisions = v.get<int>();
    else if (k == "deviation_persistence") c.deviation_persistence = v.get<int>();
    else if (k == "max_time") c.max_time = v.get<double>();
    else if (k == "record_traces") c.record_traces = v.get<bool>();
    else if (k == "terminate_on_deviation") c.terminate_on_deviation = v.get<bool>();
    else if (k == "reward") c.reward = reward_config_from_json(v, c.reward);
    else throw std::invalid_argument("env config: unknown key '" + k + "'");
  }
  if (c.decision_interval < 1 || c.max_decisions < 1 || c.deviation_persistence < 1 || c.max_time < 0.0) {
    throw std::invalid_argument("env config: intervals and limits must be positive");
  }
  return c;
}

RewardBreakdown compute_reward(const StepOutcome& o, const RewardConfig& c) {
  RewardBreakdown r;
  const bool in_window = o.max_contact_force >= c.f_grasp_min && o.max_contact_force <= c.f_damage;
  r.contact_force = in_window ? c.contact_ok : c.contact_bad;
  if (o.collision || o.trap_loss || o.cell_lost || o.deviation_sustained) {
    r.collision = c.failure;
    r.done = true;
  }
  r.speed = c.speed_unit * static_cast<double>(o.speed_index + 1);
  r.total = r.contact_force + r.collision + r.speed;
  return r;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::None: return "running";
    case Termination::Completed: return "completed";
    case Termination::Failure: return "failure";
    case Termination::DeviationSustained: return "deviation_sustained";
    case Termination::TimeLimit: return "time_limit";
  }
  return "unknown";
}

TransportEpisode::TransportEpisode(const Scenario& scenario, SmoothPath path, EnvConfig config)
    : scenario_(&scenario), path_(std::move(path)), config_(config), sim_config_(scenario.config) {
  if (!scenario.task) throw SimError("scenario '" + scenario.name + "' has no transport task");
  if (path_.empty()) throw SimError("transport path is empty");
  if (config_.decision_interval <= 0 || config_.max_decisions <= 0) {
    throw SimError("decision_interval and max_decisions must be positive");
  }
  task_ = *scenario.task;
  config_.reward.f_grasp_min = sim_config_.f_grasp_min;
  config_.reward.f_damage = sim_config_.f_damage;
  reset(scenario.seed);
}

double TransportEpisode::max_time() const {
  if (config_.max_time > 0.0) return config_.max_time;
  return config_.max_decisions * config_.decision_interval * sim_config_.dt;
}

double TransportEpisode::progress_fraction() const {
  const double len = path_.length();
  return len > 0.0 ? std::clamp(progress_ / len, 0.0, 1.0) : 1.0;
}

std::array<Vec2, 2> TransportEpisode::trap_targets(const Vec2& reference, const Vec2& heading) const {
  const Body* cell = world_.find_body(task_.cell_id);
  const double phi = task_.formation.cradle_angle_deg * std::numbers::pi / 180.0;
  const Vec2 left = heading.perp();
  std::array<Vec2, 2> out;
  for (int i = 0; i < 2; ++i) {
    const Body* robot = world_.find_body(task_.robot_ids[i]);
    const double reach = cell->radius + robot->radius - task_.formation.squeeze;
    const double side = i == 0 ? 1.0 : -1.0;
    out[i] = reference - heading * (reach * std::cos(phi)) + left * (side * reach * std::sin(phi));
  }
  return out;
}

Vec2 TransportEpisode::heading_at(double s) const {
  // Chord over a window rather than the segment tangent: the sampled spline
  // turns in small discrete steps, and the robots sit several µm from the
  // reference, so a stepwise heading would jerk the traps.
  const double w = kHeadingWindow;
  const Vec2 chord = path_.point_at(s + w) - path_.point_at(s - w);
  return chord.squared_norm() > 1e-18 ? chord.normalized() : path_.tangent_at(s);
}

void TransportEpisode::reset(std::uint64_t seed) {
  world_ = parse_scenario(scenario_->source, seed).world;
  reference_ = path_.front();
  progress_ = 0.0;
  ticks_ = 0;
  deviation_streak_ = 0;
  termination_ = Termination::None;
  interval_ = {};
  trace_ = {};

  Body* cell = world_.find_body(task_.cell_id);
  cell->position = reference_;
  cell->drift_velocity = {};
  const auto targets = trap_targets(reference_, heading_at(0.0));
  for (int i = 0; i < 2; ++i) {
    Body* robot = world_.find_body(task_.robot_ids[i]);
    robot->position = targets[i];
    robot->drift_velocity = {};
    for (auto& trap : world_.traps) {
      if (trap.attached_body == robot->id) trap.position = targets[i];
    }
  }
  last_report_ = measure(world_, sim_config_);
  if (path_.length() <= 0.0) termination_ = Termination::Completed;
}

void TransportEpisode::tick_along_path(double speed) {
  if (done()) return;
  const double s = std::min(progress_ + speed * sim_config_.dt, path_.length());
  apply(path_.point_at(s), s);
}

void TransportEpisode::tick_with_increment(const Vec2& delta) {
  if (done()) return;
  const Vec2 p = reference_ + delta;
  // A short window keeps the projection from jumping to a later, nearby part
  // of the path.
  const double window = 1.0 + 10.0 * delta.norm();
  apply(p, path_.project(p, progress_, window));
}

void TransportEpisode::apply(const Vec2& new_reference, double new_progress) {
  reference_ = new_reference;
  progress_ = new_progress;
  const auto targets = trap_targets(reference_, heading_at(progress_));
  std::vector<Vec2> commands;
  commands.reserve(world_.traps.size());
  for (const auto& trap : world_.traps) {
    Vec2 cmd = trap.position;
    for (int i = 0; i < 2; ++i) {
      if (trap.attached_body == task_.robot_ids[i]) cmd = targets[i];
    }
    commands.push_back(cmd);
  }
  last_report_ = advance_world(world_, commands, sim_config_);
  ++ticks_;

  if (config_.record_traces) {
    trace_.contact_force.push_back(static_cast<float>(last_report_.max_cell_contact_force));
    trace_.trap_distance.push_back(static_cast<float>(last_report_.max_trap_distance));
  }
  interval_.max_contact_force = std::max(interval_.max_contact_force, last_report_.max_cell_contact_force);
  interval_.max_trap_distance = std::max(interval_.max_trap_distance, last_report_.max_trap_distance);

  deviation_streak_ = last_report_.max_trap_distance > sim_config_.deviation_bound ? deviation_streak_ + 1 : 0;

  if (world_.failure) {
    switch (world_.failure->kind) {
      case FailureKind::ObstacleCollision:
      case FailureKind::WallCollision: interval_.collision = true; break;
      case FailureKind::TrapEscape: interval_.trap_loss = true; break;
      case FailureKind::CellDamage:
      case FailureKind::CellDetached: interval_.cell_lost = true; break;
    }
    termination_ = Termination::Failure;
  } else if (config_.terminate_on_deviation && deviation_streak_ >= config_.deviation_persistence) {
    interval_.deviation_sustained = true;
    termination_ = Termination::DeviationSustained;
  } else if (progress_ >= path_.length() - 1e-9) {
    termination_ = Termination::Completed;
  } else if (world_.time >= max_time() - 1e-9) {
    termination_ = Termination::TimeLimit;
  }
}

StepOutcome TransportEpisode::take_interval_outcome(int speed_index) {
  StepOutcome out = interval_;
  out.speed_index = speed_index;
  interval_ = {};
  return out;
}

StateVector TransportEpisode::observe(int speed_index) const {
  return build_state(world_, task_, progress_fraction(), speed_index);
}

StateVector build_state(const WorldState& world, const TaskSpec& task, double progress_fraction,
                        int speed_index) {
  const Rect& b = world.chip->bounds();
  const Vec2 span = b.max - b.min;
  auto norm_pos = [&](const Vec2& p) {
    return Vec2{std::clamp(2.0 * (p.x - b.min.x) / span.x - 1.0, -1.0, 1.0),
                std::clamp(2.0 * (p.y - b.min.y) / span.y - 1.0, -1.0, 1.0)};
  };
  StateVector s{};
  int k = 0;
  auto put = [&](const Vec2& v) {
    s[k++] = static_cast<float>(v.x);
    s[k++] = static_cast<float>(v.y);
  };
  for (int i = 0; i < 2; ++i) put(norm_pos(world.find_body(task.robot_ids[i])->position));
  const Vec2 cell = world.find_body(task.cell_id)->position;
  put(norm_pos(cell));

  std::vector<Vec2> offsets;
  for (const auto& body : world.bodies) {
    if (body.is_obstacle()) offsets.push_back(body.position - cell);
  }
  std::stable_sort(offsets.begin(), offsets.end(),
                   [](const Vec2& a, const Vec2& c) { return a.squared_norm() < c.squared_norm(); });
  for (int i = 0; i < 4; ++i) {
    if (i < static_cast<int>(offsets.size())) {
      put({std::clamp(offsets[i].x / span.x, -1.0, 1.0), std::clamp(offsets[i].y / span.y, -1.0, 1.0)});
    } else {
      put({1.0, 1.0});
    }
  }
  s[k++] = static_cast<float>(std::clamp(progress_fraction, 0.0, 1.0));
  s[k++] = static_cast<float>(speed_index) / static_cast<float>(kNumSpeedLevels - 1);
  return s;
}

}  // namespace otgym
