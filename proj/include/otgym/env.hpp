#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/path.hpp"
#include "otgym/scenario.hpp"
#include "otgym/sim.hpp"

namespace otgym {

inline constexpr int kNumSpeedLevels = 6;
inline constexpr int kStateSize = 16;

/// Six evenly spaced trap speeds, µm/s.
inline constexpr std::array<double, kNumSpeedLevels> kSpeedLevels = {0.270, 0.318, 0.366,
                                                                    0.414, 0.462, 0.510};

using StateVector = std::array<float, kStateSize>;

struct RewardConfig {
  double contact_ok = 0.5;    // force inside [f_grasp_min, f_damage]
  double contact_bad = -1.0;  // force outside that window
  double failure = -10.0;     // collision, trap loss, cell loss, sustained deviation
  double speed_unit = 0.1;    // per speed level, level k earns (k + 1) * speed_unit
  double f_grasp_min = 0.002;
  double f_damage = 10.0;
};

/// Everything the reward needs about one decision interval.
struct StepOutcome {
  double max_contact_force = 0.0;  // pN, robot-cell
  double max_trap_distance = 0.0;  // µm
  bool collision = false;          // obstacle or wall
  bool trap_loss = false;          // trap escape
  bool cell_lost = false;          // detachment or damage
  bool deviation_sustained = false;
  int speed_index = 0;
};

struct RewardBreakdown {
  double contact_force = 0.0;
  double collision = 0.0;
  double speed = 0.0;
  double total = 0.0;
  bool done = false;
};

RewardBreakdown compute_reward(const StepOutcome& outcome, const RewardConfig& config);

enum class Termination { None, Completed, Failure, DeviationSustained, TimeLimit };
std::string to_string(Termination t);

struct EnvConfig {
  int decision_interval = 50;    // sim ticks per speed decision
  int max_decisions = 200;
  int deviation_persistence = 10;  // consecutive ticks beyond the deviation bound
  double max_time = 0.0;         // s; 0 derives it from max_decisions
  bool record_traces = true;
  // Off for safety audits: the episode keeps running through excursions so the
  // whole distribution of trap distances is observed. Hard failures still end it.
  bool terminate_on_deviation = true;
  RewardConfig reward;
};

nlohmann::json to_json(const RewardConfig& c);
RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig base = {});
nlohmann::json to_json(const EnvConfig& c);
/// Unknown keys are rejected.
EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig base = {});

/// Per-tick safety samples, kept for distribution reporting.
struct SafetyTrace {
  std::vector<float> contact_force;  // max robot-cell contact, pN
  std::vector<float> trap_distance;  // max robot-trap distance, µm
};

/// A cell carried by two trapped robots along a planned path. The formation is
/// positioned from a reference point (the cell seat) and a heading taken from the
/// path tangent; every tick commands both traps and advances the world.
class TransportEpisode {
 public:
  TransportEpisode(const Scenario& scenario, SmoothPath path, EnvConfig config);

  /// Reloads the world with the given seed and places the grasped formation at the
  /// path start.
  void reset(std::uint64_t seed);

  /// Advances the reference along the path at `speed` µm/s for one tick.
  void tick_along_path(double speed);
  /// Moves the reference by an arbitrary increment for one tick; progress follows
  /// the closest path point.
  void tick_with_increment(const Vec2& delta);

  bool done() const { return termination_ != Termination::None; }
  Termination termination() const { return termination_; }
  bool success() const { return termination_ == Termination::Completed; }

  const WorldState& world() const { return world_; }
  const SimConfig& sim_config() const { return sim_config_; }
  const EnvConfig& config() const { return config_; }
  const SmoothPath& path() const { return path_; }
  const Scenario& scenario() const { return *scenario_; }
  const TaskSpec& task() const { return task_; }
  const StepReport& last_report() const { return last_report_; }

  Vec2 reference() const { return reference_; }
  double progress() const { return progress_; }
  double progress_fraction() const;
  double time() const { return world_.time; }
  std::uint64_t ticks() const { return ticks_; }
  int deviation_streak() const { return deviation_streak_; }
  double max_time() const;

  /// Formation heading at arc length s: the path chord across +/- kHeadingWindow.
  Vec2 heading_at(double s) const;
  static constexpr double kHeadingWindow = 1.5;  // µm

  /// Trap targets for a reference point and heading.
  std::array<Vec2, 2> trap_targets(const Vec2& reference, const Vec2& heading) const;

  const SafetyTrace& trace() const { return trace_; }

  /// Accumulators since the last call, reset on read.
  StepOutcome take_interval_outcome(int speed_index);

  StateVector observe(int speed_index) const;

 private:
  void apply(const Vec2& new_reference, double new_progress);

  const Scenario* scenario_;
  TaskSpec task_;
  SmoothPath path_;
  EnvConfig config_;
  SimConfig sim_config_;
  WorldState world_;
  StepReport last_report_;
  Vec2 reference_;
  double progress_ = 0.0;
  std::uint64_t ticks_ = 0;
  int deviation_streak_ = 0;
  Termination termination_ = Termination::None;
  StepOutcome interval_;
  SafetyTrace trace_;
};

/// Builds the 16-element observation: both robots, the cell, four nearest obstacle
/// offsets (relative to the cell), path progress and the current speed level.
/// Positions are scaled to [-1, 1] by the chip bounds.
StateVector build_state(const WorldState& world, const TaskSpec& task, double progress_fraction,
                        int speed_index);

}  // namespace otgym
