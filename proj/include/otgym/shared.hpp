#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/env.hpp"
#include "otgym/path.hpp"
#include "otgym/rng.hpp"
#include "otgym/sim.hpp"

namespace otgym {

class SpeedPolicy;

/// Arbitration thresholds. d is obstacle surface clearance in µm.
struct BlendConfig {
  double d1 = 1.0;
  double d2 = 2.0;
  double tau = 1.0;
  double alpha_near = 0.5;
  double alpha_far = 0.1;

  void validate() const;
};

nlohmann::json to_json(const BlendConfig& c);
BlendConfig blend_config_from_json(const nlohmann::json& j, BlendConfig base = {});

/// Operator weight: alpha_near up to d1, linear down to alpha_far at d2, flat beyond.
double alpha(double d, const BlendConfig& cfg = {});

/// tau * (alpha * dp_h + (1 - alpha) * dp_r).
Vec2 blend(const Vec2& dp_h, const Vec2& dp_r, double alpha, double tau);

enum class ControlLabel { FineTuning, Balanced, Autonomous };
std::string to_string(ControlLabel label);
ControlLabel control_label(double d, const BlendConfig& cfg = {});

/// Smallest surface-to-surface distance between any robot (plus the listed extra
/// bodies, typically the carried cell) and any obstacle, floored at 0. Returns
/// +infinity when the world has no obstacles.
double min_obstacle_distance(const WorldState& world, std::span<const int> extra_body_ids = {});

/// First-order smoother: out = beta * sample + (1 - beta) * previous.
struct LowPassState {
  double beta = 0.2;
  Vec2 previous;
};
Vec2 lowpass(LowPassState& state, const Vec2& sample);

struct HapticSample {
  Vec2 raw_force;     // pN, reaction of the trap force on its robot
  Vec2 scaled_force;  // display units
  bool filtered = true;
};

/// Renders the reaction of the trap force on `robot_pos` to the operator.
HapticSample haptic_force(const OpticalTrap& trap, const Vec2& robot_pos, double scale, LowPassState& filter);

enum class InputSource { Ui, Synthetic, Replay };
std::string to_string(InputSource s);
InputSource input_source_from_string(const std::string& s);

/// Operator increment for one control tick.
struct OperatorInput {
  Vec2 delta_p_h;  // µm per tick
  double timestamp = 0.0;
  InputSource source = InputSource::Synthetic;
};

/// Largest accepted operator increment per tick: three times the fastest speed level.
double operator_increment_limit(double dt);
Vec2 clamp_increment(const Vec2& v, double limit);

/// Behaviour of the scripted stand-in for a human operator. Speeds in µm/s.
struct OperatorProfile {
  double advance_speed = 0.0;   // push along the path
  double pull_gain = 0.5;       // 1/s, proportional return to the path
  double repulse_speed = 0.6;   // at contact, fading to zero at `perception_range`
  double sidestep_speed = 0.6;  // lateral dodge for obstacles ahead
  double perception_range = 2.0;  // µm of clearance at which obstacles are reacted to
  double caution = 1.0;         // 1 = stop advancing at contact, 0 = ignore obstacles when advancing
  double tremor_std = 0.0;      // µm/s per axis, white
  double reaction_delay = 0.15; // s

  void validate() const;
};

nlohmann::json to_json(const OperatorProfile& p);

/// Tele-operation stand-in used for mode comparisons: slow, steady hand.
OperatorProfile teleop_operator_profile();
/// Free-hand path sketch: faster strokes with visible tremor.
OperatorProfile sketch_operator_profile();
OperatorProfile operator_profile_from_json(const nlohmann::json& j, OperatorProfile base = {});

/// What the operator perceives: the commanded formation and nearby obstacles.
struct OperatorView {
  double time = 0.0;
  double dt = 0.01;
  Vec2 reference;  // current commanded cell seat
  double progress = 0.0;
  struct Disk {
    Vec2 center;
    double radius = 0.0;
  };
  std::vector<Disk> formation;  // robots and carried cell
  std::vector<Disk> obstacles;
};

/// Builds the view from a running transport episode.
OperatorView operator_view(const TransportEpisode& episode);

/// Deterministic per seed. Inputs are computed from the current view and
/// released after the reaction delay.
class SyntheticOperator {
 public:
  SyntheticOperator(OperatorProfile profile, std::uint64_t seed);

  OperatorInput next(const OperatorView& view, const SmoothPath& path);
  /// Undelayed, noise-free intent for a view, µm/s.
  Vec2 intent(const OperatorView& view, const SmoothPath& path) const;
  const OperatorProfile& profile() const { return profile_; }

 private:
  OperatorProfile profile_;
  Rng rng_;
  std::deque<Vec2> pipeline_;
};

enum class OperatingMode { Manual, Autonomous, Shared };
std::string to_string(OperatingMode m);
OperatingMode operating_mode_from_string(const std::string& s);

struct SharedTelemetry {
  double time = 0.0;
  double alpha = 0.0;
  double d = 0.0;
  ControlLabel label = ControlLabel::Autonomous;
  Vec2 dp_h;  // filtered operator increment
  Vec2 dp_r;  // autonomous increment
  Vec2 dp;    // commanded increment
  std::array<HapticSample, 2> haptic{};
  int speed_level = 0;
};

nlohmann::json to_json(const SharedTelemetry& t);

/// Per-episode arbitration state: operator filter and haptic filters.
class SharedController {
 public:
  explicit SharedController(BlendConfig blend = {}, double filter_beta = 0.2, double haptic_scale = 10.0);

  /// One control tick. dp_r is the speed level along the path heading; dp_h is the
  /// clamped, low-pass filtered operator increment. Manual mode commands
  /// tau * dp_h, shared mode the alpha blend.
  SharedTelemetry step(TransportEpisode& episode, OperatingMode mode, int speed_level, const OperatorInput& input);

  const BlendConfig& blend_config() const { return blend_; }
  void reset();

 private:
  BlendConfig blend_;
  double beta_;
  double haptic_scale_;
  LowPassState operator_filter_;
  std::array<LowPassState, 2> haptic_filters_;
};

struct ModeEpisodeResult {
  OperatingMode mode = OperatingMode::Shared;
  std::uint64_t seed = 0;
  bool success = false;
  Termination termination = Termination::None;
  std::optional<FailureKind> failure;
  double completion_time = 0.0;
  double min_clearance = std::numeric_limits<double>::infinity();
  std::array<double, 3> label_fraction{};  // fine-tuning, balanced, autonomous
  std::vector<Vec2> reference_path;        // commanded cell seat per tick
  std::vector<SharedTelemetry> telemetry;  // only when requested
};

nlohmann::json to_json(const ModeEpisodeResult& r);

struct ModeRunOptions {
  BlendConfig blend;
  OperatorProfile operator_profile;
  EnvConfig env;
  double filter_beta = 0.2;
  double haptic_scale = 10.0;
  bool keep_telemetry = false;
};

/// One paired-seed episode in the given mode. The speed policy drives the
/// autonomous increment (autonomous and shared modes); the synthetic operator,
/// seeded from the episode seed, drives manual and shared modes.
ModeEpisodeResult run_mode_episode(OperatingMode mode, const Scenario& scenario, const SmoothPath& path,
                                   SpeedPolicy* policy, std::uint64_t seed, const ModeRunOptions& options);

/// Operator-only kinematic rollout: the synthetic operator steers the formation
/// reference with no physics, obstacles following their patrols. Used as the
/// hand-drawn trajectory for path-quality comparisons.
std::vector<Vec2> operator_rollout(const Scenario& scenario, const SmoothPath& path, const OperatorProfile& profile,
                                   std::uint64_t seed, double max_time = 600.0);

/// Obstacle-free variant: the operator traces `path` point by point, one sample
/// per tick. max_time 0 allows four times the nominal traversal time.
std::vector<Vec2> operator_sketch(const SmoothPath& path, const OperatorProfile& profile, std::uint64_t seed,
                                  double dt = 0.01, double max_time = 0.0);

}  // namespace otgym
