#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otgym/rng.hpp"
#include "otgym/vec2.hpp"

namespace otgym {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BodyKind { Robot, Cell, Obstacle };

std::string to_string(BodyKind kind);
BodyKind body_kind_from_string(const std::string& s);

struct Body {
  int id = 0;
  BodyKind kind = BodyKind::Robot;
  Vec2 position;
  double radius = 1.0;     // µm
  double gamma = 0.1;      // pN·s/µm
  double diffusion = 0.05; // µm²/s
  // Dynamic obstacles follow a closed loop through these points at patrol_speed.
  std::vector<Vec2> waypoints;
  double patrol_speed = 0.0;  // µm/s
  double patrol_phase = 0.0;  // µm along the loop at t = 0
  // Deterministic part of the last velocity; feeds contact damping.
  Vec2 drift_velocity;

  bool is_obstacle() const { return kind == BodyKind::Obstacle; }
};

/// Piecewise trap force law: linear spring inside `delta`, offset inverse-square
/// attraction outside. The jump at `delta` is intentional (0.203 pN inside vs
/// 0.302 pN outside with the default constants).
struct OpticalTrap {
  int id = 0;
  Vec2 position;
  double stiffness = 0.455;   // K, pN/µm
  double delta = 0.446;       // µm
  double far_a = 0.058;       // A, pN·µm²
  double far_c = 0.01;        // C, pN
  double escape_radius = 1.0; // µm
  bool enabled = true;
  int attached_body = -1;
};

struct Rect {
  Vec2 min;
  Vec2 max;

  bool contains(const Vec2& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
  }
  Vec2 clamp(const Vec2& p) const;
  Vec2 center() const { return (min + max) * 0.5; }
};

struct ChannelSegment {
  std::string name;
  Rect bounds;
  Vec2 flow;  // µm/s, uniform over the segment
};

struct WallContact {
  double penetration = 0.0;  // > 0 when overlapping a wall
  Vec2 normal;               // unit, pointing from the wall into free space
};

/// Channel network as a union of axis-aligned rectangles. Everything outside the
/// union is wall.
class ChipGeometry {
 public:
  ChipGeometry() = default;
  ChipGeometry(std::vector<ChannelSegment> segments, double channel_width);

  const std::vector<ChannelSegment>& segments() const { return segments_; }
  const std::vector<Rect>& walls() const { return walls_; }
  double channel_width() const { return channel_width_; }
  const Rect& bounds() const { return bounds_; }

  bool is_free(const Vec2& p) const;
  /// Flow of the first listed segment containing p; zero outside all segments.
  Vec2 flow_at(const Vec2& p) const;
  WallContact wall_contact(const Vec2& center, double radius) const;

 private:
  std::vector<ChannelSegment> segments_;
  std::vector<Rect> walls_;
  Rect bounds_;
  double channel_width_ = 25.0;
};

enum class FailureKind { TrapEscape, CellDamage, CellDetached, ObstacleCollision, WallCollision };

std::string to_string(FailureKind kind);

struct FailureEvent {
  FailureKind kind;
  double time = 0.0;
  int body_id = -1;
};

struct SimConfig {
  double dt = 0.01;                   // s
  int substeps = 4;                   // integration sub-steps per dt
  double k_contact = 10.0;            // pN/µm
  double c_contact = 0.01;            // pN·s/µm
  double f_damage = 10.0;             // pN
  double f_grasp_min = 0.002;         // pN
  int detach_persistence_steps = 100; // consecutive steps below f_grasp_min before detachment
  double deviation_bound = 0.2;       // µm
  double collision_penetration = 0.005;  // µm
  bool vdw_enabled = false;
  double vdw_hamaker = 0.001;         // pN·µm²
  double vdw_range = 0.5;             // µm surface gap cutoff
  double vdw_min_gap = 0.02;          // µm, regularizes the 1/r² singularity

  void validate() const;
};

struct GraspState {
  bool active = false;
  int cell_id = -1;
  int below_min_streak = 0;
};

struct WorldState {
  double time = 0.0;
  std::uint64_t tick = 0;
  std::vector<Body> bodies;
  std::vector<OpticalTrap> traps;
  std::shared_ptr<const ChipGeometry> chip;
  Rng rng;
  GraspState grasp;
  std::optional<FailureEvent> failure;

  const Body* find_body(int id) const;
  Body* find_body(int id);
  const OpticalTrap* trap_for_body(int body_id) const;
  std::vector<int> robot_ids() const;
};

struct ContactResult {
  Vec2 force;  // on the first body
  double penetration = 0.0;
  bool concentric = false;
};

/// Per-robot quantities measured at the end of a step.
struct RobotDiagnostics {
  int body_id = -1;
  double trap_distance = 0.0;  // µm, 0 if untrapped
  Vec2 optical_force;          // pN
  double cell_contact_force = 0.0;  // pN, magnitude of robot-cell contact
};

struct StepReport {
  std::vector<RobotDiagnostics> robots;
  double max_cell_contact_force = 0.0;
  double max_trap_distance = 0.0;
  bool concentric_contact = false;
};

Vec2 optical_force(const OpticalTrap& trap, const Vec2& object_position);

ContactResult contact(const Body& a, const Body& b, double k_contact, double c_contact);
inline Vec2 contact_force(const Body& a, const Body& b, double k_contact, double c_contact) {
  return contact(a, b, k_contact, c_contact).force;
}

Vec2 van_der_waals_force(const Body& a, const Body& b, const SimConfig& config);

Vec2 brownian_displacement(double diffusion, double dt, Rng& rng);

/// Position of a patrolling obstacle at absolute time t.
Vec2 patrol_position(const Body& obstacle, double t);
Vec2 patrol_velocity(const Body& obstacle, double t);

/// Advances the world in place by config.dt. `trap_commands` is either empty
/// (traps stay put) or one target position per trap.
StepReport advance_world(WorldState& world, std::span<const Vec2> trap_commands,
                         const SimConfig& config);

inline WorldState step_world(WorldState world, std::span<const Vec2> trap_commands,
                             const SimConfig& config) {
  advance_world(world, trap_commands, config);
  return world;
}

/// Measures robot diagnostics without advancing time.
StepReport measure(const WorldState& world, const SimConfig& config);

}  // namespace otgym
