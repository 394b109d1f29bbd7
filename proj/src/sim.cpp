#include "otgym/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace otgym {

std::string to_string(BodyKind kind) {
  switch (kind) {
    case BodyKind::Robot: return "robot";
    case BodyKind::Cell: return "cell";
    case BodyKind::Obstacle: return "obstacle";
  }
  return "unknown";
}

BodyKind body_kind_from_string(const std::string& s) {
  if (s == "robot") return BodyKind::Robot;
  if (s == "cell") return BodyKind::Cell;
  if (s == "obstacle") return BodyKind::Obstacle;
  throw SimError("unknown body kind '" + s + "'");
}

std::string to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::TrapEscape: return "TrapEscape";
    case FailureKind::CellDamage: return "CellDamage";
    case FailureKind::CellDetached: return "CellDetached";
    case FailureKind::ObstacleCollision: return "ObstacleCollision";
    case FailureKind::WallCollision: return "WallCollision";
  }
  return "Unknown";
}

Vec2 Rect::clamp(const Vec2& p) const {
  return {std::clamp(p.x, min.x, max.x), std::clamp(p.y, min.y, max.y)};
}

ChipGeometry::ChipGeometry(std::vector<ChannelSegment> segments, double channel_width)
    : segments_(std::move(segments)), channel_width_(channel_width) {
  if (segments_.empty()) {
    bounds_ = Rect{{0, 0}, {0, 0}};
    return;
  }
  bounds_ = segments_.front().bounds;
  for (const auto& s : segments_) {
    bounds_.min.x = std::min(bounds_.min.x, s.bounds.min.x);
    bounds_.min.y = std::min(bounds_.min.y, s.bounds.min.y);
    bounds_.max.x = std::max(bounds_.max.x, s.bounds.max.x);
    bounds_.max.y = std::max(bounds_.max.y, s.bounds.max.y);
  }

  // Coordinate-compress the segment edges; every compressed cell not covered by
  // a segment becomes a wall rectangle.
  std::set<double> xs, ys;
  for (const auto& s : segments_) {
    xs.insert(s.bounds.min.x);
    xs.insert(s.bounds.max.x);
    ys.insert(s.bounds.min.y);
    ys.insert(s.bounds.max.y);
  }
  const std::vector<double> gx(xs.begin(), xs.end()), gy(ys.begin(), ys.end());
  for (std::size_t i = 0; i + 1 < gx.size(); ++i) {
    for (std::size_t j = 0; j + 1 < gy.size(); ++j) {
      const Vec2 c{0.5 * (gx[i] + gx[i + 1]), 0.5 * (gy[j] + gy[j + 1])};
      if (!is_free(c)) walls_.push_back(Rect{{gx[i], gy[j]}, {gx[i + 1], gy[j + 1]}});
    }
  }
  const double m = 1e3;
  const Rect& b = bounds_;
  walls_.push_back(Rect{{b.min.x - m, b.min.y - m}, {b.max.x + m, b.min.y}});
  walls_.push_back(Rect{{b.min.x - m, b.max.y}, {b.max.x + m, b.max.y + m}});
  walls_.push_back(Rect{{b.min.x - m, b.min.y}, {b.min.x, b.max.y}});
  walls_.push_back(Rect{{b.max.x, b.min.y}, {b.max.x + m, b.max.y}});
}

bool ChipGeometry::is_free(const Vec2& p) const {
  return std::any_of(segments_.begin(), segments_.end(),
                     [&](const ChannelSegment& s) { return s.bounds.contains(p); });
}

Vec2 ChipGeometry::flow_at(const Vec2& p) const {
  for (const auto& s : segments_) {
    if (s.bounds.contains(p)) return s.flow;
  }
  return {};
}

WallContact ChipGeometry::wall_contact(const Vec2& center, double radius) const {
  // Signed distance to the nearest wall rectangle; negative when inside one.
  double best = std::numeric_limits<double>::infinity();
  Vec2 best_normal;
  for (const auto& w : walls_) {
    if (w.contains(center)) {
      const double dl = center.x - w.min.x, dr = w.max.x - center.x;
      const double db = center.y - w.min.y, dt = w.max.y - center.y;
      double d = dl;
      Vec2 n{-1, 0};
      if (dr < d) { d = dr; n = {1, 0}; }
      if (db < d) { d = db; n = {0, -1}; }
      if (dt < d) { d = dt; n = {0, 1}; }
      if (-d < best) {
        best = -d;
        best_normal = n;
      }
    } else {
      const Vec2 q = w.clamp(center);
      const Vec2 diff = center - q;
      const double d = diff.norm();
      if (d < best) {
        best = d;
        best_normal = diff / d;
      }
    }
  }
  WallContact wc;
  if (best < radius) {
    wc.penetration = radius - best;
    wc.normal = best_normal;
  }
  return wc;
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw SimError("dt must be > 0");
  if (substeps < 1) throw SimError("substeps must be >= 1");
  if (!(f_grasp_min < f_damage)) throw SimError("f_grasp_min must be < f_damage");
  if (k_contact < 0.0 || c_contact < 0.0) throw SimError("contact coefficients must be >= 0");
}

const Body* WorldState::find_body(int id) const {
  for (const auto& b : bodies)
    if (b.id == id) return &b;
  return nullptr;
}

Body* WorldState::find_body(int id) {
  for (auto& b : bodies)
    if (b.id == id) return &b;
  return nullptr;
}

const OpticalTrap* WorldState::trap_for_body(int body_id) const {
  for (const auto& t : traps)
    if (t.enabled && t.attached_body == body_id) return &t;
  return nullptr;
}

std::vector<int> WorldState::robot_ids() const {
  std::vector<int> ids;
  for (const auto& b : bodies)
    if (b.kind == BodyKind::Robot) ids.push_back(b.id);
  return ids;
}

Vec2 optical_force(const OpticalTrap& trap, const Vec2& object_position) {
  const Vec2 diff = trap.position - object_position;
  const double r = diff.norm();
  if (r == 0.0) return {};
  const double magnitude =
      r < trap.delta ? trap.stiffness * r : trap.far_c + trap.far_a / (r * r);
  return diff * (magnitude / r);
}

ContactResult contact(const Body& a, const Body& b, double k_contact, double c_contact) {
  ContactResult out;
  const Vec2 diff = a.position - b.position;
  const double dist = diff.norm();
  const double overlap = a.radius + b.radius - dist;
  if (overlap <= 0.0) return out;
  Vec2 n;
  if (dist == 0.0) {
    n = {1.0, 0.0};
    out.concentric = true;
  } else {
    n = diff / dist;
  }
  // Separating normal velocity reduces the push; the pair never attracts.
  const double v_sep = (a.drift_velocity - b.drift_velocity).dot(n);
  const double magnitude = std::max(0.0, k_contact * overlap - c_contact * v_sep);
  out.force = n * magnitude;
  out.penetration = overlap;
  return out;
}

Vec2 van_der_waals_force(const Body& a, const Body& b, const SimConfig& config) {
  const Vec2 diff = b.position - a.position;
  const double dist = diff.norm();
  if (dist == 0.0) return {};
  const double gap = dist - a.radius - b.radius;
  if (gap > config.vdw_range) return {};
  const double g = std::max(gap, config.vdw_min_gap);
  return diff * (config.vdw_hamaker / (g * g) / dist);
}

Vec2 brownian_displacement(double diffusion, double dt, Rng& rng) {
  if (diffusion <= 0.0) return {};
  const double sigma = std::sqrt(2.0 * diffusion * dt);
  const double dx = rng.normal();
  const double dy = rng.normal();
  return {sigma * dx, sigma * dy};
}

namespace {

double loop_length(const std::vector<Vec2>& pts) {
  double len = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) len += distance(pts[i], pts[(i + 1) % pts.size()]);
  return len;
}

// Point and unit direction at arc position s along the closed loop.
std::pair<Vec2, Vec2> loop_point(const std::vector<Vec2>& pts, double s) {
  const double total = loop_length(pts);
  s = std::fmod(s, total);
  if (s < 0.0) s += total;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2& a = pts[i];
    const Vec2& b = pts[(i + 1) % pts.size()];
    const double seg = distance(a, b);
    if (s <= seg && seg > 0.0) {
      const Vec2 dir = (b - a) / seg;
      return {a + dir * s, dir};
    }
    s -= seg;
  }
  return {pts.front(), {}};
}

bool patrols(const Body& b) {
  return b.waypoints.size() >= 2 && b.patrol_speed > 0.0 && loop_length(b.waypoints) > 0.0;
}

}  // namespace

Vec2 patrol_position(const Body& obstacle, double t) {
  if (!patrols(obstacle)) {
    return obstacle.waypoints.size() == 1 ? obstacle.waypoints.front() : obstacle.position;
  }
  return loop_point(obstacle.waypoints, obstacle.patrol_phase + obstacle.patrol_speed * t).first;
}

Vec2 patrol_velocity(const Body& obstacle, double t) {
  if (!patrols(obstacle)) return {};
  return loop_point(obstacle.waypoints, obstacle.patrol_phase + obstacle.patrol_speed * t).second *
         obstacle.patrol_speed;
}

namespace {

struct ForceField {
  std::vector<Vec2> total;
  bool concentric = false;
};

ForceField accumulate_forces(const WorldState& world, const SimConfig& config) {
  const auto& bodies = world.bodies;
  ForceField field;
  field.total.assign(bodies.size(), Vec2{});
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const Body& b = bodies[i];
    if (b.is_obstacle()) continue;
    if (const OpticalTrap* trap = world.trap_for_body(b.id)) {
      field.total[i] += optical_force(*trap, b.position);
    }
    if (world.chip) {
      const WallContact wc = world.chip->wall_contact(b.position, b.radius);
      if (wc.penetration > 0.0) {
        const double v_in = -b.drift_velocity.dot(wc.normal);
        field.total[i] +=
            wc.normal * std::max(0.0, config.k_contact * wc.penetration + config.c_contact * v_in);
      }
    }
  }
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    for (std::size_t j = i + 1; j < bodies.size(); ++j) {
      const Body& a = bodies[i];
      const Body& b = bodies[j];
      if (a.is_obstacle() && b.is_obstacle()) continue;
      const ContactResult c = contact(a, b, config.k_contact, config.c_contact);
      if (c.penetration > 0.0) {
        field.total[i] += c.force;
        field.total[j] -= c.force;
        field.concentric = field.concentric || c.concentric;
      }
      if (config.vdw_enabled) {
        const bool robot_cell = (a.kind == BodyKind::Robot && b.kind == BodyKind::Cell) ||
                                (a.kind == BodyKind::Cell && b.kind == BodyKind::Robot);
        if (robot_cell) {
          const Vec2 f = van_der_waals_force(a, b, config);
          field.total[i] += f;
          field.total[j] -= f;
        }
      }
    }
  }
  return field;
}

std::optional<FailureEvent> detect_failure(WorldState& world, const StepReport& report,
                                           const SimConfig& config) {
  const double t = world.time;
  for (const auto& r : report.robots) {
    const OpticalTrap* trap = world.trap_for_body(r.body_id);
    if (trap && r.trap_distance > trap->escape_radius) {
      return FailureEvent{FailureKind::TrapEscape, t, r.body_id};
    }
  }
  for (const auto& a : world.bodies) {
    if (a.is_obstacle()) continue;
    for (const auto& b : world.bodies) {
      if (!b.is_obstacle()) continue;
      if (a.radius + b.radius - distance(a.position, b.position) > config.collision_penetration) {
        return FailureEvent{FailureKind::ObstacleCollision, t, a.id};
      }
    }
  }
  if (world.chip) {
    for (const auto& a : world.bodies) {
      if (a.is_obstacle()) continue;
      if (world.chip->wall_contact(a.position, a.radius).penetration > config.collision_penetration) {
        return FailureEvent{FailureKind::WallCollision, t, a.id};
      }
    }
  }
  for (const auto& r : report.robots) {
    if (r.cell_contact_force > config.f_damage) {
      return FailureEvent{FailureKind::CellDamage, t, r.body_id};
    }
  }
  if (world.grasp.active) {
    const bool holding = std::any_of(report.robots.begin(), report.robots.end(), [&](const auto& r) {
      return r.cell_contact_force >= config.f_grasp_min;
    });
    world.grasp.below_min_streak = holding ? 0 : world.grasp.below_min_streak + 1;
    if (world.grasp.below_min_streak >= config.detach_persistence_steps) {
      return FailureEvent{FailureKind::CellDetached, t, world.grasp.cell_id};
    }
  }
  return std::nullopt;
}

}  // namespace

StepReport measure(const WorldState& world, const SimConfig& config) {
  StepReport report;
  const Body* cell = world.find_body(world.grasp.cell_id);
  for (const auto& b : world.bodies) {
    if (b.kind != BodyKind::Robot) continue;
    RobotDiagnostics d;
    d.body_id = b.id;
    if (const OpticalTrap* trap = world.trap_for_body(b.id)) {
      d.trap_distance = distance(trap->position, b.position);
      d.optical_force = optical_force(*trap, b.position);
    }
    const Body* target = cell;
    if (!target) {
      for (const auto& c : world.bodies)
        if (c.kind == BodyKind::Cell) { target = &c; break; }
    }
    if (target) {
      const ContactResult c = contact(b, *target, config.k_contact, config.c_contact);
      d.cell_contact_force = c.force.norm();
      report.concentric_contact = report.concentric_contact || c.concentric;
    }
    report.max_cell_contact_force = std::max(report.max_cell_contact_force, d.cell_contact_force);
    report.max_trap_distance = std::max(report.max_trap_distance, d.trap_distance);
    report.robots.push_back(d);
  }
  return report;
}

StepReport advance_world(WorldState& world, std::span<const Vec2> trap_commands,
                         const SimConfig& config) {
  config.validate();
  if (world.failure) throw SimError("cannot step a world with a recorded failure");
  if (!trap_commands.empty()) {
    if (trap_commands.size() != world.traps.size()) {
      throw SimError("expected one trap command per trap");
    }
    for (std::size_t i = 0; i < world.traps.size(); ++i) world.traps[i].position = trap_commands[i];
  }

  const double h = config.dt / config.substeps;
  bool concentric = false;
  for (int sub = 0; sub < config.substeps; ++sub) {
    const ForceField field = accumulate_forces(world, config);
    concentric = concentric || field.concentric;
    const double t_next = world.time + h * (sub + 1);
    for (std::size_t i = 0; i < world.bodies.size(); ++i) {
      Body& b = world.bodies[i];
      if (b.is_obstacle()) {
        b.position = patrol_position(b, t_next);
        b.drift_velocity = patrol_velocity(b, t_next);
        continue;
      }
      const Vec2 flow = world.chip ? world.chip->flow_at(b.position) : Vec2{};
      const Vec2 drift = field.total[i] / b.gamma + flow;
      b.drift_velocity = drift;
      b.position += drift * h + brownian_displacement(b.diffusion, h, world.rng);
    }
  }
  world.time += config.dt;
  ++world.tick;

  StepReport report = measure(world, config);
  report.concentric_contact = report.concentric_contact || concentric;
  world.failure = detect_failure(world, report, config);
  return report;
}

}  // namespace otgym
