#include "otgym/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef OTGYM_DATA_DIR
#define OTGYM_DATA_DIR "data"
#endif

namespace otgym {

using nlohmann::json;

namespace {

// Walks a JSON document while remembering where it is, so every error names the
// offending field.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ScenarioError(path_ + ": " + what);
  }

  bool has(const char* key) const { return node_.is_object() && node_.contains(key); }

  Reader at(const char* key) const {
    if (!node_.is_object()) fail("expected an object");
    if (!node_.contains(key)) throw ScenarioError(child_path(key) + ": missing required field");
    return Reader(node_.at(key), child_path(key));
  }

  Reader at(std::size_t i) const { return Reader(node_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  std::size_t size() const {
    if (!node_.is_array()) fail("expected an array");
    return node_.size();
  }

  double number() const {
    if (!node_.is_number()) fail("expected a number");
    const double v = node_.get<double>();
    if (!std::isfinite(v)) fail("must be finite");
    return v;
  }
  double number(const char* key, double fallback) const { return has(key) ? at(key).number() : fallback; }

  int integer() const {
    if (!node_.is_number_integer()) fail("expected an integer");
    return node_.get<int>();
  }
  int integer(const char* key, int fallback) const { return has(key) ? at(key).integer() : fallback; }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const Reader r = at(key);
    if (!r.node_.is_boolean()) r.fail("expected a boolean");
    return r.node_.get<bool>();
  }

  std::string string() const {
    if (!node_.is_string()) fail("expected a string");
    return node_.get<std::string>();
  }
  std::string string(const char* key, const std::string& fallback) const {
    return has(key) ? at(key).string() : fallback;
  }

  Vec2 vec2() const {
    if (!node_.is_array() || node_.size() != 2) fail("expected [x, y]");
    return {at(std::size_t{0}).number(), at(std::size_t{1}).number()};
  }
  Vec2 vec2(const char* key, Vec2 fallback) const { return has(key) ? at(key).vec2() : fallback; }

  const std::string& path() const { return path_; }

 private:
  std::string child_path(const char* key) const {
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }

  const json& node_;
  std::string path_;
};

void require(bool ok, const Reader& r, const char* key, const std::string& what) {
  if (!ok) r.at(key).fail(what);
}

SimConfig parse_config(const Reader& r) {
  SimConfig c;
  c.dt = r.number("dt", c.dt);
  require(c.dt > 0.0, r, "dt", "must be > 0");
  c.substeps = r.integer("substeps", c.substeps);
  require(c.substeps >= 1, r, "substeps", "must be >= 1");
  c.k_contact = r.number("k_contact", c.k_contact);
  c.c_contact = r.number("c_contact", c.c_contact);
  c.f_damage = r.number("f_damage", c.f_damage);
  c.f_grasp_min = r.number("f_grasp_min", c.f_grasp_min);
  if (r.has("f_grasp_min") || r.has("f_damage")) {
    if (!(c.f_grasp_min < c.f_damage)) r.fail("f_grasp_min must be < f_damage");
  }
  c.detach_persistence_steps = r.integer("detach_persistence_steps", c.detach_persistence_steps);
  c.deviation_bound = r.number("deviation_bound", c.deviation_bound);
  c.collision_penetration = r.number("collision_penetration", c.collision_penetration);
  c.vdw_enabled = r.boolean("vdw_enabled", c.vdw_enabled);
  c.vdw_hamaker = r.number("vdw_hamaker", c.vdw_hamaker);
  c.vdw_range = r.number("vdw_range", c.vdw_range);
  c.vdw_min_gap = r.number("vdw_min_gap", c.vdw_min_gap);
  return c;
}

double loop_perimeter(const std::vector<Vec2>& pts) {
  double len = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) len += distance(pts[i], pts[(i + 1) % pts.size()]);
  return len;
}

}  // namespace

Scenario parse_scenario(const json& doc, std::optional<std::uint64_t> seed_override) {
  const Reader root(doc, "");
  if (!doc.is_object()) root.fail("scenario must be a JSON object");
  Scenario sc;
  sc.source = doc;
  sc.name = root.string("name", "unnamed");
  if (root.has("seed")) {
    const Reader s = root.at("seed");
    if (!doc.at("seed").is_number_unsigned() && !doc.at("seed").is_number_integer()) s.fail("expected an integer");
    sc.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (seed_override) sc.seed = *seed_override;

  sc.config = root.has("config") ? parse_config(root.at("config")) : SimConfig{};

  // Chip
  std::vector<ChannelSegment> segments;
  double channel_width = 25.0;
  if (root.has("chip")) {
    const Reader chip = root.at("chip");
    channel_width = chip.number("channel_width", channel_width);
    require(channel_width > 0.0, chip, "channel_width", "must be > 0");
    const Reader segs = chip.at("segments");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const Reader s = segs.at(i);
      ChannelSegment seg;
      seg.name = s.string("name", "segment" + std::to_string(i));
      seg.bounds.min = s.at("min").vec2();
      seg.bounds.max = s.at("max").vec2();
      if (!(seg.bounds.min.x < seg.bounds.max.x && seg.bounds.min.y < seg.bounds.max.y)) {
        s.fail("min must be strictly below max");
      }
      seg.flow = s.vec2("flow", {});
      segments.push_back(seg);
    }
  }
  auto chip = std::make_shared<ChipGeometry>(std::move(segments), channel_width);

  WorldState& w = sc.world;
  w.chip = chip;
  w.rng = Rng(sc.seed, Stream::Brownian);
  const Rng phase_root = Rng(sc.seed, Stream::ObstaclePhase);

  // Bodies
  std::vector<int> seen_ids;
  if (root.has("bodies")) {
    const Reader bodies = root.at("bodies");
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      const Reader b = bodies.at(i);
      Body body;
      body.id = b.integer("id", static_cast<int>(i));
      for (int id : seen_ids)
        if (id == body.id) b.at("id").fail("duplicate body id " + std::to_string(id));
      seen_ids.push_back(body.id);
      try {
        body.kind = body_kind_from_string(b.at("kind").string());
      } catch (const SimError& e) {
        b.at("kind").fail(e.what());
      }
      body.radius = b.at("radius").number();
      require(body.radius > 0.0, b, "radius", "must be > 0");
      body.gamma = b.number("gamma", body.gamma);
      require(body.gamma > 0.0, b, "gamma", "must be > 0");
      body.diffusion = b.number("diffusion", body.kind == BodyKind::Obstacle ? 0.0 : body.diffusion);
      require(body.diffusion >= 0.0, b, "diffusion", "must be >= 0");
      if (b.has("waypoints")) {
        const Reader wp = b.at("waypoints");
        for (std::size_t k = 0; k < wp.size(); ++k) body.waypoints.push_back(wp.at(k).vec2());
        if (body.kind != BodyKind::Obstacle) b.at("waypoints").fail("only obstacles patrol");
      }
      body.patrol_speed = b.number("patrol_speed", 0.0);
      require(body.patrol_speed >= 0.0, b, "patrol_speed", "must be >= 0");
      if (b.has("position")) {
        body.position = b.at("position").vec2();
      } else if (!body.waypoints.empty()) {
        body.position = body.waypoints.front();
      } else {
        b.at("position");  // reports the missing field
      }
      if (body.kind == BodyKind::Obstacle && body.waypoints.size() >= 2) {
        if (b.has("patrol_phase")) {
          body.patrol_phase = b.at("patrol_phase").number();
        } else {
          Rng r = phase_root.derive(Stream::ObstaclePhase, static_cast<std::uint64_t>(i));
          body.patrol_phase = r.uniform() * loop_perimeter(body.waypoints);
        }
        body.position = patrol_position(body, 0.0);
        body.drift_velocity = patrol_velocity(body, 0.0);
      }
      w.bodies.push_back(body);
    }
  }

  // Traps
  if (root.has("traps")) {
    const Reader traps = root.at("traps");
    for (std::size_t i = 0; i < traps.size(); ++i) {
      const Reader t = traps.at(i);
      OpticalTrap trap;
      trap.id = t.integer("id", static_cast<int>(i));
      trap.stiffness = t.number("stiffness", trap.stiffness);
      trap.delta = t.number("delta", trap.delta);
      trap.far_a = t.number("far_a", trap.far_a);
      trap.far_c = t.number("far_c", trap.far_c);
      trap.escape_radius = t.number("escape_radius", trap.escape_radius);
      trap.enabled = t.boolean("enabled", true);
      trap.attached_body = t.integer("attached_body", -1);
      require(trap.stiffness > 0.0, t, "stiffness", "must be > 0");
      require(trap.delta > 0.0, t, "delta", "must be > 0");
      require(trap.far_a > 0.0, t, "far_a", "must be > 0");
      require(trap.far_c >= 0.0, t, "far_c", "must be >= 0");
      require(trap.escape_radius > trap.delta, t, "escape_radius", "must exceed delta");
      if (trap.attached_body >= 0) {
        const Body* body = w.find_body(trap.attached_body);
        if (!body) t.at("attached_body").fail("no such body");
        if (body->is_obstacle()) t.at("attached_body").fail("obstacles cannot be trapped");
        trap.position = t.vec2("position", body->position);
      } else {
        trap.position = t.at("position").vec2();
      }
      w.traps.push_back(trap);
    }
  }

  // Task
  if (root.has("task")) {
    const Reader t = root.at("task");
    TaskSpec task;
    task.start = t.at("start").vec2();
    task.goal = t.at("goal").vec2();
    task.cell_id = t.at("cell_id").integer();
    const Body* cell = w.find_body(task.cell_id);
    if (!cell || cell->kind != BodyKind::Cell) t.at("cell_id").fail("must reference a cell body");
    const Reader robots = t.at("robot_ids");
    for (std::size_t i = 0; i < robots.size(); ++i) {
      const int id = robots.at(i).integer();
      const Body* rb = w.find_body(id);
      if (!rb || rb->kind != BodyKind::Robot) robots.at(i).fail("must reference a robot body");
      task.robot_ids.push_back(id);
    }
    if (task.robot_ids.size() != 2) t.at("robot_ids").fail("exactly two robots are required");
    if (w.traps.size() < task.robot_ids.size()) t.at("robot_ids").fail("each robot needs a trap");
    if (t.has("formation")) {
      const Reader f = t.at("formation");
      task.formation.cradle_angle_deg = f.number("cradle_angle_deg", task.formation.cradle_angle_deg);
      task.formation.squeeze = f.number("squeeze", task.formation.squeeze);
    }
    task.planning_radius = t.number("planning_radius", task.planning_radius);
    task.clearance = t.number("clearance", task.clearance);
    task.resolution = t.number("resolution", task.resolution);
    task.goal_tolerance = t.number("goal_tolerance", task.goal_tolerance);
    require(task.planning_radius >= 0.0, t, "planning_radius", "must be >= 0");
    require(task.resolution > 0.0, t, "resolution", "must be > 0");
    w.grasp.cell_id = task.cell_id;
    w.grasp.active = t.boolean("grasp_active", true);
    sc.task = task;
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& file, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(file);
  if (!in) throw ScenarioError(file.string() + ": cannot open scenario file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(file.string() + ": invalid JSON: " + e.what());
  }
  return parse_scenario(doc, seed_override);
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("OTGYM_DATA_DIR")) return env;
  return OTGYM_DATA_DIR;
}

std::filesystem::path default_scenario_path() { return data_dir() / "scenarios" / "four_branch.json"; }

json to_json(const Vec2& v) { return json::array({v.x, v.y}); }

Vec2 vec2_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json to_json(const SimConfig& c) {
  return {{"dt", c.dt},
          {"substeps", c.substeps},
          {"k_contact", c.k_contact},
          {"c_contact", c.c_contact},
          {"f_damage", c.f_damage},
          {"f_grasp_min", c.f_grasp_min},
          {"detach_persistence_steps", c.detach_persistence_steps},
          {"deviation_bound", c.deviation_bound},
          {"collision_penetration", c.collision_penetration},
          {"vdw_enabled", c.vdw_enabled},
          {"vdw_hamaker", c.vdw_hamaker},
          {"vdw_range", c.vdw_range},
          {"vdw_min_gap", c.vdw_min_gap}};
}

json to_json(const WorldState& w) {
  json bodies = json::array();
  for (const auto& b : w.bodies) {
    bodies.push_back({{"id", b.id},
                      {"kind", to_string(b.kind)},
                      {"position", to_json(b.position)},
                      {"radius", b.radius},
                      {"drift_velocity", to_json(b.drift_velocity)}});
  }
  json traps = json::array();
  for (const auto& t : w.traps) {
    traps.push_back({{"id", t.id},
                     {"position", to_json(t.position)},
                     {"enabled", t.enabled},
                     {"attached_body", t.attached_body}});
  }
  json out = {{"time", w.time},
              {"tick", w.tick},
              {"bodies", bodies},
              {"traps", traps},
              {"rng", {{"seed", w.rng.seed()}, {"counter", w.rng.counter()}}},
              {"grasp", {{"active", w.grasp.active}, {"cell_id", w.grasp.cell_id},
                         {"below_min_streak", w.grasp.below_min_streak}}}};
  if (w.failure) {
    out["failure"] = {{"kind", to_string(w.failure->kind)},
                      {"time", w.failure->time},
                      {"body_id", w.failure->body_id}};
  } else {
    out["failure"] = nullptr;
  }
  return out;
}

json to_json(const StepReport& r) {
  json robots = json::array();
  for (const auto& d : r.robots) {
    robots.push_back({{"id", d.body_id},
                      {"trap_distance", d.trap_distance},
                      {"optical_force", to_json(d.optical_force)},
                      {"cell_contact_force", d.cell_contact_force}});
  }
  return {{"robots", robots},
          {"max_cell_contact_force", r.max_cell_contact_force},
          {"max_trap_distance", r.max_trap_distance},
          {"concentric_contact", r.concentric_contact}};
}

std::string serialize(const WorldState& world) { return to_json(world).dump(); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t world_hash(const WorldState& world) { return fnv1a(serialize(world)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json step_log_record(const WorldState& world, const StepReport& report) {
  json positions = json::array();
  for (const auto& b : world.bodies) positions.push_back({{"id", b.id}, {"position", to_json(b.position)}});
  json traps = json::array();
  for (const auto& t : world.traps) traps.push_back(to_json(t.position));
  json rec = {{"time", world.time}, {"tick", world.tick}, {"bodies", positions},
              {"traps", traps},     {"forces", to_json(report)}};
  rec["failure"] = world.failure ? json(to_string(world.failure->kind)) : json(nullptr);
  return rec;
}

}  // namespace otgym
