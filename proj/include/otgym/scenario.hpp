#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/sim.hpp"

namespace otgym {

/// Raised for scenario files that do not match the schema. The message starts
/// with the JSON path of the offending field, e.g. "bodies[2].radius: must be > 0".
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Placement of the two robots relative to the carried cell. Robots sit behind
/// the cell at +/- cradle_angle from the travel direction, pressed `squeeze` µm
/// into it.
struct FormationSpec {
  double cradle_angle_deg = 45.0;
  double squeeze = 0.05;
};

/// Transport task attached to a scenario.
struct TaskSpec {
  Vec2 start;
  Vec2 goal;
  int cell_id = -1;
  std::vector<int> robot_ids;  // robot i is driven by trap i
  FormationSpec formation;
  double planning_radius = 6.0;  // envelope of the carried assembly, µm
  double clearance = 0.5;        // µm
  double resolution = 0.5;       // planning grid µm/cell
  double goal_tolerance = 1.0;   // µm
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  WorldState world;
  SimConfig config;
  std::optional<TaskSpec> task;
  nlohmann::json source;  // document as loaded, before seed override
};

Scenario parse_scenario(const nlohmann::json& doc, std::optional<std::uint64_t> seed_override = {});
Scenario load_scenario(const std::filesystem::path& file,
                       std::optional<std::uint64_t> seed_override = {});

/// Directory holding the bundled scenarios and maps (compiled-in source path,
/// overridable through the OTGYM_DATA_DIR environment variable).
std::filesystem::path data_dir();
std::filesystem::path default_scenario_path();

nlohmann::json to_json(const Vec2& v);
Vec2 vec2_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& config);
nlohmann::json to_json(const WorldState& world);
nlohmann::json to_json(const StepReport& report);

/// Canonical serialization used for determinism checks.
std::string serialize(const WorldState& world);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t world_hash(const WorldState& world);
std::string hex64(std::uint64_t v);

/// One JSON object per step: time, body positions, trap positions, forces, failure.
nlohmann::json step_log_record(const WorldState& world, const StepReport& report);

}  // namespace otgym
