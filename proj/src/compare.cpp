#include "otgym/compare.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "otgym/scenario.hpp"

namespace otgym {

namespace {

Vec2 vec_from_json(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string("chip map: '") + key + "' must be [x, y]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

std::filesystem::path default_chip_map_path() { return data_dir() / "maps" / "chip.json"; }

ChipMap load_chip_map(const std::filesystem::path& descriptor) {
  std::ifstream in(descriptor);
  if (!in) throw std::runtime_error("cannot open chip map descriptor " + descriptor.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("chip map " + descriptor.string() + ": " + e.what());
  }
  static const std::array<const char*, 8> known = {"image", "resolution", "origin", "threshold",
                                                   "start", "goal",       "robot_radius", "clearance"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }) == known.end())
      throw std::invalid_argument("chip map: unknown key '" + it.key() + "'");
  }
  ChipMap m;
  m.image = descriptor.parent_path() / j.at("image").get<std::string>();
  m.resolution = j.value("resolution", m.resolution);
  if (j.contains("origin")) m.origin = vec_from_json(j, "origin");
  m.threshold = j.value("threshold", m.threshold);
  m.start = vec_from_json(j, "start");
  m.goal = vec_from_json(j, "goal");
  m.robot_radius = j.value("robot_radius", m.robot_radius);
  m.clearance = j.value("clearance", m.clearance);
  if (!(m.resolution > 0.0)) throw std::invalid_argument("chip map: resolution must be positive");
  if (m.threshold < 0 || m.threshold > 255) throw std::invalid_argument("chip map: threshold must be in [0, 255]");
  if (m.robot_radius < 0.0 || m.clearance < 0.0) throw std::invalid_argument("chip map: negative robot size");
  return m;
}

OccupancyGrid load_map_grid(const ChipMap& map) {
  return binarize(read_pgm(map.image), map.threshold, map.resolution, map.origin);
}

PlanRequest plan_request(const ChipMap& map) {
  PlanRequest r;
  r.start = map.start;
  r.goal = map.goal;
  r.robot_radius = map.robot_radius;
  r.clearance = map.clearance;
  return r;
}

nlohmann::json to_json(const ChipMap& m) {
  return {{"image", m.image.string()},
          {"resolution", m.resolution},
          {"origin", {m.origin.x, m.origin.y}},
          {"threshold", m.threshold},
          {"start", {m.start.x, m.start.y}},
          {"goal", {m.goal.x, m.goal.y}},
          {"robot_radius", m.robot_radius},
          {"clearance", m.clearance}};
}

nlohmann::json to_json(const TrajectoryMetrics& m) {
  return {{"total_length", m.total_length},
          {"mean_curvature", m.mean_curvature},
          {"angular_deviation", m.angular_deviation},
          {"hf_energy_ratio", m.hf_energy_ratio}};
}

double metric_value(const TrajectoryMetrics& m, std::size_t index) {
  switch (index) {
    case 0: return m.total_length;
    case 1: return m.mean_curvature;
    case 2: return m.angular_deviation;
    case 3: return m.hf_energy_ratio;
  }
  throw std::out_of_range("metric index");
}

PathComparison compare_paths(const PlanResult& plan, const OperatorProfile& sketch,
                             std::span<const std::uint64_t> seeds, double dt) {
  PathComparison c;
  c.bspline = compute_metrics(plan.smoothed.path.points());
  c.astar = compute_metrics(plan.raw);
  for (std::uint64_t s : seeds) {
    const auto trace = operator_sketch(plan.smoothed.path, sketch, s, dt);
    c.seeds.push_back(s);
    c.manual.push_back(compute_metrics(trace));
  }
  return c;
}

std::array<bool, 4> check_orderings(const PathComparison& c) {
  std::array<bool, 4> ok{};
  for (std::size_t k = 0; k < ok.size(); ++k) {
    const double b = metric_value(c.bspline, k), a = metric_value(c.astar, k);
    bool hold = b < a && !c.manual.empty();
    for (const auto& m : c.manual) hold = hold && a < metric_value(m, k);
    ok[k] = hold;
  }
  return ok;
}

nlohmann::json to_json(const PathComparison& c) {
  nlohmann::json manual = nlohmann::json::array();
  for (std::size_t i = 0; i < c.manual.size(); ++i) {
    auto row = to_json(c.manual[i]);
    row["seed"] = c.seeds[i];
    manual.push_back(row);
  }
  const auto ok = check_orderings(c);
  nlohmann::json orderings;
  for (std::size_t k = 0; k < ok.size(); ++k) orderings[kMetricNames[k]] = ok[k];
  return {{"bspline", to_json(c.bspline)}, {"astar", to_json(c.astar)}, {"manual", manual}, {"orderings", orderings}};
}

}  // namespace otgym
