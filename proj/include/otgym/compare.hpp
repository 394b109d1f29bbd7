#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/metrics.hpp"
#include "otgym/planner.hpp"
#include "otgym/shared.hpp"

namespace otgym {

/// A grayscale chip image plus the planning query that goes with it.
struct ChipMap {
  std::filesystem::path image;  // absolute after loading
  double resolution = 1.0;      // µm per pixel
  Vec2 origin;                  // world position of the bottom-left pixel centre
  int threshold = 128;
  Vec2 start;
  Vec2 goal;
  double robot_radius = 6.0;
  double clearance = 0.5;
};

std::filesystem::path default_chip_map_path();
/// Reads the JSON descriptor; `image` is resolved relative to the descriptor.
ChipMap load_chip_map(const std::filesystem::path& descriptor);
OccupancyGrid load_map_grid(const ChipMap& map);
PlanRequest plan_request(const ChipMap& map);
nlohmann::json to_json(const ChipMap& map);

nlohmann::json to_json(const TrajectoryMetrics& m);

inline constexpr std::array<const char*, 4> kMetricNames = {"total_length", "mean_curvature", "angular_deviation",
                                                            "hf_energy_ratio"};
double metric_value(const TrajectoryMetrics& m, std::size_t index);

/// Planned, smoothed and hand-traced versions of one route. Every trajectory is
/// measured on its own vertices: A* cell centres, spline samples, and one
/// operator sample per control tick.
struct PathComparison {
  TrajectoryMetrics bspline;
  TrajectoryMetrics astar;
  std::vector<std::uint64_t> seeds;
  std::vector<TrajectoryMetrics> manual;  // one per seed
};

PathComparison compare_paths(const PlanResult& plan, const OperatorProfile& sketch,
                             std::span<const std::uint64_t> seeds, double dt = 0.01);

/// Per metric: bspline < astar < manual, strictly, for every seed.
std::array<bool, 4> check_orderings(const PathComparison& c);

nlohmann::json to_json(const PathComparison& c);

}  // namespace otgym
