#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <optional>
#include <fstream>

#include "otgym/compare.hpp"
#include "otgym/planner.hpp"
#include "otgym/rng.hpp"

using namespace otgym;

namespace {

// Exact comparison of a + d*sqrt(2) costs without floating point.
bool cost_less(const PathCost& p, const PathCost& q) {
  const std::int64_t da = p.axial - q.axial;  // p < q  <=>  da < (q.d - p.d) * sqrt2
  const std::int64_t dd = q.diagonal - p.diagonal;
  if (da <= 0 && dd >= 0) return da < 0 || dd > 0;
  if (da >= 0 && dd <= 0) return false;
  if (da < 0) return da * da > 2 * dd * dd;  // dd < 0: both sides negative
  return da * da < 2 * dd * dd;               // da > 0, dd > 0
}

/// Plain Dijkstra on the same move set: 8 neighbours, no corner cutting.
std::optional<PathCost> dijkstra(const OccupancyGrid& g, Cell s, Cell t) {
  const int w = g.width(), h = g.height();
  std::vector<std::optional<PathCost>> dist(static_cast<std::size_t>(w) * h);
  std::vector<bool> done(dist.size(), false);
  auto id = [w](Cell c) { return static_cast<std::size_t>(c.y) * w + c.x; };
  dist[id(s)] = PathCost{};
  for (;;) {
    // O(n^2) selection keeps the oracle obviously correct.
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (!done[i] && dist[i] && (!best || cost_less(*dist[i], *dist[*best]))) best = i;
    }
    if (!best) return std::nullopt;
    const Cell c{static_cast<int>(*best % w), static_cast<int>(*best / w)};
    if (c.x == t.x && c.y == t.y) return dist[*best];
    done[*best] = true;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        const Cell n{c.x + dx, c.y + dy};
        if (!g.free(n)) continue;
        if (dx && dy && (!g.free({c.x + dx, c.y}) || !g.free({c.x, c.y + dy}))) continue;
        const PathCost step = dx && dy ? PathCost{0, 1} : PathCost{1, 0};
        const PathCost nd = *dist[*best] + step;
        if (!dist[id(n)] || cost_less(nd, *dist[id(n)])) dist[id(n)] = nd;
      }
    }
  }
}

OccupancyGrid random_grid(Rng& rng, int w, int h, double density) {
  OccupancyGrid g(w, h, 1.0, {0, 0});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g.set({x, y}, rng.uniform() < density);
  return g;
}

bool path_valid(const OccupancyGrid& g, const GridPath& p) {
  for (std::size_t i = 0; i < p.cells.size(); ++i) {
    if (!g.free(p.cells[i])) return false;
    if (i == 0) continue;
    const int dx = p.cells[i].x - p.cells[i - 1].x, dy = p.cells[i].y - p.cells[i - 1].y;
    if (std::abs(dx) > 1 || std::abs(dy) > 1 || (!dx && !dy)) return false;
    if (dx && dy && (!g.free({p.cells[i - 1].x + dx, p.cells[i - 1].y}) || !g.free({p.cells[i - 1].x, p.cells[i - 1].y + dy})))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("exact cost comparison oracle sanity") {
  CHECK(cost_less({3, 0}, {0, 3}));   // 3 < 4.24
  CHECK(cost_less({0, 2}, {3, 0}));   // 2.83 < 3
  CHECK_FALSE(cost_less({2, 2}, {2, 2}));
  CHECK(cost_less({1, 1}, {2, 1}));
}

TEST_CASE("A* cost equals Dijkstra on random grids") {
  Rng rng(17, Stream::Scenario);
  int solved = 0, unsolvable = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 16 + static_cast<int>(rng.below(49)), h = 16 + static_cast<int>(rng.below(49));
    OccupancyGrid g = random_grid(rng, w, h, 0.15 + 0.2 * rng.uniform());
    const Cell s{static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h))};
    const Cell t{static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h))};
    g.set(s, false);
    g.set(t, false);
    const auto oracle = dijkstra(g, s, t);
    if (oracle) {
      const GridPath p = astar(g, s, t);
      CHECK(p.cost == *oracle);
      CHECK(path_valid(g, p));
      CHECK(p.cells.front().x == s.x);
      CHECK(p.cells.back().y == t.y);
      ++solved;
    } else {
      CHECK_THROWS_AS(astar(g, s, t), PlanError);
      ++unsolvable;
    }
  }
  CHECK(solved > 50);
  MESSAGE("solved " << solved << ", unsolvable " << unsolvable);
}

TEST_CASE("A* refuses occupied or out-of-range endpoints") {
  OccupancyGrid g(8, 8, 1.0, {0, 0});
  g.set({5, 5}, true);
  try {
    astar(g, {0, 0}, {5, 5});
    FAIL("expected PlanError");
  } catch (const PlanError& e) {
    CHECK(e.kind() == PlanError::Kind::InvalidEndpoint);
  }
  CHECK_THROWS_AS(astar(g, {0, 0}, {9, 1}), PlanError);
}

TEST_CASE("A* does not cut corners") {
  OccupancyGrid g(3, 3, 1.0, {0, 0});
  g.set({1, 0}, true);
  const GridPath p = astar(g, {0, 0}, {2, 1});
  CHECK(path_valid(g, p));
  CHECK(p.cost == PathCost{3, 0});  // the diagonal past (1, 0) is refused
}

TEST_CASE("dilation equals brute-force Chebyshev expansion") {
  Rng rng(5, Stream::Scenario);
  for (int trial = 0; trial < 20; ++trial) {
    const OccupancyGrid g = random_grid(rng, 20 + trial, 25, 0.05);
    for (int r : {0, 1, 2, 4}) {
      const OccupancyGrid d = dilate(g, r);
      bool same = true;
      for (int y = 0; y < g.height() && same; ++y) {
        for (int x = 0; x < g.width() && same; ++x) {
          bool occ = false;
          for (int yy = std::max(0, y - r); yy <= std::min(g.height() - 1, y + r); ++yy)
            for (int xx = std::max(0, x - r); xx <= std::min(g.width() - 1, x + r); ++xx) occ = occ || g.occupied({xx, yy});
          same = occ == d.occupied({x, y});
        }
      }
      CHECK(same);
    }
  }
  CHECK(dilation_radius_cells(6.0, 0.5, 1.0) == 7);
  CHECK(dilation_radius_cells(0.0, 0.0, 0.5) == 0);
  CHECK(dilation_radius_cells(1.0, 0.0, 0.5) == 2);
}

TEST_CASE("grid and world coordinates round-trip") {
  OccupancyGrid g(10, 6, 0.5, {-2.0, 1.0});
  CHECK(g.grid_to_world({0, 0}) == Vec2{-2.0, 1.0});
  CHECK(g.grid_to_world({3, 2}) == Vec2{-0.5, 2.0});
  const Cell c = g.world_to_grid({-0.4, 2.2});
  CHECK(c.x == 3);
  CHECK(c.y == 2);
  CHECK_THROWS_AS(g.world_to_grid({100, 0}), PlanError);
}

TEST_CASE("B-spline: endpoints interpolated and curve inside the control hull box") {
  const std::vector<Vec2> ctrl = {{0, 0}, {4, 0}, {4, 4}, {8, 4}, {8, 8}};
  const SmoothingResult s = smooth_bspline(ctrl, nullptr, 3, 8);
  REQUIRE_FALSE(s.fallback);
  CHECK(s.path.front() == ctrl.front());
  CHECK(s.path.back() == ctrl.back());
  CHECK(s.path.points().size() == 8 * (ctrl.size() - 3) + 1);
  for (const auto& p : s.path.points()) {
    CHECK(p.x >= -1e-12);
    CHECK(p.x <= 8 + 1e-12);
    CHECK(p.y >= -1e-12);
    CHECK(p.y <= 8 + 1e-12);
  }
  // Collinear control points give a straight curve.
  const std::vector<Vec2> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}};
  const SmoothingResult straight = smooth_bspline(line, nullptr);
  for (const auto& p : straight.path.points()) CHECK(p.x == doctest::Approx(p.y));
  // Too few points come back unchanged.
  const std::vector<Vec2> two = {{0, 0}, {1, 0}};
  CHECK(smooth_bspline(two, nullptr).path.points() == two);
}

TEST_CASE("bundled chip map loads with the expected free area") {
  const ChipMap map = load_chip_map(default_chip_map_path());
  const OccupancyGrid g = load_map_grid(map);
  CHECK(g.width() == 160);
  CHECK(g.height() == 160);
  CHECK(g.free_count() == 8015);
  const PlanResult plan = plan_path(g, plan_request(map));
  CHECK(plan.dilation_radius == 7);
  CHECK(plan.raw.front() == map.start);
  CHECK(plan.raw.back() == map.goal);
  CHECK_FALSE(plan.smoothed.fallback);
  for (const auto& p : plan.smoothed.path.points()) CHECK(plan.dilated.free(plan.dilated.world_to_grid(p)));
  // Occupied goal: a wall pixel.
  PlanRequest bad = plan_request(map);
  bad.goal = {80, 10};
  CHECK_THROWS_AS(plan_path(g, bad), PlanError);
}

TEST_CASE("smaller robot radius never lengthens the grid path") {
  const ChipMap map = load_chip_map(default_chip_map_path());
  const OccupancyGrid g = load_map_grid(map);
  PlanRequest req = plan_request(map);
  const PathCost big = plan_path(g, req).grid_path.cost;
  req.robot_radius = 0.0;
  const PlanResult small = plan_path(g, req);
  CHECK_FALSE(big < small.grid_path.cost);
  req.clearance = 0.0;
  CHECK(plan_path(g, req).dilation_radius == 0);
}

TEST_CASE("PGM write and read round-trip") {
  OccupancyGrid g(7, 5, 1.0, {0, 0});
  g.set({1, 1}, true);
  g.set({6, 4}, true);
  const auto file = std::filesystem::temp_directory_path() / "otgym_roundtrip.pgm";
  write_pgm(file, to_image(g));
  const OccupancyGrid back = binarize(read_pgm(file), 128, 1.0, {0, 0});
  CHECK(back == g);
  std::filesystem::remove(file);
}

TEST_CASE("chip descriptor rejects unknown keys") {
  const auto dir = std::filesystem::temp_directory_path() / "otgym_map_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "m.json");
    f << R"({"image": "x.pgm", "resolution": 1.0, "origin": [0, 0], "threshold": 128, "start": [0, 0],
             "goal": [1, 1], "robot_radius": 1, "clearance": 0, "colour": "red"})";
  }
  CHECK_THROWS(load_chip_map(dir / "m.json"));
  std::filesystem::remove_all(dir);
}
