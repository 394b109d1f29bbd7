#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "otgym/path.hpp"
#include "otgym/sim.hpp"
#include "otgym/vec2.hpp"

namespace otgym {

struct Cell {
  int x = 0;
  int y = 0;
  constexpr bool operator==(const Cell&) const = default;
};

/// 8-bit grayscale image, row-major, row 0 at the top (PGM order).
struct Gray8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

class PlanError : public std::runtime_error {
 public:
  enum class Kind { NoPath, InvalidEndpoint, OutOfBounds, BadInput };
  PlanError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Binary occupancy map. Cell (0, 0) is centred on `origin`; cell (i, j) is
/// centred on origin + (i, j) * resolution, with j growing along +y.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(int width, int height, double resolution, Vec2 origin);

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const Vec2& origin() const { return origin_; }

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  bool occupied(Cell c) const { return cells_[index(c)] != 0; }
  bool free(Cell c) const { return in_bounds(c) && !occupied(c); }
  void set(Cell c, bool occupied) { cells_[index(c)] = occupied ? 1 : 0; }
  std::size_t free_count() const;
  bool operator==(const OccupancyGrid&) const = default;

  Vec2 grid_to_world(Cell c) const;
  /// Throws PlanError(OutOfBounds) for points outside the grid.
  Cell world_to_grid(const Vec2& p) const;

 private:
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y) * width_ + c.x; }

  int width_ = 0;
  int height_ = 0;
  double resolution_ = 1.0;
  Vec2 origin_;
  std::vector<std::uint8_t> cells_;
};

/// Occupied iff intensity < threshold (walls are dark). Image row 0 maps to the
/// top grid row.
OccupancyGrid binarize(const Gray8Image& image, int threshold, double resolution, Vec2 origin);

/// Rasterizes the free space of a chip; cells whose centre lies in a channel are free.
OccupancyGrid rasterize(const ChipGeometry& chip, double resolution);
Gray8Image to_image(const OccupancyGrid& grid);

Gray8Image read_pgm(const std::filesystem::path& file);
void write_pgm(const std::filesystem::path& file, const Gray8Image& image);

/// Square structuring element: a cell becomes occupied if any occupied input cell
/// lies within Chebyshev distance radius_cells.
OccupancyGrid dilate(const OccupancyGrid& grid, int radius_cells);
int dilation_radius_cells(double robot_radius, double clearance, double resolution);

/// Cost of an 8-connected path, kept as exact move counts so comparisons are
/// exact: value = axial + diagonal * sqrt(2).
struct PathCost {
  std::int64_t axial = 0;
  std::int64_t diagonal = 0;

  double value() const;
  PathCost operator+(const PathCost& o) const { return {axial + o.axial, diagonal + o.diagonal}; }
  bool operator==(const PathCost&) const = default;
  std::strong_ordering operator<=>(const PathCost& o) const;
};

struct GridPath {
  std::vector<Cell> cells;
  PathCost cost;
};

/// Eight-directional A*. Diagonal moves are not allowed past an occupied axial
/// neighbour, so paths never clip obstacle corners.
GridPath astar(const OccupancyGrid& grid, Cell start, Cell goal);

struct SmoothingResult {
  SmoothPath path;
  bool densified = false;  // first attempt collided; the control polygon was refined
  bool fallback = false;   // smoothing failed; `path` is the raw control polygon
};

/// Clamped uniform B-spline through the control polygon (approximating, endpoints
/// interpolated). When `collision_grid` is given, the sampled curve must stay in
/// free cells. Fewer than degree + 1 control points are returned unchanged.
SmoothingResult smooth_bspline(std::span<const Vec2> control, const OccupancyGrid* collision_grid,
                               int degree = 3, int samples_per_span = 8);

/// Point on the clamped uniform B-spline at parameter u in [0, 1].
Vec2 bspline_point(std::span<const Vec2> control, int degree, double u);

struct PlanRequest {
  Vec2 start;
  Vec2 goal;
  double robot_radius = 6.0;
  double clearance = 0.5;
  int degree = 3;
  int samples_per_span = 8;
};

struct PlanResult {
  OccupancyGrid dilated;
  int dilation_radius = 0;
  GridPath grid_path;
  std::vector<Vec2> raw;  // A* cell centres with exact start/goal endpoints
  SmoothingResult smoothed;
};

PlanResult plan_path(const OccupancyGrid& map, const PlanRequest& request);

}  // namespace otgym
