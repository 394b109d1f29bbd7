#include "otgym/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <string>

namespace otgym {

OccupancyGrid::OccupancyGrid(int width, int height, double resolution, Vec2 origin)
    : width_(width), height_(height), resolution_(resolution), origin_(origin) {
  if (width <= 0 || height <= 0) throw PlanError(PlanError::Kind::BadInput, "grid must be nonempty");
  if (!(resolution > 0.0)) throw PlanError(PlanError::Kind::BadInput, "resolution must be > 0");
  cells_.assign(static_cast<std::size_t>(width) * height, 0);
}

std::size_t OccupancyGrid::free_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 0));
}

Vec2 OccupancyGrid::grid_to_world(Cell c) const {
  return origin_ + Vec2{c.x * resolution_, c.y * resolution_};
}

Cell OccupancyGrid::world_to_grid(const Vec2& p) const {
  const Vec2 rel = (p - origin_) / resolution_;
  const Cell c{static_cast<int>(std::lround(rel.x)), static_cast<int>(std::lround(rel.y))};
  if (!std::isfinite(rel.x) || !std::isfinite(rel.y) || !in_bounds(c)) {
    std::ostringstream msg;
    msg << "point (" << p.x << ", " << p.y << ") lies outside the grid";
    throw PlanError(PlanError::Kind::OutOfBounds, msg.str());
  }
  return c;
}

OccupancyGrid binarize(const Gray8Image& image, int threshold, double resolution, Vec2 origin) {
  if (image.width <= 0 || image.height <= 0 || image.pixels.empty()) {
    throw PlanError(PlanError::Kind::BadInput, "cannot binarize an empty image");
  }
  OccupancyGrid grid(image.width, image.height, resolution, origin);
  for (int row = 0; row < image.height; ++row) {
    for (int col = 0; col < image.width; ++col) {
      grid.set({col, image.height - 1 - row}, image.at(col, row) < threshold);
    }
  }
  return grid;
}

OccupancyGrid rasterize(const ChipGeometry& chip, double resolution) {
  const Rect& b = chip.bounds();
  const int w = std::max(1, static_cast<int>(std::ceil((b.max.x - b.min.x) / resolution)));
  const int h = std::max(1, static_cast<int>(std::ceil((b.max.y - b.min.y) / resolution)));
  OccupancyGrid grid(w, h, resolution, b.min + Vec2{resolution * 0.5, resolution * 0.5});
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) grid.set({i, j}, !chip.is_free(grid.grid_to_world({i, j})));
  return grid;
}

Gray8Image to_image(const OccupancyGrid& grid) {
  Gray8Image img{grid.width(), grid.height(), {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int row = 0; row < img.height; ++row)
    for (int col = 0; col < img.width; ++col)
      img.pixels[static_cast<std::size_t>(row) * img.width + col] =
          grid.occupied({col, img.height - 1 - row}) ? 0 : 255;
  return img;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

Gray8Image read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw PlanError(PlanError::Kind::BadInput, file.string() + ": cannot open");
  if (next_token(in) != "P5") throw PlanError(PlanError::Kind::BadInput, file.string() + ": not a binary PGM (P5)");
  Gray8Image img;
  try {
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (maxval <= 0 || maxval > 255) throw PlanError(PlanError::Kind::BadInput, "only 8-bit PGM is supported");
  } catch (const std::invalid_argument&) {
    throw PlanError(PlanError::Kind::BadInput, file.string() + ": malformed PGM header");
  }
  in.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw PlanError(PlanError::Kind::BadInput, file.string() + ": truncated raster");
  }
  return img;
}

void write_pgm(const std::filesystem::path& file, const Gray8Image& image) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw PlanError(PlanError::Kind::BadInput, file.string() + ": cannot write");
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

OccupancyGrid dilate(const OccupancyGrid& grid, int radius_cells) {
  if (radius_cells <= 0) return grid;
  const int w = grid.width(), h = grid.height(), r = radius_cells;
  // The square element is separable: a row pass then a column pass.
  OccupancyGrid rows = grid;
  for (int j = 0; j < h; ++j) {
    int last_occupied = std::numeric_limits<int>::min() / 2;
    std::vector<int> next(w + 1, std::numeric_limits<int>::max() / 2);
    for (int i = w - 1; i >= 0; --i) next[i] = grid.occupied({i, j}) ? i : next[i + 1];
    for (int i = 0; i < w; ++i) {
      if (grid.occupied({i, j})) last_occupied = i;
      rows.set({i, j}, i - last_occupied <= r || next[i] - i <= r);
    }
  }
  OccupancyGrid out = rows;
  for (int i = 0; i < w; ++i) {
    int last_occupied = std::numeric_limits<int>::min() / 2;
    std::vector<int> next(h + 1, std::numeric_limits<int>::max() / 2);
    for (int j = h - 1; j >= 0; --j) next[j] = rows.occupied({i, j}) ? j : next[j + 1];
    for (int j = 0; j < h; ++j) {
      if (rows.occupied({i, j})) last_occupied = j;
      out.set({i, j}, j - last_occupied <= r || next[j] - j <= r);
    }
  }
  return out;
}

int dilation_radius_cells(double robot_radius, double clearance, double resolution) {
  const double cells = (robot_radius + clearance) / resolution;
  return std::max(0, static_cast<int>(std::ceil(cells - 1e-9)));
}

double PathCost::value() const { return static_cast<double>(axial) + static_cast<double>(diagonal) * std::numbers::sqrt2; }

std::strong_ordering PathCost::operator<=>(const PathCost& o) const {
  // Compare a1 + b1*sqrt2 with a2 + b2*sqrt2 exactly: x = a1 - a2 against y*sqrt2, y = b2 - b1.
  const std::int64_t x = axial - o.axial;
  const std::int64_t y = o.diagonal - diagonal;
  if (x == 0 && y == 0) return std::strong_ordering::equal;
  bool less;
  if (x <= 0 && y >= 0) {
    less = true;
  } else if (x >= 0 && y <= 0) {
    less = false;
  } else if (x > 0) {  // y > 0
    less = x * x < 2 * y * y;
  } else {  // x < 0, y < 0
    less = x * x > 2 * y * y;
  }
  return less ? std::strong_ordering::less : std::strong_ordering::greater;
}

namespace {

PathCost octile(Cell a, Cell b) {
  const std::int64_t dx = std::abs(a.x - b.x), dy = std::abs(a.y - b.y);
  return {std::max(dx, dy) - std::min(dx, dy), std::min(dx, dy)};
}

struct OpenEntry {
  PathCost f;
  std::uint64_t order;
  Cell cell;
};

struct OpenCompare {
  bool operator()(const OpenEntry& a, const OpenEntry& b) const {
    if (a.f != b.f) return a.f > b.f;
    return a.order > b.order;
  }
};

}  // namespace

GridPath astar(const OccupancyGrid& grid, Cell start, Cell goal) {
  if (!grid.in_bounds(start) || !grid.in_bounds(goal)) {
    throw PlanError(PlanError::Kind::OutOfBounds, "start or goal outside the grid");
  }
  if (grid.occupied(start) || grid.occupied(goal)) {
    throw PlanError(PlanError::Kind::InvalidEndpoint, "start or goal cell is occupied");
  }
  const int w = grid.width();
  const std::size_t n = static_cast<std::size_t>(w) * grid.height();
  auto idx = [w](Cell c) { return static_cast<std::size_t>(c.y) * w + c.x; };

  std::vector<PathCost> g(n);
  std::vector<char> known(n, 0), closed(n, 0);
  std::vector<std::int64_t> parent(n, -1);
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, OpenCompare> open;
  std::uint64_t order = 0;

  known[idx(start)] = 1;
  open.push({octile(start, goal), order++, start});

  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

  while (!open.empty()) {
    const OpenEntry top = open.top();
    open.pop();
    const std::size_t ci = idx(top.cell);
    if (closed[ci]) continue;
    closed[ci] = 1;
    if (top.cell == goal) {
      GridPath path;
      path.cost = g[ci];
      for (std::int64_t k = static_cast<std::int64_t>(ci); k >= 0; k = parent[k]) {
        path.cells.push_back({static_cast<int>(k % w), static_cast<int>(k / w)});
      }
      std::reverse(path.cells.begin(), path.cells.end());
      return path;
    }
    for (int d = 0; d < 8; ++d) {
      const Cell nb{top.cell.x + kDx[d], top.cell.y + kDy[d]};
      if (!grid.free(nb)) continue;
      const bool diagonal = d >= 4;
      if (diagonal && (!grid.free({top.cell.x + kDx[d], top.cell.y}) ||
                       !grid.free({top.cell.x, top.cell.y + kDy[d]}))) {
        continue;
      }
      const std::size_t ni = idx(nb);
      if (closed[ni]) continue;
      const PathCost cand = g[ci] + (diagonal ? PathCost{0, 1} : PathCost{1, 0});
      if (!known[ni] || cand < g[ni]) {
        known[ni] = 1;
        g[ni] = cand;
        parent[ni] = static_cast<std::int64_t>(ci);
        open.push({cand + octile(nb, goal), order++, nb});
      }
    }
  }
  throw PlanError(PlanError::Kind::NoPath, "goal is unreachable from start");
}

Vec2 bspline_point(std::span<const Vec2> control, int degree, double u) {
  const int n = static_cast<int>(control.size()) - 1;
  const int p = degree;
  const int spans = n - p + 1;
  auto knot = [&](int i) -> double {
    if (i <= p) return 0.0;
    if (i >= n + 1) return 1.0;
    return static_cast<double>(i - p) / spans;
  };
  if (u >= 1.0) return control.back();
  if (u <= 0.0) return control.front();
  // Knot span index k with knot(k) <= u < knot(k+1), p <= k <= n.
  int k = p + static_cast<int>(std::floor(u * spans));
  k = std::clamp(k, p, n);
  std::vector<Vec2> d(control.begin() + (k - p), control.begin() + (k + 1));
  for (int r = 1; r <= p; ++r) {
    for (int j = p; j >= r; --j) {
      const int i = j + k - p;
      const double denom = knot(i + p - r + 1) - knot(i);
      const double alpha = denom > 0.0 ? (u - knot(i)) / denom : 0.0;
      d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
    }
  }
  return d[p];
}

namespace {

std::vector<Vec2> sample_bspline(std::span<const Vec2> control, int degree, int samples_per_span) {
  const int n = static_cast<int>(control.size()) - 1;
  const int spans = n - degree + 1;
  const int total = spans * samples_per_span;
  std::vector<Vec2> out;
  out.reserve(total + 1);
  for (int i = 0; i < total; ++i) out.push_back(bspline_point(control, degree, static_cast<double>(i) / total));
  out.push_back(control.back());
  out.front() = control.front();
  return out;
}

bool polyline_free(const std::vector<Vec2>& pts, const OccupancyGrid& grid) {
  const double step = grid.resolution() * 0.25;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double len = distance(pts[i], pts[i + 1]);
    const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
    for (int k = 0; k <= n; ++k) {
      const Vec2 p = pts[i] + (pts[i + 1] - pts[i]) * (static_cast<double>(k) / n);
      Cell c;
      try {
        c = grid.world_to_grid(p);
      } catch (const PlanError&) {
        return false;
      }
      if (grid.occupied(c)) return false;
    }
  }
  return true;
}

std::vector<Vec2> densify(std::span<const Vec2> pts) {
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.push_back(pts[i]);
    if (i + 1 < pts.size()) out.push_back((pts[i] + pts[i + 1]) * 0.5);
  }
  return out;
}

}  // namespace

SmoothingResult smooth_bspline(std::span<const Vec2> control, const OccupancyGrid* collision_grid,
                               int degree, int samples_per_span) {
  SmoothingResult result;
  if (degree < 1 || samples_per_span < 1 || static_cast<int>(control.size()) < degree + 1) {
    result.path = SmoothPath(std::vector<Vec2>(control.begin(), control.end()));
    return result;
  }
  std::vector<Vec2> sampled = sample_bspline(control, degree, samples_per_span);
  if (!collision_grid || polyline_free(sampled, *collision_grid)) {
    result.path = SmoothPath(std::move(sampled));
    return result;
  }
  const std::vector<Vec2> dense = densify(control);
  sampled = sample_bspline(dense, degree, samples_per_span);
  result.densified = true;
  if (polyline_free(sampled, *collision_grid)) {
    result.path = SmoothPath(std::move(sampled));
    return result;
  }
  result.fallback = true;
  result.path = SmoothPath(std::vector<Vec2>(control.begin(), control.end()));
  return result;
}

PlanResult plan_path(const OccupancyGrid& map, const PlanRequest& request) {
  PlanResult result;
  result.dilation_radius = dilation_radius_cells(request.robot_radius, request.clearance, map.resolution());
  result.dilated = dilate(map, result.dilation_radius);
  const Cell start = result.dilated.world_to_grid(request.start);
  const Cell goal = result.dilated.world_to_grid(request.goal);
  result.grid_path = astar(result.dilated, start, goal);
  for (const Cell& c : result.grid_path.cells) result.raw.push_back(result.dilated.grid_to_world(c));
  result.raw.front() = request.start;
  if (result.raw.size() > 1) {
    result.raw.back() = request.goal;
  } else {
    result.raw.push_back(request.goal);
  }
  result.smoothed = smooth_bspline(result.raw, &result.dilated, request.degree, request.samples_per_span);
  return result;
}

}  // namespace otgym
