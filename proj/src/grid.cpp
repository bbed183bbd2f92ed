#include "stam/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "stam/error.hpp"

namespace stam {

namespace {

// World point expressed in the grid frame (origin corner, grid axes).
Point2 to_grid_frame(Point2 p, const GridGeometry& g) {
  const double dx = p.x - g.origin.x;
  const double dy = p.y - g.origin.y;
  if (g.origin.alpha == 0.0) return {dx, dy};
  const double c = std::cos(g.origin.alpha), s = std::sin(g.origin.alpha);
  return {c * dx + s * dy, -s * dx + c * dy};
}

Point2 from_grid_frame(Point2 q, const GridGeometry& g) {
  if (g.origin.alpha == 0.0) return {g.origin.x + q.x, g.origin.y + q.y};
  const double c = std::cos(g.origin.alpha), s = std::sin(g.origin.alpha);
  return {g.origin.x + c * q.x - s * q.y, g.origin.y + s * q.x + c * q.y};
}

}  // namespace

GridGeometry::GridGeometry(int width_, int height_, double resolution_, Pose origin_)
    : width(width_), height(height_), resolution(resolution_), origin(origin_) {
  if (width < 1 || height < 1) throw Error(Errc::InvalidArgument, "grid must have at least one cell");
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw Error(Errc::InvalidArgument, "grid resolution must be positive");
}

bool GridGeometry::contains(Point2 p) const {
  const Point2 q = to_grid_frame(p, *this);
  const double cx = std::floor(q.x / resolution);
  const double cy = std::floor(q.y / resolution);
  return cx >= 0 && cy >= 0 && cx < width && cy < height;
}

Cell world_to_cell(Point2 p, const GridGeometry& g) {
  const Point2 q = to_grid_frame(p, g);
  const double cx = std::floor(q.x / g.resolution);
  const double cy = std::floor(q.y / g.resolution);
  if (!(cx >= 0 && cy >= 0 && cx < g.width && cy < g.height)) {
    std::ostringstream os;
    os << "point (" << p.x << ", " << p.y << ") outside " << g.width << "x" << g.height << " grid";
    throw Error(Errc::OutOfBounds, os.str());
  }
  return {static_cast<int>(cx), static_cast<int>(cy)};
}

Point2 cell_to_world(Cell c, const GridGeometry& g) {
  if (!g.contains(c)) throw Error(Errc::OutOfBounds, "cell outside grid");
  return from_grid_frame({(c.col + 0.5) * g.resolution, (c.row + 0.5) * g.resolution}, g);
}

OccupancyGrid::OccupancyGrid(GridGeometry geometry)
    : geometry_(geometry), cells_(geometry.size(), Occupancy::Free) {}

OccupancyGrid::OccupancyGrid(GridGeometry geometry, std::vector<Occupancy> cells)
    : geometry_(geometry), cells_(std::move(cells)) {
  if (cells_.size() != geometry_.size()) throw Error(Errc::InvalidArgument, "cell count does not match geometry");
}

double OccupancyGrid::clearance(Point2 p, double max_range) const {
  const auto& g = geometry_;
  const Point2 q = to_grid_frame(p, g);
  const int reach = static_cast<int>(std::ceil(max_range / g.resolution)) + 1;
  const int pc = static_cast<int>(std::floor(q.x / g.resolution));
  const int pr = static_cast<int>(std::floor(q.y / g.resolution));
  double best = max_range;
  for (int r = std::max(0, pr - reach); r <= std::min(g.height - 1, pr + reach); ++r) {
    for (int c = std::max(0, pc - reach); c <= std::min(g.width - 1, pc + reach); ++c) {
      if (!occupied({c, r})) continue;
      // closest point of the cell square
      const double x0 = c * g.resolution, y0 = r * g.resolution;
      const double nx = std::clamp(q.x, x0, x0 + g.resolution);
      const double ny = std::clamp(q.y, y0, y0 + g.resolution);
      best = std::min(best, std::hypot(q.x - nx, q.y - ny));
    }
  }
  return best;
}

ScalarField::ScalarField(GridGeometry geometry, double fill) : geometry_(geometry), values_(geometry.size(), fill) {}

ScalarField::ScalarField(GridGeometry geometry, std::vector<double> values)
    : geometry_(geometry), values_(std::move(values)) {
  if (values_.size() != geometry_.size()) throw Error(Errc::InvalidArgument, "value count does not match geometry");
}

double ScalarField::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values_) m = std::max(m, v);
  return m;
}

ScalarField normalize_costmap(const OccupancyGrid& grid, double inflation_radius) {
  if (!(inflation_radius >= 0.0)) throw Error(Errc::InvalidArgument, "inflation radius must be >= 0");
  const auto& g = grid.geometry();
  ScalarField out(g, 0.0);
  const int reach = inflation_radius > 0.0 ? static_cast<int>(std::ceil(inflation_radius / g.resolution)) : 0;

  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      if (grid.occupied({col, row})) {
        out.at({col, row}) = 1.0;
        continue;
      }
      if (reach == 0) continue;
      // Brute force over the obstacle cells that can possibly lie within the radius.
      double nearest = std::numeric_limits<double>::infinity();
      for (int r = std::max(0, row - reach); r <= std::min(g.height - 1, row + reach); ++r) {
        for (int c = std::max(0, col - reach); c <= std::min(g.width - 1, col + reach); ++c) {
          if (!grid.occupied({c, r})) continue;
          nearest = std::min(nearest, std::hypot(double(c - col), double(r - row)) * g.resolution);
        }
      }
      if (nearest <= inflation_radius) out.at({col, row}) = 1.0 - nearest / inflation_radius;
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

OccupancyGrid parse_map(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error(Errc::ParseError, "empty map file");
  std::istringstream hs(header);
  int width = 0, height = 0;
  double res = 0, ox = 0, oy = 0, oa = 0;
  if (!(hs >> width >> height >> res >> ox >> oy >> oa)) throw Error(Errc::ParseError, "bad map header: " + header);

  GridGeometry geometry;
  try {
    geometry = GridGeometry(width, height, res, Pose(ox, oy, oa));
  } catch (const Error& e) {
    throw Error(Errc::ParseError, std::string("bad map header: ") + e.what());
  }
  OccupancyGrid grid(geometry);
  for (int printed = 0; printed < height; ++printed) {
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::ParseError, "map truncated");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (static_cast<int>(line.size()) != width) throw Error(Errc::ParseError, "map row has wrong width");
    const int row = height - 1 - printed;
    for (int col = 0; col < width; ++col) {
      switch (line[col]) {
        case '.': break;
        case '#': grid.set({col, row}, Occupancy::Occupied); break;
        default: throw Error(Errc::ParseError, std::string("unexpected map character '") + line[col] + "'");
      }
    }
  }
  return grid;
}

OccupancyGrid load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ParseError, "cannot open map " + path);
  return parse_map(in);
}

std::string format_map(const OccupancyGrid& grid) {
  const auto& g = grid.geometry();
  std::string out = std::to_string(g.width) + " " + std::to_string(g.height) + " " + format_double(g.resolution) +
                    " " + format_double(g.origin.x) + " " + format_double(g.origin.y) + " " +
                    format_double(g.origin.alpha) + "\n";
  out.reserve(out.size() + g.size() + g.height);
  for (int row = g.height - 1; row >= 0; --row) {
    for (int col = 0; col < g.width; ++col) out += grid.occupied({col, row}) ? '#' : '.';
    out += '\n';
  }
  return out;
}

void save_map(const OccupancyGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write map " + path);
  out << format_map(grid);
}

OccupancyGrid default_room() {
  OccupancyGrid grid(GridGeometry(160, 160, 0.1));
  const auto& g = grid.geometry();
  for (int i = 0; i < g.width; ++i) {
    grid.set({i, 0}, Occupancy::Occupied);
    grid.set({i, g.height - 1}, Occupancy::Occupied);
  }
  for (int i = 0; i < g.height; ++i) {
    grid.set({0, i}, Occupancy::Occupied);
    grid.set({g.width - 1, i}, Occupancy::Occupied);
  }
  auto pillar = [&](int c0, int r0, int size) {
    for (int r = r0; r < r0 + size; ++r)
      for (int c = c0; c < c0 + size; ++c) grid.set({c, r}, Occupancy::Occupied);
  };
  pillar(40, 40, 6);
  pillar(114, 110, 6);
  return grid;
}

}  // namespace stam
