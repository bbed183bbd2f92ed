#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stam/angles.hpp"

namespace stam {

/// Planar pose. The heading is kept wrapped to (-pi, pi].
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double alpha = 0.0;

  Pose() = default;
  Pose(double x_, double y_, double alpha_) : x(x_), y(y_), alpha(wrap_angle(alpha_)) {}

  bool operator==(const Pose&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct Cell {
  int col = 0;
  int row = 0;
  bool operator==(const Cell&) const = default;
};

/// Geometry shared by occupancy grids and scalar fields. Cells are stored
/// row-major with col along the grid's +x axis; `origin` is the world pose of
/// the outer corner of cell (0,0).
struct GridGeometry {
  int width = 0;
  int height = 0;
  double resolution = 1.0;
  Pose origin;

  GridGeometry() = default;
  GridGeometry(int width_, int height_, double resolution_, Pose origin_ = {});

  std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool contains(Cell c) const { return c.col >= 0 && c.row >= 0 && c.col < width && c.row < height; }
  bool contains(Point2 p) const;
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row) * width + c.col; }
  Cell cell_at(std::size_t index) const {
    return {static_cast<int>(index % width), static_cast<int>(index / width)};
  }

  bool operator==(const GridGeometry&) const = default;
};

/// Throws Errc::OutOfBounds when the point is outside the grid.
Cell world_to_cell(Point2 p, const GridGeometry& g);
/// World coordinates of the cell center. Throws Errc::OutOfBounds.
Point2 cell_to_world(Cell c, const GridGeometry& g);

enum class Occupancy : std::uint8_t { Free, Occupied };

class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  explicit OccupancyGrid(GridGeometry geometry);
  OccupancyGrid(GridGeometry geometry, std::vector<Occupancy> cells);

  const GridGeometry& geometry() const { return geometry_; }
  Occupancy at(Cell c) const { return cells_[geometry_.index(c)]; }
  bool occupied(Cell c) const { return at(c) == Occupancy::Occupied; }
  void set(Cell c, Occupancy o) { cells_[geometry_.index(c)] = o; }
  const std::vector<Occupancy>& cells() const { return cells_; }

  /// Distance from `p` to the closest point of any occupied cell, searching no
  /// farther than `max_range`; returns max_range when nothing is closer.
  double clearance(Point2 p, double max_range) const;

  bool operator==(const OccupancyGrid&) const = default;

 private:
  GridGeometry geometry_;
  std::vector<Occupancy> cells_;
};

class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(GridGeometry geometry, double fill = 0.0);
  ScalarField(GridGeometry geometry, std::vector<double> values);

  const GridGeometry& geometry() const { return geometry_; }
  double at(Cell c) const { return values_[geometry_.index(c)]; }
  double& at(Cell c) { return values_[geometry_.index(c)]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  double max() const;

  bool operator==(const ScalarField&) const = default;

 private:
  GridGeometry geometry_;
  std::vector<double> values_;
};

/// Obstacles map to 1, free cells within `inflation_radius` of the nearest
/// obstacle (center to center) decay linearly to 0, everything else is 0.
ScalarField normalize_costmap(const OccupancyGrid& grid, double inflation_radius);

// Map text format: header `width height resolution origin_x origin_y origin_alpha`,
// then `height` rows of '.'/'#', top row first (row 0 printed last).
OccupancyGrid parse_map(std::istream& in);
OccupancyGrid load_map(const std::string& path);
std::string format_map(const OccupancyGrid& grid);
void save_map(const OccupancyGrid& grid, const std::string& path);

/// Walled 16 m x 16 m room at 0.1 m with two pillars; used when no map file is given.
OccupancyGrid default_room();

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace stam
