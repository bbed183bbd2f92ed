#pragma once

#include <vector>

#include "stam/grid.hpp"

namespace stam::planner {

/// m = lambda (1 - cost) + (1 - lambda) likelihood, cellwise.
/// Throws GeometryMismatch, or RangeViolation for inputs outside [0, 1].
ScalarField gainmap(const ScalarField& cost, const ScalarField& likelihood, double lambda);

enum class GoalVariant { TopScore, NearestRegion, LargestRegion };

struct GoalStrategy {
  GoalVariant variant = GoalVariant::TopScore;
  double region_threshold = 0.5;  // fraction of the map maximum, in (0, 1]
};

struct Region {
  std::vector<Cell> cells;
  Point2 centroid;
  double mean_value = 0.0;
};

/// 8-connected components of cells with value >= threshold * max, in
/// row-major order of their first cell.
std::vector<Region> extract_regions(const ScalarField& map, double threshold);

/// Throws NoAffordantRegion when the whole map is below 1e-6.
Point2 select_goal(const ScalarField& map, const Pose& robot, const GoalStrategy& strategy);

inline constexpr double kStepEpsilon = 1e-3;

struct Path {
  std::vector<Cell> cells;  // start first, goal last
  double total_cost = 0.0;  // sum over visited cells of (1 - m + epsilon)
  double total_gain = 0.0;  // sum over visited cells of m
};

/// Gain-maximizing 8-connected path: minimizes the sum of (1 - m + epsilon)
/// over visited cells; zero-gain cells are impassable. Throws OutOfBounds,
/// InvalidArgument (zero-gain endpoint) or Unreachable.
Path plan_path(const ScalarField& gain, Cell start, Cell goal);

}  // namespace stam::planner
