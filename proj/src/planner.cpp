#include "stam/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

#include "stam/error.hpp"

namespace stam::planner {

namespace {

constexpr int kNeighbors[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1}};

void check_unit_range(const ScalarField& f, const char* name) {
  for (double v : f.values())
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::RangeViolation, std::string(name) + " value outside [0, 1]");
}

}  // namespace

ScalarField gainmap(const ScalarField& cost, const ScalarField& likelihood, double lambda) {
  if (!(cost.geometry() == likelihood.geometry())) throw Error(Errc::GeometryMismatch, "cost and likelihood differ in geometry");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(Errc::RangeViolation, "lambda outside [0, 1]");
  check_unit_range(cost, "cost");
  check_unit_range(likelihood, "likelihood");
  ScalarField out(cost.geometry(), 0.0);
  for (std::size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = lambda * (1.0 - cost.values()[i]) + (1.0 - lambda) * likelihood.values()[i];
  return out;
}

std::vector<Region> extract_regions(const ScalarField& map, double threshold) {
  const auto& g = map.geometry();
  const double cut = threshold * map.max();
  std::vector<int> label(g.size(), -1);
  std::vector<Region> regions;
  std::vector<Cell> stack;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (label[i] >= 0 || !(map.values()[i] >= cut)) continue;
    const int id = static_cast<int>(regions.size());
    Region region;
    stack.push_back(g.cell_at(i));
    label[i] = id;
    while (!stack.empty()) {
      const Cell c = stack.back();
      stack.pop_back();
      region.cells.push_back(c);
      for (const auto& n : kNeighbors) {
        const Cell nb{c.col + n[0], c.row + n[1]};
        if (!g.contains(nb)) continue;
        const std::size_t j = g.index(nb);
        if (label[j] >= 0 || !(map.values()[j] >= cut)) continue;
        label[j] = id;
        stack.push_back(nb);
      }
    }
    std::sort(region.cells.begin(), region.cells.end(),
              [](Cell a, Cell b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    double sx = 0, sy = 0, sv = 0;
    for (const Cell c : region.cells) {
      const Point2 p = cell_to_world(c, g);
      sx += p.x;
      sy += p.y;
      sv += map.at(c);
    }
    const double n = static_cast<double>(region.cells.size());
    region.centroid = {sx / n, sy / n};
    region.mean_value = sv / n;
    regions.push_back(std::move(region));
  }
  return regions;
}

Point2 select_goal(const ScalarField& map, const Pose& robot, const GoalStrategy& strategy) {
  if (!(strategy.region_threshold > 0.0 && strategy.region_threshold <= 1.0))
    throw Error(Errc::InvalidArgument, "region threshold must be in (0, 1]");
  const auto& g = map.geometry();
  const auto& values = map.values();
  // First maximum in row-major order is the smallest (row, col).
  const std::size_t top = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  if (!(values[top] >= 1e-6)) throw Error(Errc::NoAffordantRegion, "no cell reaches the affordance floor");
  if (strategy.variant == GoalVariant::TopScore) return cell_to_world(g.cell_at(top), g);

  const std::vector<Region> regions = extract_regions(map, strategy.region_threshold);
  const Region* chosen = &regions.front();
  for (const Region& r : regions) {
    if (strategy.variant == GoalVariant::NearestRegion) {
      const double dr = std::hypot(r.centroid.x - robot.x, r.centroid.y - robot.y);
      const double dc = std::hypot(chosen->centroid.x - robot.x, chosen->centroid.y - robot.y);
      if (dr < dc) chosen = &r;
    } else if (r.cells.size() > chosen->cells.size() ||
               (r.cells.size() == chosen->cells.size() && r.mean_value > chosen->mean_value)) {
      chosen = &r;
    }
  }
  // Snap the centroid onto the region (centroids of non-convex regions may fall outside).
  Cell best = chosen->cells.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (const Cell c : chosen->cells) {
    const Point2 p = cell_to_world(c, g);
    const double d = std::hypot(p.x - chosen->centroid.x, p.y - chosen->centroid.y);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return cell_to_world(best, g);
}

Path plan_path(const ScalarField& gain, Cell start, Cell goal) {
  const auto& g = gain.geometry();
  if (!g.contains(start) || !g.contains(goal)) throw Error(Errc::OutOfBounds, "start or goal outside the grid");
  if (!(gain.at(start) > 0.0) || !(gain.at(goal) > 0.0))
    throw Error(Errc::InvalidArgument, "start and goal must have positive gain");

  auto step_cost = [&](std::size_t i) { return 1.0 - gain.values()[i] + kStepEpsilon; };
  auto heuristic = [&](Cell c) {
    return kStepEpsilon * std::max(std::abs(c.col - goal.col), std::abs(c.row - goal.row));
  };

  // (f, h, row, col) ordering gives a deterministic expansion order.
  using Key = std::tuple<double, double, int, int>;
  std::priority_queue<Key, std::vector<Key>, std::greater<>> open;
  std::vector<double> best(g.size(), std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> parent(g.size(), -1);
  std::vector<char> closed(g.size(), 0);

  const std::size_t s = g.index(start);
  best[s] = step_cost(s);
  open.emplace(best[s] + heuristic(start), heuristic(start), start.row, start.col);
  const std::size_t goal_index = g.index(goal);

  while (!open.empty()) {
    const auto [f, h, row, col] = open.top();
    open.pop();
    const Cell c{col, row};
    const std::size_t ci = g.index(c);
    if (closed[ci]) continue;
    closed[ci] = 1;
    if (ci == goal_index) break;
    for (const auto& n : kNeighbors) {
      const Cell nb{c.col + n[0], c.row + n[1]};
      if (!g.contains(nb)) continue;
      const std::size_t ni = g.index(nb);
      if (closed[ni] || !(gain.values()[ni] > 0.0)) continue;
      const double candidate = best[ci] + step_cost(ni);
      if (candidate < best[ni]) {
        best[ni] = candidate;
        parent[ni] = static_cast<std::int64_t>(ci);
        const double hn = heuristic(nb);
        open.emplace(candidate + hn, hn, nb.row, nb.col);
      }
    }
  }
  if (!closed[goal_index]) throw Error(Errc::Unreachable, "goal is not connected to start through positive-gain cells");

  Path path;
  for (std::int64_t i = static_cast<std::int64_t>(goal_index); i >= 0; i = parent[static_cast<std::size_t>(i)])
    path.cells.push_back(g.cell_at(static_cast<std::size_t>(i)));
  std::reverse(path.cells.begin(), path.cells.end());
  path.total_cost = best[goal_index];
  for (const Cell c : path.cells) path.total_gain += gain.at(c);
  return path;
}

}  // namespace stam::planner
