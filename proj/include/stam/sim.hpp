#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stam/core.hpp"
#include "stam/grid.hpp"
#include "stam/planner.hpp"
#include "stam/records.hpp"

namespace stam::sim {

struct Velocity {
  double v = 0.0;
  double omega = 0.0;
  bool operator==(const Velocity&) const = default;
};

struct RobotState {
  Pose pose;
  Velocity commanded;
  double radius = 0.2;
  double v_max = 1.0;
  double omega_max = 2.0;
};

/// All simulator constants in one place.
struct SimConfig {
  double dt = 0.05;
  double v_max = 1.0;         // follower
  double omega_max = 2.0;
  double target_speed = 0.5;  // wandering target's linear speed limit
  double robot_radius = 0.2;
  double heading_gain = 2.0;
  double waypoint_tolerance = 0.2;
  double waypoint_timeout = 15.0;
  double wander_clearance = 1.5;  // target waypoint legs keep this far from the follower
  double d_min = 1.0;
  double d_max = 3.0;
  double jitter_sigma = 0.05;
};

struct SimWorld {
  std::shared_ptr<const OccupancyGrid> grid;
  RobotState target;
  RobotState follower;
  double t = 0.0;
  double dt = 0.05;
  std::uint64_t rng_seed = 0;
  bool target_collision = false;
  bool follower_collision = false;
};

/// True when the robot disc centred at `p` lies in free space.
bool pose_free(const OccupancyGrid& grid, Point2 p, double radius);

/// True when the disc can slide along the straight segment a -> b.
bool segment_free(const OccupancyGrid& grid, Point2 a, Point2 b, double radius);

/// Clamps commands to each robot's limits and integrates unicycle kinematics
/// with one explicit Euler step. A colliding position is rejected (heading
/// still integrates) and flagged.
SimWorld step(const SimWorld& world, Velocity target_cmd, Velocity follower_cmd);

/// Random waypoint wanderer driving the target robot.
class TargetWanderer {
 public:
  TargetWanderer(const OccupancyGrid& grid, std::uint64_t seed, const SimConfig& config = {});

  Velocity command(const SimWorld& world);
  std::optional<Point2> waypoint() const { return waypoint_; }

 private:
  void resample(const SimWorld& world);

  std::vector<Point2> candidates_;
  std::mt19937_64 rng_;
  SimConfig config_;
  std::optional<Point2> waypoint_;
  double waypoint_since_ = 0.0;
};

/// Scripted expert keeping the follower between d_min and d_max of the target.
class ScriptedExpert {
 public:
  /// Throws Errc::BadBand unless 0 < d_min < d_max.
  ScriptedExpert(double d_min, double d_max, std::uint64_t seed, const SimConfig& config = {});

  Velocity command(const SimWorld& world);
  double jitter_bound() const { return 3.0 * config_.jitter_sigma; }

 private:
  // Next point to steer at when an obstacle hides the target.
  Point2 detour_point(const SimWorld& world);

  double d_min_, d_max_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> jitter_;
  SimConfig config_;
  const OccupancyGrid* detour_grid_ = nullptr;
  ScalarField detour_gain_;
  std::vector<Point2> detour_;
  double detour_planned_at_ = -1e9;
};

/// Appends one record per tick while active.
class Recorder {
 public:
  void start(int demo_id, DemoSource source);
  void stop() { active_ = false; }
  bool active() const { return active_; }
  int demo_id() const { return demo_id_; }

  void record_tick(const SimWorld& world);
  const std::vector<DemonstrationRecord>& records() const { return records_; }
  std::vector<DemonstrationRecord> take();

 private:
  bool active_ = false;
  int demo_id_ = 0;
  DemoSource source_ = DemoSource::Scripted;
  std::vector<DemonstrationRecord> records_;
};

struct FollowParams {
  double lambda = 0.5;
  // Head for the closest stretch of the band, not the global peak.
  planner::GoalStrategy strategy{planner::GoalVariant::NearestRegion, 0.7};
  double control_period = 0.5;
  double inflation_radius = 1.0;
  double lookahead = 0.5;
  double goal_tolerance = 0.15;
  // The target is assumed to hold its commanded velocity for this long when
  // the affordance map is evaluated.
  double prediction_horizon = 1.0;
};

struct FollowOutput {
  Velocity cmd;
  std::optional<std::string> diagnostic;
};

/// Learned follow behaviour: every control epoch it evaluates the follow
/// affordance, fuses it with the costmap into a gainmap, picks a goal, and
/// plans a path; between epochs it tracks the cached path with pure pursuit.
class FollowController {
 public:
  FollowController(std::shared_ptr<const Registry> registry, std::shared_ptr<const OccupancyGrid> grid,
                   FollowParams params = {}, SimConfig config = {});

  FollowOutput command(const SimWorld& world);

  const std::vector<Point2>& path() const { return path_; }
  std::optional<Point2> goal() const { return goal_; }

 private:
  void replan(const SimWorld& world);
  ScalarField with_target(const SimWorld& world, const Pose& predicted) const;
  Velocity track(const SimWorld& world);

  std::shared_ptr<const Registry> registry_;
  std::shared_ptr<const OccupancyGrid> grid_;
  FollowParams params_;
  SimConfig config_;
  ScalarField cost_;
  double veto_cost_;
  long ticks_ = 0;
  long epoch_ticks_;
  std::vector<Point2> path_;
  std::size_t progress_ = 0;
  std::optional<Point2> goal_;
  double goal_heading_ = 0.0;
  std::optional<std::string> failure_;
};

enum class PolicyKind { Expert, Teleop, Follow };

std::string_view to_string(PolicyKind p);
PolicyKind policy_from_string(std::string_view s);

struct TimedCommand {
  double t = 0.0;
  Velocity cmd;
};

struct RunConfig {
  std::shared_ptr<const OccupancyGrid> grid;
  SimConfig sim;
  PolicyKind policy = PolicyKind::Expert;
  std::uint64_t seed = 0;
  double duration = 60.0;
  double separation = 2.0;  // initial target-follower distance
  int demo_id = 1;
  bool record = true;
  FollowParams follow;
  std::shared_ptr<const Registry> registry;  // required for Follow
  std::vector<TimedCommand> teleop;          // piecewise-constant commands for Teleop
};

struct RunResult {
  std::vector<DemonstrationRecord> records;
  std::vector<std::string> diagnostics;
  int follower_collisions = 0;
  SimWorld final_world;
};

/// Places both robots deterministically from the seed: the target on a random
/// clear cell, the follower `separation` away facing it.
SimWorld initial_world(std::shared_ptr<const OccupancyGrid> grid, const SimConfig& config, std::uint64_t seed,
                       double separation);

RunResult run(const RunConfig& config);

}  // namespace stam::sim
