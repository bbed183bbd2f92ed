#include "stam/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stam/error.hpp"
#include "stam/gmm.hpp"
#include "stam/gmr.hpp"
#include "stam/random.hpp"

namespace stam::sim {

namespace {

constexpr double kPi = std::numbers::pi;

double bearing(const Pose& from, Point2 to) { return std::atan2(to.y - from.y, to.x - from.x); }

Velocity clamp(Velocity c, const RobotState& r) {
  return {std::clamp(c.v, -r.v_max, r.v_max), std::clamp(c.omega, -r.omega_max, r.omega_max)};
}

// Advances one robot; returns true on a rejected (colliding) move.
bool advance(RobotState& robot, Velocity cmd, const OccupancyGrid& grid, double dt) {
  robot.commanded = clamp(cmd, robot);
  const Pose& p = robot.pose;
  const double nx = p.x + robot.commanded.v * std::cos(p.alpha) * dt;
  const double ny = p.y + robot.commanded.v * std::sin(p.alpha) * dt;
  const double na = p.alpha + robot.commanded.omega * dt;
  const bool moved = nx != p.x || ny != p.y;
  if (moved && !pose_free(grid, {nx, ny}, robot.radius)) {
    robot.pose = Pose(p.x, p.y, na);
    return true;
  }
  robot.pose = Pose(nx, ny, na);
  return false;
}

double segment_distance(Point2 a, Point2 b, Point2 q) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double s = len2 > 0.0 ? std::clamp(((q.x - a.x) * vx + (q.y - a.y) * vy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(a.x + s * vx - q.x, a.y + s * vy - q.y);
}

std::vector<Point2> clear_cells(const OccupancyGrid& grid, double clearance) {
  std::vector<Point2> out;
  const auto& g = grid.geometry();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Cell c = g.cell_at(i);
    if (grid.occupied(c)) continue;
    const Point2 p = cell_to_world(c, g);
    if (grid.clearance(p, clearance) >= clearance) out.push_back(p);
  }
  return out;
}

}  // namespace

bool segment_free(const OccupancyGrid& grid, Point2 a, Point2 b, double radius) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(len / (0.5 * grid.geometry().resolution))));
  for (int i = 0; i <= steps; ++i) {
    const double s = static_cast<double>(i) / steps;
    if (!pose_free(grid, {a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)}, radius)) return false;
  }
  return true;
}

bool pose_free(const OccupancyGrid& grid, Point2 p, double radius) {
  const auto& g = grid.geometry();
  if (!g.contains(p)) return false;
  if (grid.occupied(world_to_cell(p, g))) return false;
  return grid.clearance(p, radius + g.resolution) > radius;
}

SimWorld step(const SimWorld& world, Velocity target_cmd, Velocity follower_cmd) {
  if (!(world.dt > 0.0)) throw Error(Errc::InvalidArgument, "dt must be positive");
  if (!world.grid) throw Error(Errc::InvalidArgument, "world has no grid");
  SimWorld next = world;
  next.target_collision = advance(next.target, target_cmd, *world.grid, world.dt);
  next.follower_collision = advance(next.follower, follower_cmd, *world.grid, world.dt);
  next.t = world.t + world.dt;
  return next;
}

TargetWanderer::TargetWanderer(const OccupancyGrid& grid, std::uint64_t seed, const SimConfig& config)
    : candidates_(clear_cells(grid, config.robot_radius + 0.3)), rng_(seed), config_(config) {
  if (candidates_.empty()) throw Error(Errc::InvalidArgument, "map has no free space for waypoints");
}

void TargetWanderer::resample(const SimWorld& world) {
  std::uniform_int_distribution<std::size_t> pick(0, candidates_.size() - 1);
  const Pose& p = world.target.pose;
  const Point2 other{world.follower.pose.x, world.follower.pose.y};
  // Prefer waypoints reachable in a straight line that keeps clear of the
  // other robot, so the target neither parks against a wall nor drives through it.
  for (int attempt = 0; attempt < 64; ++attempt) {
    waypoint_ = candidates_[pick(rng_)];
    if (segment_distance({p.x, p.y}, *waypoint_, other) >= config_.wander_clearance &&
        segment_free(*world.grid, {p.x, p.y}, *waypoint_, world.target.radius))
      break;
  }
  waypoint_since_ = world.t;
}

Velocity TargetWanderer::command(const SimWorld& world) {
  const Pose& p = world.target.pose;
  if (!waypoint_) resample(world);
  const bool arrived = std::hypot(waypoint_->x - p.x, waypoint_->y - p.y) < config_.waypoint_tolerance;
  if (arrived || world.t - waypoint_since_ > config_.waypoint_timeout) resample(world);

  const double err = wrap_angle(bearing(p, *waypoint_) - p.alpha);
  Velocity cmd;
  cmd.omega = std::clamp(config_.heading_gain * err, -world.target.omega_max, world.target.omega_max);
  cmd.v = std::abs(err) < kPi / 4 ? world.target.v_max : 0.0;
  return cmd;
}

ScriptedExpert::ScriptedExpert(double d_min, double d_max, std::uint64_t seed, const SimConfig& config)
    : d_min_(d_min), d_max_(d_max), rng_(seed), jitter_(0.0, config.jitter_sigma), config_(config) {
  if (!(d_min > 0.0 && d_min < d_max)) throw Error(Errc::BadBand, "expert band needs 0 < d_min < d_max");
}

Point2 ScriptedExpert::detour_point(const SimWorld& world) {
  const OccupancyGrid& grid = *world.grid;
  const Pose& f = world.follower.pose;
  if (detour_grid_ != &grid) {
    detour_grid_ = &grid;
    const double radius = 1.0;
    detour_gain_ = normalize_costmap(grid, radius);
    const double veto = 1.0 - (world.follower.radius + 1.5 * grid.geometry().resolution) / radius;
    for (double& v : detour_gain_.values()) v = v >= veto ? 0.0 : 1.0 - v;
    detour_.clear();
  }
  if (detour_.empty() || world.t - detour_planned_at_ >= 0.5) {
    detour_.clear();
    detour_planned_at_ = world.t;
    const auto& g = grid.geometry();
    ScalarField gain = detour_gain_;
    const Cell start = world_to_cell({f.x, f.y}, g);
    const Cell goal = world_to_cell({world.target.pose.x, world.target.pose.y}, g);
    gain.at(start) = std::max(gain.at(start), planner::kStepEpsilon);
    gain.at(goal) = std::max(gain.at(goal), planner::kStepEpsilon);
    try {
      for (const Cell c : planner::plan_path(gain, start, goal).cells) detour_.push_back(cell_to_world(c, g));
    } catch (const Error&) {
      return {world.target.pose.x, world.target.pose.y};
    }
  }
  // Farthest path point within a metre that is in plain view.
  Point2 aim = detour_.back();
  for (const Point2 q : detour_) {
    if (std::hypot(q.x - f.x, q.y - f.y) > 1.0) break;
    if (segment_free(grid, {f.x, f.y}, q, world.follower.radius)) aim = q;
  }
  return aim;
}

Velocity ScriptedExpert::command(const SimWorld& world) {
  const Pose& f = world.follower.pose;
  const Pose& t = world.target.pose;
  const double d = std::hypot(t.x - f.x, t.y - f.y);
  const double err = wrap_angle(bearing(f, {t.x, t.y}) - f.alpha);
  const double bound = jitter_bound();
  const double jitter = config_.jitter_sigma > 0.0 ? std::clamp(jitter_(rng_), -bound, bound) : 0.0;

  Velocity cmd;
  if (d > d_max_) {
    if (segment_free(*world.grid, {f.x, f.y}, {t.x, t.y}, world.follower.radius)) {
      detour_.clear();
      cmd.v = world.follower.v_max;
      cmd.omega = config_.heading_gain * err + jitter;
    } else {
      const double detour_err = wrap_angle(bearing(f, detour_point(world)) - f.alpha);
      cmd.v = std::abs(detour_err) < kPi / 4 ? world.follower.v_max : 0.0;
      cmd.omega = config_.heading_gain * detour_err + jitter;
    }
  } else if (d < d_min_) {
    cmd.v = -world.follower.v_max / 2.0;
    cmd.omega = jitter;
  } else {
    cmd.v = 0.0;
    cmd.omega = config_.heading_gain * err + jitter;
  }
  return clamp(cmd, world.follower);
}

void Recorder::start(int demo_id, DemoSource source) {
  active_ = true;
  demo_id_ = demo_id;
  source_ = source;
}

void Recorder::record_tick(const SimWorld& world) {
  if (!active_) return;
  records_.push_back({world.t, world.target.pose, world.follower.pose, demo_id_, source_});
}

std::vector<DemonstrationRecord> Recorder::take() {
  std::vector<DemonstrationRecord> out;
  out.swap(records_);
  return out;
}

namespace {

Pose predicted_target(const SimWorld& world, double horizon) {
  const Pose& p = world.target.pose;
  const Velocity& u = world.target.commanded;
  if (horizon <= 0.0 || world.target_collision) return p;
  return {p.x + u.v * horizon * std::cos(p.alpha), p.y + u.v * horizon * std::sin(p.alpha), p.alpha + u.omega * horizon};
}

}  // namespace

FollowController::FollowController(std::shared_ptr<const Registry> registry, std::shared_ptr<const OccupancyGrid> grid,
                                   FollowParams params, SimConfig config)
    : registry_(std::move(registry)),
      grid_(std::move(grid)),
      params_(params),
      config_(config),
      cost_(normalize_costmap(*grid_, params.inflation_radius)),
      epoch_ticks_(std::max<long>(1, std::lround(params.control_period / config.dt))) {
  if (!registry_) throw Error(Errc::InvalidArgument, "follow controller needs a registry");
  // Cells closer than this to an obstacle cannot hold the robot disc.
  const double veto_distance = config_.robot_radius + 1.5 * grid_->geometry().resolution;
  veto_cost_ = params_.inflation_radius > 0.0 ? 1.0 - veto_distance / params_.inflation_radius : 1.0;
}

// Static costmap plus the target robot, inflated along the stretch it is
// expected to cover before the next epoch.
ScalarField FollowController::with_target(const SimWorld& world, const Pose& predicted) const {
  ScalarField cost = cost_;
  const auto& g = cost.geometry();
  const Point2 a{world.target.pose.x, world.target.pose.y};
  const Point2 b{predicted.x, predicted.y};
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Point2 c = cell_to_world(g.cell_at(i), g);
    const double gap = segment_distance(a, b, c) - world.target.radius;
    if (gap > params_.inflation_radius) continue;
    const double v = gap <= 0.0 || params_.inflation_radius <= 0.0 ? 1.0 : 1.0 - gap / params_.inflation_radius;
    cost.values()[i] = std::max(cost.values()[i], v);
  }
  return cost;
}

void FollowController::replan(const SimWorld& world) {
  path_.clear();
  progress_ = 0;
  goal_.reset();
  failure_.reset();
  try {
    const Pose target = predicted_target(world, params_.prediction_horizon);
    EnvState state{world.t + params_.prediction_horizon, {{"target", target}, {"follower", world.follower.pose}}, grid_};
    const AffordanceMap affordance = evaluate_sta(*registry_, state, {follow::task()});
    ScalarField gain = planner::gainmap(with_target(world, target), affordance.field, params_.lambda);
    for (std::size_t i = 0; i < gain.values().size(); ++i)
      if (cost_.values()[i] >= veto_cost_) gain.values()[i] = 0.0;

    const auto& g = gain.geometry();
    const Cell start = world_to_cell({world.follower.pose.x, world.follower.pose.y}, g);
    const Point2 goal = planner::select_goal(gain, world.follower.pose, params_.strategy);
    gain.at(start) = std::max(gain.at(start), planner::kStepEpsilon);
    const planner::Path path = planner::plan_path(gain, start, world_to_cell(goal, g));

    for (const Cell c : path.cells) path_.push_back(cell_to_world(c, g));
    goal_ = goal;
    const auto model = gmm::model_from_json(registry_->signature(follow::kTaskId)->params);
    goal_heading_ = gmr::best_relative_pose(model, target, goal).alpha;
  } catch (const Error& e) {
    path_.clear();
    goal_.reset();
    failure_ = e.what();
  }
}

Velocity FollowController::track(const SimWorld& world) {
  if (!goal_ || path_.empty()) return {};
  const Pose& p = world.follower.pose;
  const double k = config_.heading_gain;
  if (std::hypot(goal_->x - p.x, goal_->y - p.y) < params_.goal_tolerance)
    return clamp({0.0, k * wrap_angle(goal_heading_ - p.alpha)}, world.follower);

  // Progress never moves backwards along the path.
  double nearest = std::hypot(path_[progress_].x - p.x, path_[progress_].y - p.y);
  for (std::size_t i = progress_ + 1; i < path_.size(); ++i) {
    const double d = std::hypot(path_[i].x - p.x, path_[i].y - p.y);
    if (d <= nearest) {
      nearest = d;
      progress_ = i;
    }
  }
  Point2 look = path_.back();
  for (std::size_t i = progress_; i < path_.size(); ++i) {
    if (std::hypot(path_[i].x - p.x, path_[i].y - p.y) >= params_.lookahead) {
      look = path_[i];
      break;
    }
  }
  const double err = wrap_angle(bearing(p, look) - p.alpha);
  if (std::abs(err) > kPi / 2) return clamp({0.0, k * err}, world.follower);
  const double dist = std::max(std::hypot(look.x - p.x, look.y - p.y), 1e-6);
  // Curvature of the arc through the lookahead point at full speed; the
  // forward speed drops with heading error but the turn rate does not.
  const double omega = world.follower.v_max * 2.0 * std::sin(err) / dist;
  const Velocity cmd = clamp({world.follower.v_max * std::cos(err), omega}, world.follower);
  if (pose_free(*grid_, {p.x + cmd.v * std::cos(p.alpha) * world.dt, p.y + cmd.v * std::sin(p.alpha) * world.dt},
                world.follower.radius))
    return cmd;
  // Cutting a corner would hit an obstacle: turn onto the next path cell first.
  const Point2 next = path_[std::min(progress_ + 1, path_.size() - 1)];
  const double near_err = wrap_angle(bearing(p, next) - p.alpha);
  return clamp({0.0, k * near_err}, world.follower);
}

FollowOutput FollowController::command(const SimWorld& world) {
  FollowOutput out;
  if (ticks_++ % epoch_ticks_ == 0) {
    replan(world);
    if (failure_) out.diagnostic = *failure_;
  }
  if (failure_) return out;
  out.cmd = track(world);
  return out;
}

std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Expert: return "expert";
    case PolicyKind::Teleop: return "teleop";
    case PolicyKind::Follow: return "follow";
  }
  return "expert";
}

PolicyKind policy_from_string(std::string_view s) {
  if (s == "expert") return PolicyKind::Expert;
  if (s == "teleop") return PolicyKind::Teleop;
  if (s == "follow") return PolicyKind::Follow;
  throw Error(Errc::InvalidArgument, "unknown policy '" + std::string(s) + "'");
}

SimWorld initial_world(std::shared_ptr<const OccupancyGrid> grid, const SimConfig& config, std::uint64_t seed,
                       double separation) {
  if (!grid) throw Error(Errc::InvalidArgument, "no grid");
  const std::vector<Point2> spots = clear_cells(*grid, config.robot_radius + 0.5);
  if (spots.empty()) throw Error(Errc::InvalidArgument, "map has no free space");
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::uniform_int_distribution<std::size_t> pick(0, spots.size() - 1);
  std::uniform_real_distribution<double> angle(-kPi, kPi);

  SimWorld w;
  w.grid = grid;
  w.dt = config.dt;
  w.rng_seed = seed;
  w.target.radius = w.follower.radius = config.robot_radius;
  w.target.v_max = config.target_speed;
  w.follower.v_max = config.v_max;
  w.target.omega_max = w.follower.omega_max = config.omega_max;

  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Point2 t = spots[pick(rng)];
    const double theta = angle(rng);
    const Point2 f{t.x + separation * std::cos(theta), t.y + separation * std::sin(theta)};
    if (!grid->geometry().contains(f) || grid->clearance(f, config.robot_radius + 0.5) < config.robot_radius + 0.5)
      continue;
    w.target.pose = Pose(t.x, t.y, angle(rng));
    w.follower.pose = Pose(f.x, f.y, theta + kPi);
    return w;
  }
  throw Error(Errc::InvalidArgument, "could not place robots with the requested separation");
}

RunResult run(const RunConfig& config) {
  if (!(config.duration >= 0.0)) throw Error(Errc::InvalidArgument, "duration must be >= 0");
  RunResult result;
  SimWorld world = initial_world(config.grid, config.sim, config.seed, config.separation);
  TargetWanderer wanderer(*config.grid, derive_seed(config.seed, 1), config.sim);

  std::optional<ScriptedExpert> expert;
  std::optional<FollowController> follower;
  switch (config.policy) {
    case PolicyKind::Expert:
      expert.emplace(config.sim.d_min, config.sim.d_max, derive_seed(config.seed, 2), config.sim);
      break;
    case PolicyKind::Follow:
      if (!config.registry || !config.registry->contains(follow::kTaskId))
        throw Error(Errc::UnknownTask, "follow policy needs a registered follow signature");
      follower.emplace(config.registry, config.grid, config.follow, config.sim);
      break;
    case PolicyKind::Teleop: break;
  }

  Recorder recorder;
  if (config.record)
    recorder.start(config.demo_id, config.policy == PolicyKind::Teleop ? DemoSource::Teleop : DemoSource::Scripted);

  const long steps = std::lround(config.duration / config.sim.dt);
  std::size_t teleop_index = 0;
  for (long i = 0; i < steps; ++i) {
    const Velocity target_cmd = wanderer.command(world);
    Velocity follower_cmd;
    switch (config.policy) {
      case PolicyKind::Expert: follower_cmd = expert->command(world); break;
      case PolicyKind::Follow: {
        FollowOutput out = follower->command(world);
        if (out.diagnostic) result.diagnostics.push_back(format_double(world.t) + " " + *out.diagnostic);
        follower_cmd = out.cmd;
        break;
      }
      case PolicyKind::Teleop:
        while (teleop_index < config.teleop.size() && config.teleop[teleop_index].t <= world.t + 1e-9) ++teleop_index;
        if (teleop_index > 0) follower_cmd = config.teleop[teleop_index - 1].cmd;
        break;
    }
    world = step(world, target_cmd, follower_cmd);
    if (world.follower_collision) ++result.follower_collisions;
    recorder.record_tick(world);
  }
  result.records = recorder.take();
  result.final_world = std::move(world);
  return result;
}

}  // namespace stam::sim
