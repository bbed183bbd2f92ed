#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stam/gmm.hpp"
#include "stam/gmr.hpp"
#include "stam/records.hpp"
#include "stam/sim.hpp"

namespace stam::dataset {

struct Demo {
  int demo_id = 0;
  std::vector<DemonstrationRecord> records;
};

/// Demonstrations in the order they were appended.
class DemoStore {
 public:
  /// Throws Errc::DuplicateDemo. Records are relabelled with `demo_id`.
  void append_demo(std::vector<DemonstrationRecord> records, int demo_id);

  const std::vector<Demo>& demos() const { return demos_; }
  bool contains(int demo_id) const;
  /// Throws Errc::UnknownDemo.
  const Demo& demo(int demo_id) const;
  std::size_t size() const;  // total record count
  /// Records of every demo, in append order.
  std::vector<DemonstrationRecord> cumulative() const;

  void save(const std::string& path) const;
  static DemoStore load(const std::string& path);

 private:
  std::vector<Demo> demos_;
};

struct Split {
  std::vector<DemonstrationRecord> train;
  std::vector<DemonstrationRecord> eval;
};

/// Seeded shuffle, then the first round(train_fraction * n) records train.
Split split(const std::vector<DemonstrationRecord>& records, double train_fraction, std::uint64_t seed);
/// Per-demo split with a seed derived from (seed, demo_id).
Split split_by_demo(const DemoStore& store, double train_fraction, std::uint64_t seed);

std::vector<gmr::RelativeSample> relative_samples(const std::vector<DemonstrationRecord>& records);

/// Highest-density cell center of the model's (dx, dy) marginal over a square
/// window centred on the target, in the target frame.
Point2 positional_mode(const gmm::MixtureModel& model, double window = 8.0, double resolution = 0.05);

struct PoseError {
  double distance = 0.0;  // | |p_hat - p_T| - |p_F - p_T| |
  double angle = 0.0;     // |wrap(alpha_hat - alpha_F)|
};

PoseError pose_error(const Pose& predicted, const Pose& target, const Pose& follower);

struct ErrorSamples {
  std::vector<double> distance;
  std::vector<double> angle;
};

/// Errors of the model's best pose against every evaluation record.
ErrorSamples best_pose_error(const gmm::MixtureModel& model, const std::vector<DemonstrationRecord>& eval);

struct ReportRow {
  int demos = 0;
  double dist_mean = 0.0;
  double dist_std = 0.0;
  double ang_mean = 0.0;
  double ang_std = 0.0;
  int runs = 0;
  bool operator==(const ReportRow&) const = default;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  bool operator==(const ExperimentReport&) const = default;
};

struct ExperimentConfig {
  int runs = 20;
  int demos = 3;
  std::uint64_t seed = 1;
  double demo_duration = 30.0;
  double train_fraction = 0.7;
  int k_max = 8;
  sim::SimConfig sim;
  std::shared_ptr<const OccupancyGrid> grid;  // default room when null
  std::optional<std::string> records_dir;     // load demos from here if present, else write them here
  int threads = 1;
};

/// Per run: simulate `demos` scripted demonstrations, split each 70/30, and for
/// k = 1..demos fit on the training part of demos 1..k; every k is scored on
/// the same held-out records of all demos.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Columns: demos,dist_mean,dist_std,ang_mean,ang_std,runs
std::string to_csv(const ExperimentReport& report);
ExperimentReport report_from_csv(const std::string& text);

}  // namespace stam::dataset
