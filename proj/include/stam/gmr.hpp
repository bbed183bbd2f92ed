#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stam/gmm.hpp"
#include "stam/grid.hpp"

namespace stam::gmr {

/// Follower pose expressed in the target's frame.
struct RelativeSample {
  double dx = 0.0;
  double dy = 0.0;
  double dalpha = 0.0;  // wrapped to (-pi, pi]
};

RelativeSample to_relative(const Pose& target, const Pose& follower);
Pose from_relative(const Pose& target, const RelativeSample& rel);

/// Throws Errc::BadIndex for empty, duplicate, or out-of-range dims.
gmm::MixtureModel marginal(const gmm::MixtureModel& model, std::span<const int> dims);

struct Conditional {
  gmm::MixtureModel conditional;  // components whose weight underflowed to 0 are dropped
  gmm::Gaussian moment_matched;
  std::vector<double> weights;  // h_i for every input component, sums to 1
};

/// Gaussian mixture regression of `out_dims` given `x_in` on `in_dims`.
/// Throws BadIndex for overlapping/invalid dims, SingularInputBlock when an
/// input covariance block cannot be factored.
Conditional condition(const gmm::MixtureModel& model, std::span<const int> in_dims, std::span<const int> out_dims,
                      const Eigen::Ref<const Eigen::VectorXd>& x_in);

/// Max-normalized positional density of the follower around `target`,
/// evaluated at every cell center of `geometry`. `model` is over (dx, dy, dalpha).
ScalarField density_map(const gmm::MixtureModel& model, const Pose& target, const GridGeometry& geometry);

/// Pose at `position` whose heading is the GMR estimate of dalpha given the
/// position's (dx, dy) in the target frame.
Pose best_relative_pose(const gmm::MixtureModel& model, const Pose& target, Point2 position);

/// Circular mean of angles; 0 for an empty input.
double circular_mean(std::span<const double> angles);

/// Rows (dx, dy, dalpha) with dalpha re-expressed on the branch centred at
/// `center` (i.e. wrap(dalpha - center) + center).
gmm::Data relative_design(std::span<const RelativeSample> samples, double center);

/// BIC-selected mixture over relative samples. The heading is fitted on the
/// branch whose cut lies opposite the samples' circular mean, so component
/// means carry that branch back into the returned model.
gmm::SelectionResult fit_relative_model(std::span<const RelativeSample> samples, const gmm::SelectOptions& options);

}  // namespace stam::gmr
