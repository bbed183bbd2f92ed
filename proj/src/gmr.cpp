#include "stam/gmr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "stam/error.hpp"

namespace stam::gmr {

namespace {

void check_dims(std::span<const int> dims, int d, const char* what) {
  if (dims.empty()) throw Error(Errc::BadIndex, std::string(what) + " dims are empty");
  std::set<int> seen;
  for (int i : dims) {
    if (i < 0 || i >= d) throw Error(Errc::BadIndex, std::string(what) + " dim " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw Error(Errc::BadIndex, std::string(what) + " dim repeated");
  }
}

Eigen::VectorXd select(const Eigen::VectorXd& v, std::span<const int> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, std::span<const int> rows, std::span<const int> cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(rows[r], cols[c]);
  return out;
}

constexpr int kPositionDims[] = {0, 1};
constexpr int kHeadingDim[] = {2};

}  // namespace

RelativeSample to_relative(const Pose& target, const Pose& follower) {
  const double ex = follower.x - target.x;
  const double ey = follower.y - target.y;
  const double c = std::cos(target.alpha), s = std::sin(target.alpha);
  return {c * ex + s * ey, -s * ex + c * ey, wrap_angle(follower.alpha - target.alpha)};
}

Pose from_relative(const Pose& target, const RelativeSample& rel) {
  const double c = std::cos(target.alpha), s = std::sin(target.alpha);
  return Pose(target.x + c * rel.dx - s * rel.dy, target.y + s * rel.dx + c * rel.dy, target.alpha + rel.dalpha);
}

gmm::MixtureModel marginal(const gmm::MixtureModel& model, std::span<const int> dims) {
  check_dims(dims, model.dim(), "marginal");
  std::vector<gmm::Component> comps;
  comps.reserve(model.size());
  for (const auto& c : model.components())
    comps.push_back({c.weight, gmm::Gaussian(select(c.gaussian.mean(), dims), select(c.gaussian.cov(), dims, dims))});
  return gmm::MixtureModel(std::move(comps));
}

Conditional condition(const gmm::MixtureModel& model, std::span<const int> in_dims, std::span<const int> out_dims,
                      const Eigen::Ref<const Eigen::VectorXd>& x_in) {
  check_dims(in_dims, model.dim(), "input");
  check_dims(out_dims, model.dim(), "output");
  for (int i : in_dims)
    if (std::find(out_dims.begin(), out_dims.end(), i) != out_dims.end())
      throw Error(Errc::BadIndex, "input and output dims overlap");
  if (x_in.size() != static_cast<Eigen::Index>(in_dims.size()))
    throw Error(Errc::DimensionMismatch, "conditioning value has wrong dimension");

  const auto k = static_cast<Eigen::Index>(model.size());
  const auto d_out = static_cast<Eigen::Index>(out_dims.size());
  Eigen::VectorXd log_h(k);
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& comp = model.components()[static_cast<std::size_t>(i)];
    const auto& g = comp.gaussian;
    const Eigen::VectorXd mu_i = select(g.mean(), in_dims);
    const Eigen::VectorXd mu_o = select(g.mean(), out_dims);
    const Eigen::MatrixXd s_ii = select(g.cov(), in_dims, in_dims);
    const Eigen::MatrixXd s_oi = select(g.cov(), out_dims, in_dims);
    const Eigen::MatrixXd s_oo = select(g.cov(), out_dims, out_dims);

    Eigen::LLT<Eigen::MatrixXd> llt(s_ii);
    if (llt.info() != Eigen::Success)
      throw Error(Errc::SingularInputBlock, "input covariance block of component " + std::to_string(i) + " is singular");
    const Eigen::VectorXd diff = x_in - mu_i;
    means.push_back(mu_o + s_oi * llt.solve(diff));
    Eigen::MatrixXd cov = s_oo - s_oi * llt.solve(s_oi.transpose());
    covs.push_back(0.5 * (cov + cov.transpose()));

    const Eigen::MatrixXd l = llt.matrixL();
    const Eigen::VectorXd z = l.triangularView<Eigen::Lower>().solve(diff);
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    log_h[i] = std::log(comp.weight) -
               0.5 * (static_cast<double>(diff.size()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
  }
  const double lse = gmm::log_sum_exp(log_h);
  if (!std::isfinite(lse)) throw Error(Errc::NumericalFailure, "conditioning weights are not finite");

  Conditional out;
  out.weights.resize(static_cast<std::size_t>(k));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d_out);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d_out, d_out);
  std::vector<gmm::Component> kept;
  double kept_sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double h = std::exp(log_h[i] - lse);
    out.weights[static_cast<std::size_t>(i)] = h;
    mean += h * means[static_cast<std::size_t>(i)];
    second += h * (covs[static_cast<std::size_t>(i)] + means[static_cast<std::size_t>(i)] * means[static_cast<std::size_t>(i)].transpose());
    if (h > 0.0) {
      kept.push_back({h, gmm::Gaussian(means[static_cast<std::size_t>(i)], covs[static_cast<std::size_t>(i)])});
      kept_sum += h;
    }
  }
  for (auto& c : kept) c.weight /= kept_sum;
  Eigen::MatrixXd cov = second - mean * mean.transpose();
  cov = 0.5 * (cov + cov.transpose());
  // Moment matching can lose definiteness to cancellation when one component dominates.
  if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) {
    std::size_t top = static_cast<std::size_t>(std::max_element(out.weights.begin(), out.weights.end()) - out.weights.begin());
    cov = covs[top];
  }
  out.conditional = gmm::MixtureModel(std::move(kept));
  out.moment_matched = gmm::Gaussian(std::move(mean), std::move(cov));
  return out;
}

ScalarField density_map(const gmm::MixtureModel& model, const Pose& target, const GridGeometry& geometry) {
  if (model.dim() != 3) throw Error(Errc::DimensionMismatch, "density_map expects a (dx, dy, dalpha) model");
  const gmm::MixtureModel planar = marginal(model, kPositionDims);
  gmm::Data rel(static_cast<Eigen::Index>(geometry.size()), 2);
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    const Point2 c = cell_to_world(geometry.cell_at(i), geometry);
    const RelativeSample r = to_relative(target, Pose(c.x, c.y, 0.0));
    rel(static_cast<Eigen::Index>(i), 0) = r.dx;
    rel(static_cast<Eigen::Index>(i), 1) = r.dy;
  }
  const Eigen::VectorXd logv = gmm::log_pdf_rows(planar, rel);
  ScalarField field(geometry, std::vector<double>(logv.data(), logv.data() + logv.size()));
  auto& values = field.values();
  const double top = logv.size() ? logv.maxCoeff() : -std::numeric_limits<double>::infinity();
  // Normalizing in log space keeps the peak at exactly 1 without underflow.
  for (double& v : values) v = std::isfinite(top) ? std::exp(v - top) : 0.0;
  return field;
}

Pose best_relative_pose(const gmm::MixtureModel& model, const Pose& target, Point2 position) {
  if (model.dim() != 3) throw Error(Errc::DimensionMismatch, "best_relative_pose expects a (dx, dy, dalpha) model");
  const RelativeSample rel = to_relative(target, Pose(position.x, position.y, 0.0));
  const Eigen::Vector2d x_in(rel.dx, rel.dy);
  const Conditional c = condition(model, kPositionDims, kHeadingDim, x_in);
  return from_relative(target, {rel.dx, rel.dy, wrap_angle(c.moment_matched.mean()[0])});
}

double circular_mean(std::span<const double> angles) {
  double s = 0.0, c = 0.0;
  for (double a : angles) {
    s += std::sin(a);
    c += std::cos(a);
  }
  if (s == 0.0 && c == 0.0) return 0.0;
  return std::atan2(s, c);
}

gmm::Data relative_design(std::span<const RelativeSample> samples, double center) {
  gmm::Data data(static_cast<Eigen::Index>(samples.size()), 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    data(row, 0) = samples[i].dx;
    data(row, 1) = samples[i].dy;
    data(row, 2) = wrap_angle(samples[i].dalpha - center) + center;
  }
  return data;
}

gmm::SelectionResult fit_relative_model(std::span<const RelativeSample> samples, const gmm::SelectOptions& options) {
  std::vector<double> headings;
  headings.reserve(samples.size());
  for (const auto& s : samples) headings.push_back(s.dalpha);
  return gmm::select_model(relative_design(samples, circular_mean(headings)), options);
}

}  // namespace stam::gmr
