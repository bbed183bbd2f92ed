#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace stam::gmm {

/// Samples are rows.
using Data = Eigen::MatrixXd;

inline constexpr double kDefaultCovFloor = 1e-6;

class Gaussian {
 public:
  Gaussian() = default;
  /// Throws Errc::InvalidModel unless `cov` is a symmetric positive definite
  /// matrix matching the mean's dimension.
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  /// Lower Cholesky factor of the covariance.
  const Eigen::MatrixXd& chol() const { return chol_; }

  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  double log_norm_ = 0.0;  // -0.5 * (d ln 2pi + ln|cov|)
};

struct Component {
  double weight = 0.0;
  Gaussian gaussian;
};

class MixtureModel {
 public:
  MixtureModel() = default;
  /// Validates: non-empty, weights > 0 summing to 1 within 1e-9, shared dimension.
  explicit MixtureModel(std::vector<Component> components);

  const std::vector<Component>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  int dim() const { return dim_; }

  /// log sum_i pi_i N(x; mu_i, Sigma_i) via log-sum-exp. Throws DimensionMismatch.
  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  std::vector<Component> components_;
  int dim_ = 0;
};

/// log_pdf for every row of `data`.
Eigen::VectorXd log_pdf_rows(const MixtureModel& model, const Data& data);

/// Numerically stable log(sum(exp(v))). Returns -inf for an all -inf input.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

struct KMeansResult {
  Eigen::MatrixXd centroids;  // k x d
  std::vector<int> assignments;
  int iterations = 0;
};

/// Lloyd's algorithm from seeded k-means++ centers, at most 100 iterations.
KMeansResult kmeans(const Data& data, int k, std::uint64_t seed);

struct EmOptions {
  std::uint64_t seed = 0;
  double tol = 1e-6;
  int max_iter = 200;
  double cov_floor = kDefaultCovFloor;
};

struct EmResult {
  MixtureModel model;
  /// Mean per-sample log-likelihood, one entry for the initial parameters and
  /// one after every M-step.
  std::vector<double> loglik_trace;
  bool converged = false;
};

EmResult em_fit(const Data& data, int k, const EmOptions& options = {});

/// Deterministic given the seed.
Data sample(const MixtureModel& model, int n, std::uint64_t seed);

/// (N-1) + N d + N d(d+1)/2 for full covariances.
int free_parameters(int components, int dim);

/// -2 sum_j log p(x_j) + p ln n.
double bic(const MixtureModel& model, const Data& data);

struct SelectOptions {
  int k_max = 8;
  std::uint64_t seed = 0;
  int restarts = 1;
  EmOptions em;  // seed field ignored; derived from `seed`
};

struct SelectionResult {
  MixtureModel model;
  std::vector<double> bic_scores;  // entry i is the score for i+1 components
  int selected_k = 0;
};

/// Fits 1..min(k_max, n) components and keeps the BIC minimizer (ties go to
/// the smaller model).
SelectionResult select_model(const Data& data, const SelectOptions& options = {});

nlohmann::json to_json(const MixtureModel& model);
/// Throws Errc::InvalidModel for anything that does not describe a valid mixture.
MixtureModel model_from_json(const nlohmann::json& j);

}  // namespace stam::gmm
