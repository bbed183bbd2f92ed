#include "stam/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "stam/error.hpp"
#include "stam/random.hpp"

namespace stam::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kWeightTol = 1e-9;
// Weight given to a component that lost all responsibility.
constexpr double kDeadWeight = 1e-300;

void check_finite(const Data& data) {
  if (!data.allFinite()) throw Error(Errc::InvalidArgument, "data contains non-finite values");
}

// n x K matrix of log(pi_k) + log N(x_n; mu_k, Sigma_k).
Eigen::MatrixXd joint_log_density(const MixtureModel& model, const Data& data) {
  const auto n = data.rows();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(model.size()));
  for (std::size_t k = 0; k < model.size(); ++k) {
    const auto& comp = model.components()[k];
    const auto& g = comp.gaussian;
    Eigen::MatrixXd diff = (data.rowwise() - g.mean().transpose()).transpose();  // d x n
    g.chol().triangularView<Eigen::Lower>().solveInPlace(diff);
    const Eigen::ArrayXd maha = diff.colwise().squaredNorm().transpose().array();
    const double log_norm = g.log_pdf(g.mean());  // log density at the mode
    out.col(static_cast<Eigen::Index>(k)) = (std::log(comp.weight) + log_norm - 0.5 * maha).matrix();
  }
  return out;
}

struct EStep {
  Eigen::MatrixXd resp;  // n x K
  double mean_loglik = 0.0;
};

EStep expectation(const MixtureModel& model, const Data& data) {
  Eigen::MatrixXd logp = joint_log_density(model, data);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const double lse = log_sum_exp(logp.row(i).transpose());
    if (!std::isfinite(lse))
      throw Error(Errc::NumericalFailure, "responsibility normalizer is not finite for sample " + std::to_string(i));
    logp.row(i) = (logp.row(i).array() - lse).exp().matrix();
    total += lse;
  }
  return {std::move(logp), total / static_cast<double>(data.rows())};
}

Eigen::MatrixXd weighted_covariance(const Data& data, const Eigen::VectorXd& w, double wsum,
                                    const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * (centered.array().colwise() * w.array()).matrix() / wsum;
  return 0.5 * (cov + cov.transpose());
}

MixtureModel maximization(const Data& data, const Eigen::MatrixXd& resp, const MixtureModel& previous,
                          double cov_floor) {
  const auto n = static_cast<double>(data.rows());
  const auto d = data.cols();
  const Eigen::MatrixXd floor_eye = cov_floor * Eigen::MatrixXd::Identity(d, d);

  std::vector<Component> comps;
  comps.reserve(previous.size());
  double weight_sum = 0.0;
  for (Eigen::Index k = 0; k < resp.cols(); ++k) {
    const Eigen::VectorXd w = resp.col(k);
    const double nk = w.sum();
    if (!(nk > 0.0)) {
      comps.push_back({kDeadWeight, previous.components()[static_cast<std::size_t>(k)].gaussian});
      weight_sum += kDeadWeight;
      continue;
    }
    Eigen::VectorXd mean = data.transpose() * w / nk;
    Eigen::MatrixXd cov = weighted_covariance(data, w, nk, mean) + floor_eye;
    comps.push_back({nk / n, Gaussian(std::move(mean), std::move(cov))});
    weight_sum += nk / n;
  }
  for (auto& c : comps) c.weight /= weight_sum;
  return MixtureModel(std::move(comps));
}

MixtureModel initial_model(const Data& data, int k, std::uint64_t seed, double cov_floor) {
  const auto n = data.rows();
  const auto d = data.cols();
  const KMeansResult km = kmeans(data, k, seed);
  const Eigen::MatrixXd floor_eye = cov_floor * Eigen::MatrixXd::Identity(d, d);

  std::vector<Component> comps;
  double weight_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if (km.assignments[static_cast<std::size_t>(i)] == c) w[i] = 1.0;
    const double count = w.sum();
    Eigen::VectorXd mean = km.centroids.row(c).transpose();
    Eigen::MatrixXd cov;
    if (count > 0) {
      cov = weighted_covariance(data, w, count, mean) + floor_eye;
    } else {
      cov = weighted_covariance(data, Eigen::VectorXd::Ones(n), static_cast<double>(n), data.colwise().mean().transpose()) +
            floor_eye;
    }
    const double weight = count > 0 ? count / static_cast<double>(n) : kDeadWeight;
    comps.push_back({weight, Gaussian(std::move(mean), std::move(cov))});
    weight_sum += weight;
  }
  for (auto& c : comps) c.weight /= weight_sum;
  return MixtureModel(std::move(comps));
}

}  // namespace

Gaussian::Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  const auto d = mean_.size();
  if (d < 1 || cov_.rows() != d || cov_.cols() != d)
    throw Error(Errc::InvalidModel, "covariance shape does not match mean");
  if (!mean_.allFinite() || !cov_.allFinite()) throw Error(Errc::InvalidModel, "non-finite gaussian parameters");
  const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw Error(Errc::InvalidModel, "covariance is not symmetric");
  cov_ = 0.5 * (cov_ + cov_.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success) throw Error(Errc::InvalidModel, "covariance is not positive definite");
  chol_ = llt.matrixL();
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
}

double Gaussian::log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mean_.size()) throw Error(Errc::DimensionMismatch, "point dimension does not match gaussian");
  const Eigen::VectorXd z = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

MixtureModel::MixtureModel(std::vector<Component> components) : components_(std::move(components)) {
  if (components_.empty()) throw Error(Errc::InvalidModel, "mixture needs at least one component");
  dim_ = components_.front().gaussian.dim();
  double sum = 0.0;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw Error(Errc::InvalidModel, "mixture weights must be positive");
    if (c.gaussian.dim() != dim_ || dim_ < 1) throw Error(Errc::InvalidModel, "components differ in dimension");
    sum += c.weight;
  }
  if (std::abs(sum - 1.0) > kWeightTol) throw Error(Errc::InvalidModel, "mixture weights do not sum to 1");
}

double MixtureModel::log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim_) throw Error(Errc::DimensionMismatch, "point dimension does not match model");
  Eigen::VectorXd terms(static_cast<Eigen::Index>(components_.size()));
  for (std::size_t i = 0; i < components_.size(); ++i)
    terms[static_cast<Eigen::Index>(i)] = std::log(components_[i].weight) + components_[i].gaussian.log_pdf(x);
  return log_sum_exp(terms);
}

Eigen::VectorXd log_pdf_rows(const MixtureModel& model, const Data& data) {
  if (data.cols() != model.dim()) throw Error(Errc::DimensionMismatch, "data dimension does not match model");
  const Eigen::MatrixXd logp = joint_log_density(model, data);
  Eigen::VectorXd out(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) out[i] = log_sum_exp(logp.row(i).transpose());
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

KMeansResult kmeans(const Data& data, int k, std::uint64_t seed) {
  const auto n = data.rows();
  const auto d = data.cols();
  if (k < 1 || d < 1) throw Error(Errc::InvalidArgument, "kmeans needs k >= 1 and d >= 1");
  if (k > n) throw Error(Errc::TooFewSamples, "k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  check_finite(data);

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centroids(k, d);

  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = data.row(pick(rng));
  Eigen::VectorXd d2 = (data.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(c) = data.row(chosen);
    d2 = d2.cwiseMin((data.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  KMeansResult result;
  result.assignments.assign(static_cast<std::size_t>(n), -1);
  auto assign = [&]() {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centroids.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&best);
      auto& a = result.assignments[static_cast<std::size_t>(i)];
      if (a != static_cast<int>(best)) {
        a = static_cast<int>(best);
        changed = true;
      }
    }
    return changed;
  };

  assign();
  for (int iter = 0; iter < 100; ++iter) {
    result.iterations = iter + 1;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = result.assignments[static_cast<std::size_t>(i)];
      sums.row(a) += data.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Reseed to the point farthest from its own centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int a = result.assignments[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(a)] <= 1) continue;
        const double dist = (data.row(i) - centroids.row(a)).squaredNorm();
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      if (far_d < 0.0) continue;
      --counts[static_cast<std::size_t>(result.assignments[static_cast<std::size_t>(far)])];
      result.assignments[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      centroids.row(c) = data.row(far);
    }
    if (!assign()) break;
  }
  result.centroids = std::move(centroids);
  return result;
}

EmResult em_fit(const Data& data, int k, const EmOptions& options) {
  const auto n = data.rows();
  if (k < 1) throw Error(Errc::InvalidArgument, "em_fit needs k >= 1");
  if (k > n) throw Error(Errc::TooFewSamples, "k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  if (!(options.cov_floor > 0.0)) throw Error(Errc::InvalidArgument, "covariance floor must be positive");
  check_finite(data);

  EmResult result;
  MixtureModel model = initial_model(data, k, options.seed, options.cov_floor);
  EStep e = expectation(model, data);
  result.loglik_trace.push_back(e.mean_loglik);

  for (int iter = 0; iter < options.max_iter; ++iter) {
    MixtureModel next = maximization(data, e.resp, model, options.cov_floor);
    EStep next_e = expectation(next, data);
    const double prev = e.mean_loglik;
    model = std::move(next);
    e = std::move(next_e);
    result.loglik_trace.push_back(e.mean_loglik);
    if (std::abs(e.mean_loglik - prev) < options.tol * std::max(1.0, std::abs(prev))) {
      result.converged = true;
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

Data sample(const MixtureModel& model, int n, std::uint64_t seed) {
  if (n < 0) throw Error(Errc::InvalidArgument, "sample count must be >= 0");
  const int d = model.dim();
  Data out(n, d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(d);
  for (int i = 0; i < n; ++i) {
    double u = uniform(rng);
    std::size_t c = 0;
    for (; c + 1 < model.size(); ++c) {
      u -= model.components()[c].weight;
      if (u < 0.0) break;
    }
    const auto& g = model.components()[c].gaussian;
    for (int j = 0; j < d; ++j) z[j] = normal(rng);
    out.row(i) = (g.mean() + g.chol() * z).transpose();
  }
  return out;
}

int free_parameters(int components, int dim) {
  return (components - 1) + components * dim + components * dim * (dim + 1) / 2;
}

double bic(const MixtureModel& model, const Data& data) {
  const auto n = data.rows();
  if (n == 0) throw Error(Errc::EmptyData, "bic needs at least one sample");
  if (data.cols() != model.dim()) throw Error(Errc::DimensionMismatch, "data dimension does not match model");
  const double loglik = log_pdf_rows(model, data).sum();
  const int p = free_parameters(static_cast<int>(model.size()), model.dim());
  return -2.0 * loglik + p * std::log(static_cast<double>(n));
}

SelectionResult select_model(const Data& data, const SelectOptions& options) {
  const auto n = data.rows();
  if (n < 2) throw Error(Errc::TooFewSamples, "model selection needs at least two samples");
  if (options.k_max < 1 || options.restarts < 1) throw Error(Errc::InvalidArgument, "k_max and restarts must be >= 1");
  const int k_top = static_cast<int>(std::min<Eigen::Index>(options.k_max, n));

  SelectionResult result;
  double best_score = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_top; ++k) {
    EmResult best_fit;
    bool have_fit = false;
    for (int r = 0; r < options.restarts; ++r) {
      EmOptions em = options.em;
      em.seed = derive_seed(options.seed, static_cast<std::uint64_t>(k) * 1000u + static_cast<std::uint64_t>(r));
      EmResult fit = em_fit(data, k, em);
      if (!have_fit || fit.loglik_trace.back() > best_fit.loglik_trace.back()) {
        best_fit = std::move(fit);
        have_fit = true;
      }
    }
    const double score = bic(best_fit.model, data);
    result.bic_scores.push_back(score);
    if (score < best_score) {
      best_score = score;
      result.model = std::move(best_fit.model);
      result.selected_k = k;
    }
  }
  return result;
}

nlohmann::json to_json(const MixtureModel& model) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : model.components()) {
    const auto& g = c.gaussian;
    nlohmann::json mean = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.mean().size(); ++i) mean.push_back(g.mean()[i]);
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.cov().rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index col = 0; col < g.cov().cols(); ++col) row.push_back(g.cov()(r, col));
      cov.push_back(std::move(row));
    }
    comps.push_back({{"weight", c.weight}, {"mean", std::move(mean)}, {"cov", std::move(cov)}});
  }
  return {{"d", model.dim()}, {"components", std::move(comps)}};
}

MixtureModel model_from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("d").get<int>();
    if (d < 1) throw Error(Errc::InvalidModel, "model dimension must be >= 1");
    std::vector<Component> comps;
    for (const auto& jc : j.at("components")) {
      const auto& jm = jc.at("mean");
      const auto& jcov = jc.at("cov");
      if (static_cast<int>(jm.size()) != d || static_cast<int>(jcov.size()) != d)
        throw Error(Errc::InvalidModel, "component dimension does not match d");
      Eigen::VectorXd mean(d);
      Eigen::MatrixXd cov(d, d);
      for (int r = 0; r < d; ++r) {
        mean[r] = jm.at(static_cast<std::size_t>(r)).get<double>();
        if (static_cast<int>(jcov.at(static_cast<std::size_t>(r)).size()) != d)
          throw Error(Errc::InvalidModel, "covariance row has wrong length");
        for (int c = 0; c < d; ++c)
          cov(r, c) = jcov.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
      }
      comps.push_back({jc.at("weight").get<double>(), Gaussian(std::move(mean), std::move(cov))});
    }
    return MixtureModel(std::move(comps));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidModel, e.what());
  }
}

}  // namespace stam::gmm
