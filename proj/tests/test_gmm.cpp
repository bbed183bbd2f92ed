#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "stam/gmm.hpp"
#include "support.hpp"

using namespace stam;
using namespace stam::gmm;
using stam::testing::code_of;

namespace {

Data stack(std::initializer_list<std::pair<Eigen::Vector2d, int>> blocks) {
  int n = 0;
  for (const auto& b : blocks) n += b.second;
  Data out(n, 2);
  int row = 0;
  for (const auto& [p, count] : blocks)
    for (int i = 0; i < count; ++i) out.row(row++) = p.transpose();
  return out;
}

void check_fit_invariants(const EmResult& fit, double floor = kDefaultCovFloor) {
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
    CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-9);
  double total = 0;
  for (const auto& c : fit.model.components()) {
    total += c.weight;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.gaussian.cov());
    CHECK(es.eigenvalues().minCoeff() >= floor * (1 - 1e-9));
    CHECK((c.gaussian.cov() - c.gaussian.cov().transpose()).norm() == 0.0);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

// Plain full-covariance EM over 2D data, written out with scalar loops so it
// shares nothing with the library beyond the initial parameters.
struct Plain2d {
  double w[2];
  double mx[2], my[2];
  double sxx[2], sxy[2], syy[2];
};

void plain_em(Plain2d& m, const Data& x, int iterations, double floor) {
  const int n = static_cast<int>(x.rows());
  std::vector<double> r0(n), r1(n);
  for (int it = 0; it < iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      double p[2];
      for (int k = 0; k < 2; ++k) {
        const double det = m.sxx[k] * m.syy[k] - m.sxy[k] * m.sxy[k];
        const double dx = x(i, 0) - m.mx[k], dy = x(i, 1) - m.my[k];
        const double q = (m.syy[k] * dx * dx - 2 * m.sxy[k] * dx * dy + m.sxx[k] * dy * dy) / det;
        p[k] = std::log(m.w[k]) - std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * q;
      }
      const double top = std::max(p[0], p[1]);
      const double z = top + std::log(std::exp(p[0] - top) + std::exp(p[1] - top));
      r0[i] = std::exp(p[0] - z);
      r1[i] = std::exp(p[1] - z);
    }
    for (int k = 0; k < 2; ++k) {
      const auto& r = k == 0 ? r0 : r1;
      double nk = 0, sx = 0, sy = 0;
      for (int i = 0; i < n; ++i) {
        nk += r[i];
        sx += r[i] * x(i, 0);
        sy += r[i] * x(i, 1);
      }
      m.w[k] = nk / n;
      m.mx[k] = sx / nk;
      m.my[k] = sy / nk;
      double cxx = 0, cxy = 0, cyy = 0;
      for (int i = 0; i < n; ++i) {
        const double dx = x(i, 0) - m.mx[k], dy = x(i, 1) - m.my[k];
        cxx += r[i] * dx * dx;
        cxy += r[i] * dx * dy;
        cyy += r[i] * dy * dy;
      }
      m.sxx[k] = cxx / nk + floor;
      m.sxy[k] = cxy / nk;
      m.syy[k] = cyy / nk + floor;
    }
  }
}

}  // namespace

TEST_CASE("kmeans finds separated clusters") {
  const Data data = stack({{{0, 0}, 10}, {{10, 10}, 10}});
  const KMeansResult km = kmeans(data, 2, 5);
  Eigen::MatrixXd c = km.centroids;
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  CHECK(c(0, 0) == 0.0);
  CHECK(c(0, 1) == 0.0);
  CHECK(c(1, 0) == 10.0);
  CHECK(c(1, 1) == 10.0);
  for (int i = 0; i < 20; ++i) CHECK(km.assignments[i] == km.assignments[i < 10 ? 0 : 10]);
  CHECK(km.assignments[0] != km.assignments[10]);
}

TEST_CASE("kmeans with one cluster returns the sample mean") {
  std::mt19937_64 rng(1);
  const Data data = sample(stam::testing::random_mixture(3, 3, rng), 200, 2);
  const KMeansResult km = kmeans(data, 1, 9);
  CHECK((km.centroids.row(0) - data.colwise().mean()).norm() < 1e-12);
}

TEST_CASE("kmeans and em reject more clusters than samples") {
  const Data three = stack({{{0, 0}, 1}, {{1, 0}, 1}, {{0, 1}, 1}});
  CHECK(code_of([&] { kmeans(three, 5, 1); }) == Errc::TooFewSamples);
  CHECK(code_of([&] { em_fit(three, 4); }) == Errc::TooFewSamples);
}

TEST_CASE("kmeans reseeds empty clusters") {
  // Duplicated points force k-means++ to pick coincident centers.
  const Data data = stack({{{1, 1}, 6}, {{2, 2}, 1}});
  const KMeansResult km = kmeans(data, 3, 4);
  std::vector<int> counts(3, 0);
  for (int a : km.assignments) ++counts[a];
  int used = 0;
  for (int c : counts) used += c > 0;
  CHECK(used >= 2);
  CHECK(km.iterations <= 100);
}

TEST_CASE("single component em is the closed-form fit") {
  std::mt19937_64 rng(2);
  const Data data = sample(stam::testing::random_mixture(2, 3, rng), 300, 3);
  const EmResult fit = em_fit(data, 1, {.seed = 4});
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  const Eigen::MatrixXd mle = centered.transpose() * centered / static_cast<double>(data.rows());
  const auto& g = fit.model.components()[0].gaussian;
  CHECK((g.mean() - mean).norm() < 1e-10);
  CHECK((g.cov() - (mle + kDefaultCovFloor * Eigen::MatrixXd::Identity(3, 3))).norm() < 1e-10);
  CHECK(fit.model.components()[0].weight == 1.0);
  check_fit_invariants(fit);
}

TEST_CASE("identical points give the floor covariance") {
  const Data data = stack({{{3, -1}, 40}});
  const EmResult fit = em_fit(data, 1);
  const auto& g = fit.model.components()[0].gaussian;
  CHECK((g.cov() - kDefaultCovFloor * Eigen::Matrix2d::Identity()).norm() < 1e-18);
  CHECK(g.mean().allFinite());
  CHECK(std::isfinite(fit.loglik_trace.back()));
  check_fit_invariants(fit);
}

TEST_CASE("em recovers two separated clusters") {
  const Data data = sample(stam::testing::two_clusters(), 1000, 17);
  const EmResult fit = em_fit(data, 2, {.seed = 3});
  check_fit_invariants(fit);
  auto comps = fit.model.components();
  if (comps[0].gaussian.mean()[0] > comps[1].gaussian.mean()[0]) std::swap(comps[0], comps[1]);
  CHECK(std::abs(comps[0].weight - 0.5) <= 0.05);
  CHECK(std::abs(comps[1].weight - 0.5) <= 0.05);
  CHECK(comps[0].gaussian.mean().norm() < 0.2);
  CHECK((comps[1].gaussian.mean() - Eigen::Vector2d(20, 20)).norm() < 0.2);

  // Cross-check against the scalar implementation from the same start.
  const KMeansResult km = kmeans(data, 2, 3);
  Plain2d plain{};
  for (int k = 0; k < 2; ++k) {
    double nk = 0, sx = 0, sy = 0;
    for (int i = 0; i < data.rows(); ++i)
      if (km.assignments[i] == k) {
        ++nk;
        sx += data(i, 0);
        sy += data(i, 1);
      }
    plain.w[k] = nk / data.rows();
    plain.mx[k] = km.centroids(k, 0);
    plain.my[k] = km.centroids(k, 1);
    double cxx = 0, cxy = 0, cyy = 0;
    for (int i = 0; i < data.rows(); ++i)
      if (km.assignments[i] == k) {
        const double dx = data(i, 0) - plain.mx[k], dy = data(i, 1) - plain.my[k];
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
      }
    plain.sxx[k] = cxx / nk + kDefaultCovFloor;
    plain.sxy[k] = cxy / nk;
    plain.syy[k] = cyy / nk + kDefaultCovFloor;
  }
  plain_em(plain, data, 100, kDefaultCovFloor);
  for (int k = 0; k < 2; ++k) {
    const auto& c = fit.model.components()[k];
    CHECK(c.weight == doctest::Approx(plain.w[k]).epsilon(1e-6));
    CHECK(c.gaussian.mean()[0] == doctest::Approx(plain.mx[k]).epsilon(1e-6));
    CHECK(c.gaussian.mean()[1] == doctest::Approx(plain.my[k]).epsilon(1e-6));
    CHECK(c.gaussian.cov()(0, 0) == doctest::Approx(plain.sxx[k]).epsilon(1e-5));
    CHECK(c.gaussian.cov()(0, 1) == doctest::Approx(plain.sxy[k]).epsilon(1e-5).scale(1));
    CHECK(c.gaussian.cov()(1, 1) == doctest::Approx(plain.syy[k]).epsilon(1e-5));
  }
}

TEST_CASE("em invariants hold on random datasets") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> dim(1, 3), comps(1, 4), size(20, 300);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = dim(rng);
    const Data data = sample(stam::testing::random_mixture(comps(rng), d, rng), size(rng), rng());
    const int k = comps(rng);
    const EmResult fit = em_fit(data, k, {.seed = rng()});
    CHECK(fit.model.size() == static_cast<std::size_t>(k));
    check_fit_invariants(fit);
  }
}

TEST_CASE("em rejects non-finite data") {
  Data data = stack({{{0, 0}, 3}});
  data(1, 1) = std::nan("");
  CHECK(code_of([&] { em_fit(data, 1); }) == Errc::InvalidArgument);
}

TEST_CASE("log_pdf examples") {
  const MixtureModel std1({{1.0, Gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1))}});
  CHECK(std::abs(std1.log_pdf(Eigen::VectorXd::Zero(1)) + 0.91894) < 1e-5);

  const MixtureModel pair({{0.5, Gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1))},
                           {0.5, Gaussian(Eigen::VectorXd::Constant(1, 4.0), Eigen::MatrixXd::Identity(1, 1))}});
  CHECK(std::abs(pair.log_pdf(Eigen::VectorXd::Constant(1, 2.0)) - std::log(0.053991)) < 1e-4);
  CHECK(std::abs(pair.log_pdf(Eigen::VectorXd::Constant(1, 2.0)) + 2.9189) < 1e-4);

  for (double far : {1e3, 1e6, 1e150}) {
    const double v = pair.log_pdf(Eigen::VectorXd::Constant(1, far));
    CHECK(std::isfinite(v));
    CHECK(v < -1e5);
  }
  CHECK(code_of([&] { pair.log_pdf(Eigen::Vector2d(0, 0)); }) == Errc::DimensionMismatch);
}

TEST_CASE("log_sum_exp is stable") {
  CHECK(log_sum_exp(Eigen::Vector2d(-1000, -1000)) == doctest::Approx(-1000 + std::log(2.0)));
  CHECK(log_sum_exp(Eigen::Vector2d(1000, 1000)) == doctest::Approx(1000 + std::log(2.0)));
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(Eigen::Vector2d(-inf, -inf)) == -inf);
}

TEST_CASE("densities integrate to one") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const MixtureModel m1 = stam::testing::random_mixture(3, 1, rng, 2.0);
    double total = 0;
    const double h = 0.01;
    for (double x = -20; x <= 20; x += h) total += std::exp(m1.log_pdf(Eigen::VectorXd::Constant(1, x))) * h;
    CHECK(total == doctest::Approx(1.0).epsilon(0.01));

    const MixtureModel m2 = stam::testing::random_mixture(2, 2, rng, 2.0);
    total = 0;
    const double g = 0.05;
    for (double x = -12; x <= 12; x += g)
      for (double y = -12; y <= 12; y += g) total += std::exp(m2.log_pdf(Eigen::Vector2d(x, y))) * g * g;
    CHECK(total == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("sampling is seeded") {
  const MixtureModel m = stam::testing::two_clusters(3.0);
  CHECK(sample(m, 50, 8) == sample(m, 50, 8));
  CHECK(sample(m, 50, 8) != sample(m, 50, 9));
  CHECK(sample(m, 0, 1).rows() == 0);

  const MixtureModel unit({{1.0, Gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity())}});
  const Data big = sample(unit, 10000, 12);
  CHECK(big.colwise().mean().norm() < 0.05);
}

TEST_CASE("free parameter count and bic arithmetic") {
  CHECK(free_parameters(1, 2) == 5);
  CHECK(free_parameters(3, 2) == 17);
  CHECK(free_parameters(2, 3) == 19);

  // 100 points each with log density -2.5 under a standard normal.
  const MixtureModel unit({{1.0, Gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity())}});
  const double r = std::sqrt(2.0 * (2.5 - std::log(2.0 * std::numbers::pi)));
  const Data data = stack({{{r, 0}, 100}});
  CHECK(bic(unit, data) == doctest::Approx(523.026).epsilon(1e-6));
  CHECK(bic(unit, data) == doctest::Approx(500.0 + 5.0 * std::log(100.0)));
  CHECK(code_of([&] { bic(unit, Data(0, 2)); }) == Errc::EmptyData);
}

TEST_CASE("select_model clamps candidates and is deterministic") {
  const Data five = stack({{{0, 0}, 1}, {{1, 0}, 1}, {{0, 1}, 1}, {{2, 2}, 1}, {{3, 1}, 1}});
  const SelectionResult small = select_model(five, {.k_max = 8, .seed = 1});
  CHECK(small.bic_scores.size() == 5);
  CHECK(code_of([&] { select_model(stack({{{0, 0}, 1}})); }) == Errc::TooFewSamples);

  const Data data = sample(stam::testing::two_clusters(), 400, 3);
  const SelectionResult a = select_model(data, {.seed = 6});
  const SelectionResult b = select_model(data, {.seed = 6});
  CHECK(a.bic_scores == b.bic_scores);
  CHECK(to_json(a.model) == to_json(b.model));
  CHECK(a.bic_scores.size() == 8);
  CHECK(a.selected_k == 2);
  const double best = *std::min_element(a.bic_scores.begin(), a.bic_scores.end());
  CHECK(a.bic_scores[a.selected_k - 1] == best);
}

TEST_CASE("select_model prefers fewer components on ties") {
  // Identical points: every k collapses to the same likelihood, so the
  // parameter penalty alone decides.
  const Data flat = stack({{{1, 1}, 30}});
  const SelectionResult r = select_model(flat, {.k_max = 3, .seed = 2});
  CHECK(r.selected_k == 1);
}

TEST_CASE("model json round trip") {
  std::mt19937_64 rng(41);
  const MixtureModel m = stam::testing::random_mixture(3, 3, rng);
  const nlohmann::json j = to_json(m);
  CHECK(j.at("d") == 3);
  CHECK(j.at("components").size() == 3);
  CHECK(j.at("components")[0].contains("weight"));
  CHECK(j.at("components")[0].contains("mean"));
  CHECK(j.at("components")[0].contains("cov"));
  CHECK(to_json(model_from_json(nlohmann::json::parse(j.dump()))) == j);

  nlohmann::json bad = j;
  bad["components"][0]["weight"] = 5.0;
  CHECK(code_of([&] { model_from_json(bad); }) == Errc::InvalidModel);
  bad = j;
  bad["components"][1]["cov"][0][0] = -1.0;
  CHECK(code_of([&] { model_from_json(bad); }) == Errc::InvalidModel);
  CHECK(code_of([&] { model_from_json(nlohmann::json::array()); }) == Errc::InvalidModel);
}

TEST_CASE("gaussian validates its covariance") {
  CHECK(code_of([] { Gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix3d::Identity()); }) == Errc::InvalidModel);
  Eigen::Matrix2d asym;
  asym << 1, 0.5, 0.2, 1;
  CHECK(code_of([&] { Gaussian(Eigen::Vector2d::Zero(), asym); }) == Errc::InvalidModel);
  CHECK(code_of([] { Gaussian(Eigen::Vector2d::Zero(), -Eigen::Matrix2d::Identity()); }) == Errc::InvalidModel);
}
