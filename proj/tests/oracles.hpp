#pragma once

// Generators and brute-force reference computations shared by the unit tests
// and the acceptance runner.

#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stam/gmm.hpp"
#include "stam/grid.hpp"

namespace stam::testing {

// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng, double lo = 0.2, double hi = 2.0) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> eig(lo, hi);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd ev(d);
  for (int i = 0; i < d; ++i) ev(i) = eig(rng);
  Eigen::MatrixXd s = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

inline Eigen::VectorXd random_vector(int d, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = u(rng);
  return v;
}

// Mixture with k components of dimension d, means in [-spread, spread]^d.
inline gmm::MixtureModel random_mixture(int k, int d, std::mt19937_64& rng, double spread = 5.0) {
  std::uniform_real_distribution<double> w(0.5, 1.5);
  std::vector<double> weights(k);
  double total = 0;
  for (double& x : weights) total += x = w(rng);
  std::vector<gmm::Component> comps;
  for (int i = 0; i < k; ++i)
    comps.push_back({weights[i] / total, gmm::Gaussian(random_vector(d, rng, spread), random_spd(d, rng))});
  return gmm::MixtureModel(std::move(comps));
}

inline gmm::MixtureModel two_clusters(double separation = 20.0) {
  return gmm::MixtureModel({{0.5, gmm::Gaussian(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity())},
                            {0.5, gmm::Gaussian(Eigen::Vector2d(separation, separation), Eigen::Matrix2d::Identity())}});
}

// Plain Dijkstra over 8-connected positive-gain cells, minimizing the sum of
// (1 - m + 1e-3) over every visited cell including the start.
inline double dijkstra_cost(const ScalarField& gain, Cell start, Cell goal) {
  const auto& g = gain.geometry();
  std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
  std::vector<char> done(g.size(), 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  const std::size_t s = g.index(start);
  dist[s] = 1.0 - gain.values()[s] + 1e-3;
  queue.push({dist[s], s});
  while (!queue.empty()) {
    const auto [d, i] = queue.top();
    queue.pop();
    if (done[i]) continue;
    done[i] = 1;
    const Cell c = g.cell_at(i);
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const Cell n{c.col + dc, c.row + dr};
        if ((dr == 0 && dc == 0) || !g.contains(n)) continue;
        const std::size_t j = g.index(n);
        if (!(gain.values()[j] > 0.0)) continue;
        const double nd = d + (1.0 - gain.values()[j] + 1e-3);
        if (nd < dist[j]) {
          dist[j] = nd;
          queue.push({nd, j});
        }
      }
    }
  }
  return dist[g.index(goal)];
}

// Conditional mean and variance of dim 1 given dim 0 = x0 for a 2D density,
// by summing the joint density on a 1e-3 grid over +-12 marginal deviations.
struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

inline Moments grid_conditional(const gmm::MixtureModel& m, double x0) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : m.components()) {
    const double mu = c.gaussian.mean()[1], sd = std::sqrt(c.gaussian.cov()(1, 1));
    lo = std::min(lo, mu - 12 * sd);
    hi = std::max(hi, mu + 12 * sd);
  }
  double z = 0, s1 = 0, s2 = 0;
  for (double y = lo; y <= hi; y += 1e-3) {
    const double p = std::exp(m.log_pdf(Eigen::Vector2d(x0, y)));
    z += p;
    s1 += p * y;
    s2 += p * y * y;
  }
  const double mean = s1 / z;
  return {mean, s2 / z - mean * mean};
}

}  // namespace stam::testing
