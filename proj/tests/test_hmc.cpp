#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hdphmm/distributions.hpp"
#include "hdphmm/hmc.hpp"
#include "hdphmm/rng.hpp"
#include "support/stats.hpp"

using namespace hdphmm;
using Catch::Approx;

namespace {

HmcTarget hyper_target(const Eigen::VectorXd& rates) {
  return HmcTarget{
      [rates](const Eigen::VectorXd& q) {
        return hyper_logpdf(Eigen::Vector2d(q[0], q[1]), rates);
      },
      [rates](const Eigen::VectorXd& q) -> Eigen::VectorXd {
        return hyper_grad(Eigen::Vector2d(q[0], q[1]), rates);
      }};
}

}  // namespace

TEST_CASE("hyperparameter log density closed forms", "[hmc]") {
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(hyper_logpdf(Eigen::Vector2d(0.0, 0.0), one) == Approx(-1.0).margin(1e-12));
  // a = 2, b = 1: -lnG(2) - 1 = -1
  CHECK(hyper_logpdf(Eigen::Vector2d(std::log(2.0), 0.0), one) ==
        Approx(-1.0).margin(1e-12));
}

TEST_CASE("hyperparameter log density equals summed gamma densities",
          "[hmc][oracle]") {
  RngHandle rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    double la = rng.normal() * 0.7;
    double lb = rng.normal() * 0.7;
    Eigen::VectorXd rates(5);
    for (int i = 0; i < 5; ++i) rates[i] = gamma_sample(rng, 2.0, 0.5);
    double direct = hyper_logpdf(Eigen::Vector2d(la, lb), rates);
    double summed = 0.0;
    for (int i = 0; i < 5; ++i) {
      summed += gamma_logpdf(rates[i], std::exp(la), std::exp(lb));
    }
    CHECK(direct == Approx(summed).margin(1e-10));
  }
}

TEST_CASE("hyperparameter gradient closed forms", "[hmc]") {
  Eigen::VectorXd one(1);
  one << 1.0;
  Eigen::Vector2d g = hyper_grad(Eigen::Vector2d(0.0, 0.0), one);
  CHECK(g[0] == Approx(0.57721566490153286).margin(1e-10));  // -Psi(1)
  CHECK(g[1] == Approx(0.0).margin(1e-12));

  // stationary in b whenever a/b equals the single rate
  Eigen::VectorXd r(1);
  r << 3.0;
  Eigen::Vector2d g2 =
      hyper_grad(Eigen::Vector2d(std::log(6.0), std::log(2.0)), r);
  CHECK(g2[1] == Approx(0.0).margin(1e-12));
}

TEST_CASE("hyperparameter gradient matches finite differences",
          "[hmc][oracle]") {
  RngHandle rng(32);
  const double h = 1e-6;
  for (int rep = 0; rep < 100; ++rep) {
    int m = 1 + static_cast<int>(rng.uniform() * 8);
    Eigen::VectorXd rates(m);
    for (int i = 0; i < m; ++i) rates[i] = gamma_sample(rng, 2.0, 0.5);
    Eigen::Vector2d pos(rng.normal(), rng.normal());
    Eigen::Vector2d g = hyper_grad(pos, rates);
    for (int d = 0; d < 2; ++d) {
      Eigen::Vector2d lo = pos, hi = pos;
      lo[d] -= h;
      hi[d] += h;
      double fd = (hyper_logpdf(hi, rates) - hyper_logpdf(lo, rates)) / (2.0 * h);
      double scale = std::max(1.0, std::fabs(g[d]));
      CHECK(std::fabs(g[d] - fd) / scale < 1e-5);
    }
  }
}

TEST_CASE("leapfrog is reversible", "[hmc][property]") {
  RngHandle rng(33);
  Eigen::VectorXd rates(4);
  for (int i = 0; i < 4; ++i) rates[i] = gamma_sample(rng, 2.0, 0.5);
  HmcTarget target = hyper_target(rates);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd q(2), p(2);
    q << rng.normal(), rng.normal();
    p << rng.normal(), rng.normal();
    PhasePoint fwd = leapfrog(target, q, p, 0.05, 10, 1.0);
    REQUIRE(fwd.finite);
    PhasePoint back = leapfrog(target, fwd.q, -fwd.p, 0.05, 10, 1.0);
    REQUIRE(back.finite);
    CHECK((back.q - q).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((back.p + p).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("leapfrog conserves energy at small step sizes", "[hmc]") {
  RngHandle rng(34);
  Eigen::VectorXd rates(6);
  for (int i = 0; i < 6; ++i) rates[i] = gamma_sample(rng, 2.0, 0.5);
  HmcTarget target = hyper_target(rates);
  Eigen::VectorXd q(2), p(2);
  q << 0.3, -0.2;
  p << 0.7, 0.4;
  double h0 = -target.logpdf(q) + 0.5 * p.squaredNorm();
  PhasePoint end = leapfrog(target, q, p, 1e-6, 10, 1.0);
  double h1 = -target.logpdf(end.q) + 0.5 * end.p.squaredNorm();
  CHECK(std::fabs(h1 - h0) < 1e-8);
}

TEST_CASE("hmc step becomes the identity as the step size vanishes", "[hmc]") {
  RngHandle rng(35);
  Eigen::VectorXd rates(3);
  for (int i = 0; i < 3; ++i) rates[i] = gamma_sample(rng, 2.0, 0.5);
  HmcTarget target = hyper_target(rates);
  HmcConfig config;
  config.step_size = 1e-12;
  Eigen::VectorXd q(2);
  q << 0.1, 0.2;
  int accepted = 0;
  for (int i = 0; i < 100; ++i) {
    HmcResult res = hmc_step(rng, target, q, config);
    accepted += res.accepted ? 1 : 0;
    CHECK((res.position - q).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(accepted == 100);
}

TEST_CASE("hmc samples a standard normal correctly", "[hmc][oracle]") {
  HmcTarget target{[](const Eigen::VectorXd& q) { return -0.5 * q.squaredNorm(); },
                   [](const Eigen::VectorXd& q) -> Eigen::VectorXd { return -q; }};
  HmcConfig config;
  config.n_leapfrog = 10;
  RngHandle rng(36);
  Eigen::VectorXd q(1);
  q << 0.0;
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    config.step_size = 0.2 + 0.2 * rng.uniform();  // avoid periodic orbits
    q = hmc_step(rng, target, q, config).position;
    sum += q[0];
    sumsq += q[0] * q[0];
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(mean == Approx(0.0).margin(0.02));
  CHECK(var == Approx(1.0).margin(0.02));
}

TEST_CASE("default settings give a healthy acceptance rate", "[hmc]") {
  RngHandle rng(37);
  Eigen::VectorXd rates(80);
  for (int i = 0; i < 80; ++i) rates[i] = gamma_sample(rng, 1.0, 0.2);
  HmcTarget target = hyper_target(rates);
  HmcConfig config;  // defaults: step 0.05, 10 leapfrog steps, unit mass
  Eigen::VectorXd q(2);
  q << 0.0, std::log(0.2);
  int accepted = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    HmcResult res = hmc_step(rng, target, q, config);
    q = res.position;
    accepted += res.accepted ? 1 : 0;
  }
  double rate = static_cast<double>(accepted) / n;
  CHECK(rate > 0.6);
  CHECK(rate <= 0.95);
}

TEST_CASE("empirical Bayes fit on near-Poisson data", "[hmc]") {
  RngHandle rng(38);
  const int T = 10000;
  Eigen::Matrix<long, Eigen::Dynamic, 1> row(T);
  for (int t = 0; t < T; ++t) row[t] = poisson_sample(rng, 5.0);
  GammaHyper h = eb_fit(row);
  CHECK(h.a / h.b == Approx(5.0).margin(0.1));
  CHECK(h.a > 100.0);  // overdispersion vanishes, shape runs large
}

TEST_CASE("empirical Bayes fit recovers gamma-Poisson parameters",
          "[hmc][oracle]") {
  RngHandle rng(39);
  const int T = 10000;
  Eigen::Matrix<long, Eigen::Dynamic, 1> row(T);
  for (int t = 0; t < T; ++t) {
    row[t] = poisson_sample(rng, gamma_sample(rng, 2.0, 0.5));
  }
  GammaHyper h = eb_fit(row);
  CHECK(h.a > 1.8);
  CHECK(h.a < 2.2);
  CHECK(h.a / h.b == Approx(4.0).margin(0.15));  // mean a/b = 2/0.5
}

TEST_CASE("empirical Bayes fit handles degenerate rows", "[hmc]") {
  Eigen::Matrix<long, Eigen::Dynamic, 1> zeros =
      Eigen::Matrix<long, Eigen::Dynamic, 1>::Zero(100);
  GammaHyper h = eb_fit(zeros);
  CHECK(h.a == 1.0);
  CHECK(h.b == 1.0);
}

TEST_CASE("empirical Bayes optimum has nonpositive curvature",
          "[hmc][property]") {
  RngHandle rng(40);
  auto profile_ll = [](const Eigen::Matrix<long, Eigen::Dynamic, 1>& row,
                       double a) {
    double T = static_cast<double>(row.size());
    double sum_y = static_cast<double>(row.sum());
    double b = a * T / sum_y;
    double p = 1.0 / (1.0 + b);
    double ll = 0.0;
    for (Eigen::Index t = 0; t < row.size(); ++t) {
      ll += negbinom_logpmf(row[t], a, p);
    }
    return ll;
  };
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::Matrix<long, Eigen::Dynamic, 1> row(2000);
    for (int t = 0; t < 2000; ++t) {
      row[t] = poisson_sample(rng, gamma_sample(rng, 1.5, 0.4));
    }
    GammaHyper h = eb_fit(row);
    double center = profile_ll(row, h.a);
    CHECK(profile_ll(row, h.a * 1.001) <= center + 1e-9);
    CHECK(profile_ll(row, h.a * 0.999) <= center + 1e-9);
  }
}
