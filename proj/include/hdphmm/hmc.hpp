#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/distributions.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/rng.hpp"
#include "hdphmm/special.hpp"

namespace hdphmm {

struct HmcConfig {
  int n_leapfrog = 10;
  double step_size = 0.1;
  double mass = 1.0;

  void validate() const {
    if (n_leapfrog < 1 || !(step_size > 0.0) || !(mass > 0.0)) {
      throw DomainError("invalid HMC configuration");
    }
  }
};

// ---------------------------------------------------------------------------
// Gamma-hyperparameter target, position = (log a, log b), flat prior on the
// logs. Constant terms are dropped.

/// sum_i [ a log b - log Gamma(a) + (a - 1) log lambda_i - b lambda_i ]
inline double hyper_logpdf(const Eigen::Vector2d& pos,
                           const Eigen::Ref<const Eigen::VectorXd>& rates) {
  double a = std::exp(pos[0]);
  double b = std::exp(pos[1]);
  double m = static_cast<double>(rates.size());
  double sum_log = rates.array().log().sum();
  double sum = rates.sum();
  return m * (a * std::log(b) - std::lgamma(a)) + (a - 1.0) * sum_log - b * sum;
}

/// d/dlog a = a * sum_i [log b - Psi(a) + log lambda_i]
/// d/dlog b = b * sum_i [a/b - lambda_i]
inline Eigen::Vector2d hyper_grad(const Eigen::Vector2d& pos,
                                  const Eigen::Ref<const Eigen::VectorXd>& rates) {
  double a = std::exp(pos[0]);
  double b = std::exp(pos[1]);
  double m = static_cast<double>(rates.size());
  double sum_log = rates.array().log().sum();
  double sum = rates.sum();
  Eigen::Vector2d g;
  g[0] = a * (m * (std::log(b) - digamma(a)) + sum_log);
  g[1] = b * (m * a / b - sum);
  return g;
}

struct HmcTarget {
  std::function<double(const Eigen::VectorXd&)> logpdf;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  bool finite = true;
};

/// Leapfrog integration of the Hamiltonian flow for -logpdf.
inline PhasePoint leapfrog(const HmcTarget& target, Eigen::VectorXd q,
                           Eigen::VectorXd p, double eps, int n_steps,
                           double mass) {
  p += 0.5 * eps * target.grad(q);
  for (int l = 0; l < n_steps; ++l) {
    q += eps * p / mass;
    if (!q.allFinite()) return {std::move(q), std::move(p), false};
    if (l + 1 < n_steps) p += eps * target.grad(q);
  }
  p += 0.5 * eps * target.grad(q);
  return {std::move(q), std::move(p), p.allFinite()};
}

struct HmcResult {
  Eigen::VectorXd position;
  bool accepted = false;
};

/// One leapfrog trajectory plus a Metropolis accept/reject on the
/// Hamiltonian. A non-finite Hamiltonian anywhere along the trajectory
/// counts as a divergence and the move is rejected.
inline HmcResult hmc_step(RngHandle& rng, const HmcTarget& target,
                          const Eigen::VectorXd& position,
                          const HmcConfig& config) {
  config.validate();
  const Eigen::Index d = position.size();
  Eigen::VectorXd p(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    p[i] = rng.normal() * std::sqrt(config.mass);
  }
  double h0 = -target.logpdf(position) + 0.5 * p.squaredNorm() / config.mass;

  PhasePoint end = leapfrog(target, position, std::move(p), config.step_size,
                            config.n_leapfrog, config.mass);
  HmcResult res;
  res.position = position;
  if (!end.finite) return res;
  double h1 = -target.logpdf(end.q) + 0.5 * end.p.squaredNorm() / config.mass;
  if (!std::isfinite(h1)) return res;
  double log_accept = h0 - h1;
  if (log_accept >= 0.0 || std::log(rng.uniform_pos()) < log_accept) {
    res.position = std::move(end.q);
    res.accepted = true;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Empirical Bayes: negative binomial maximum likelihood for one cell

namespace detail {

/// Profile gradient dL/da at b = a*T/sum(y), in terms of the count
/// histogram. By the envelope theorem the b-derivative vanishes at the
/// profiled value.
inline double nb_profile_grad(double a, double T, double sum_y,
                              const std::vector<std::pair<long, long>>& hist) {
  double b = a * T / sum_y;
  double g = 0.0;
  for (const auto& [y, n] : hist) {
    g += static_cast<double>(n) * digamma(static_cast<double>(y) + a);
  }
  g -= T * digamma(a);
  g += T * (std::log(b) - std::log1p(b));
  return g;
}

}  // namespace detail

/// Maximum likelihood gamma hyperparameters for one cell's counts under the
/// negative binomial marginal, with b profiled out as b = a*T/sum(y) and a
/// found by bisection on the profile gradient. The gradient's large-a limit
/// has the sign of T*(m + m^2) - sum(y^2), so equi- or under-dispersed data
/// run to the near-Poisson cap analytically instead of through a gradient
/// evaluation that would cancel catastrophically. All-zero rows are
/// degenerate and fall back to (1, 1).
inline GammaHyper eb_fit(const Eigen::Ref<const Eigen::Matrix<long, Eigen::Dynamic, 1>>& counts_row) {
  const double T = static_cast<double>(counts_row.size());
  double sum_y = 0.0;
  double sum_y2 = 0.0;
  std::vector<std::pair<long, long>> hist;
  {
    std::vector<long> sorted(counts_row.data(),
                             counts_row.data() + counts_row.size());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      auto y = static_cast<double>(sorted[i]);
      auto n = static_cast<double>(j - i);
      hist.emplace_back(sorted[i], static_cast<long>(j - i));
      sum_y += y * n;
      sum_y2 += y * y * n;
      i = j;
    }
  }
  if (sum_y == 0.0) {
    return GammaHyper{1.0, 1.0};  // degenerate all-zero row
  }
  // effectively Poisson already at 1e4 (prior sd of the rate is mean/100);
  // larger caps put lgamma terms of order 1e9 into downstream bounds where
  // their cancellation noise swamps 1e-8 monotonicity tolerances
  const double cap = 1e4;
  double mbar = sum_y / T;
  if (T * (mbar * mbar + mbar) - sum_y2 >= 0.0) {
    return GammaHyper{cap, cap * T / sum_y};  // no overdispersion to explain
  }

  double lo = std::log(1e-6);
  double hi = std::log(1e4);
  while (detail::nb_profile_grad(std::exp(hi), T, sum_y, hist) > 0.0) {
    hi += 2.0;
    if (hi >= std::log(cap)) return GammaHyper{cap, cap * T / sum_y};
  }
  if (detail::nb_profile_grad(std::exp(lo), T, sum_y, hist) < 0.0) {
    double a = std::exp(lo);
    return GammaHyper{a, a * T / sum_y};
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double g = detail::nb_profile_grad(std::exp(mid), T, sum_y, hist);
    if (std::fabs(g) < 1e-8 || hi - lo < 1e-14) break;
    if (g > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double a = std::exp(0.5 * (lo + hi));
  return GammaHyper{a, a * T / sum_y};
}

}  // namespace hdphmm
