#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/count_data.hpp"
#include "hdphmm/distributions.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/gibbs.hpp"
#include "hdphmm/hmm.hpp"
#include "hdphmm/rng.hpp"

namespace hdphmm {

struct SpatialConfig {
  double arena_radius_cm = 60.0;
  double jitter_cm = 2.0;  // isotropic spread of positions around a state center
};

struct NbNoiseConfig {
  double mean = 0.25;
  double variance = 0.5;
};

struct SimConfig {
  int C = 30;
  int T = 1000;
  int M = 80;
  double alpha0 = 4.0;
  double gamma = 8.0;
  GammaHyper rate_prior{1.0, 0.2};
  std::uint64_t seed = 0;
  std::optional<SpatialConfig> spatial;
  std::optional<NbNoiseConfig> nb_noise;

  void validate() const {
    if (C < 1 || T < 1 || M < 1) {
      throw DomainError("C, T and M must be positive");
    }
    if (!(alpha0 > 0.0) || !(gamma > 0.0)) {
      throw DomainError("concentrations must be positive");
    }
    rate_prior.validate();
    if (nb_noise && !(nb_noise->variance > nb_noise->mean && nb_noise->mean > 0.0)) {
      throw DomainError("NB noise requires variance > mean > 0");
    }
    if (spatial && !(spatial->arena_radius_cm > 0.0 && spatial->jitter_cm >= 0.0)) {
      throw DomainError("invalid spatial configuration");
    }
  }
};

/// Deterministic core of the stick-breaking construction: the i-th atom
/// takes fraction frac[i] of the remaining stick, the remainder goes to the
/// last atom so the output is a distribution.
inline Eigen::VectorXd stick_break(const std::vector<double>& fractions) {
  const int M = static_cast<int>(fractions.size()) + 1;
  Eigen::VectorXd beta(M);
  double remaining = 1.0;
  for (int i = 0; i + 1 < M; ++i) {
    beta[i] = fractions[static_cast<std::size_t>(i)] * remaining;
    remaining -= beta[i];
  }
  beta[M - 1] = remaining;
  return beta;
}

/// Truncated GEM draw: stick fractions b~_i ~ Beta(1, gamma).
inline Eigen::VectorXd sample_gem(RngHandle& rng, double gamma_conc, int M) {
  if (!(gamma_conc > 0.0) || M < 1) {
    throw DomainError("sample_gem requires gamma > 0 and M >= 1");
  }
  std::vector<double> fractions(static_cast<std::size_t>(M - 1));
  for (auto& f : fractions) f = beta_sample(rng, 1.0, gamma_conc);
  return stick_break(fractions);
}

/// Weak-limit ground truth: beta from the symmetric Dirichlet, each
/// transition row and pi from Dir(alpha0 beta), rates i.i.d. from the prior.
inline std::pair<HmmParams, HdpParams> sample_hdp_hmm(RngHandle& rng,
                                                      const SimConfig& config) {
  config.validate();
  HdpParams hdp;
  hdp.M = config.M;
  hdp.alpha0 = config.alpha0;
  hdp.gamma = config.gamma;
  hdp.beta = dirichlet_sample(
      rng, Eigen::VectorXd::Constant(config.M,
                                     config.gamma / static_cast<double>(config.M)));
  HmmParams hmm;
  Eigen::VectorXd base = config.alpha0 * hdp.beta;
  hmm.P.resize(config.M, config.M);
  for (int i = 0; i < config.M; ++i) {
    hmm.P.row(i) = dirichlet_sample(rng, base).transpose();
  }
  hmm.pi = dirichlet_sample(rng, base);
  hmm.Lambda.resize(config.C, config.M);
  for (int c = 0; c < config.C; ++c) {
    for (int i = 0; i < config.M; ++i) {
      hmm.Lambda(c, i) =
          gamma_sample(rng, config.rate_prior.a, config.rate_prior.b);
    }
  }
  return {std::move(hmm), std::move(hdp)};
}

/// Ancestral simulation: chain first, then per-bin Poisson emissions.
inline std::pair<StateSequence, CountMatrix> simulate(RngHandle& rng,
                                                      const HmmParams& params,
                                                      int T,
                                                      double bin_width = 0.25) {
  if (T < 1) throw DomainError("T must be positive");
  const Eigen::Index M = params.n_states();
  const Eigen::Index C = params.n_cells();
  StateSequence seq(static_cast<std::size_t>(T));
  seq[0] = categorical_sample_unnormalized(rng, params.pi);
  for (int t = 1; t < T; ++t) {
    seq[static_cast<std::size_t>(t)] = categorical_sample_unnormalized(
        rng, params.P.row(seq[static_cast<std::size_t>(t - 1)]).transpose());
  }
  CountArray counts(C, T);
  for (int t = 0; t < T; ++t) {
    int s = seq[static_cast<std::size_t>(t)];
    for (Eigen::Index c = 0; c < C; ++c) {
      counts(c, t) = poisson_sample(rng, params.Lambda(c, s));
    }
  }
  (void)M;
  return {std::move(seq), CountMatrix(std::move(counts), bin_width)};
}

struct SpatialDataset {
  StateSequence seq;
  CountMatrix counts;
  PositionTrace positions;
  Eigen::MatrixXd state_centers;  // M x 2 Cartesian cm
};

/// Desk-scale spatial stand-in: each latent state gets a random center in
/// the disc, the position is the active state's center plus isotropic
/// jitter, reflected back inside the arena.
inline SpatialDataset simulate_spatial(RngHandle& rng, const HmmParams& params,
                                       int T, const SpatialConfig& spatial,
                                       double bin_width = 0.25) {
  const double R = spatial.arena_radius_cm;
  auto [seq, counts] = simulate(rng, params, T, bin_width);
  const Eigen::Index M = params.n_states();
  Eigen::MatrixXd centers(M, 2);
  for (Eigen::Index i = 0; i < M; ++i) {
    // uniform over the disc via the sqrt radius transform
    double r = R * std::sqrt(rng.uniform());
    double th = 2.0 * M_PI * rng.uniform() - M_PI;
    centers(i, 0) = r * std::cos(th);
    centers(i, 1) = r * std::sin(th);
  }
  std::vector<double> xs(static_cast<std::size_t>(T)),
      ys(static_cast<std::size_t>(T)), speeds(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    int s = seq[static_cast<std::size_t>(t)];
    double px = centers(s, 0) + spatial.jitter_cm * rng.normal();
    double py = centers(s, 1) + spatial.jitter_cm * rng.normal();
    double rr = std::hypot(px, py);
    if (rr > R) {  // reflective boundary
      double scale = (2.0 * R - rr) / rr;
      if (scale < 0.0) scale = 0.0;
      px *= scale;
      py *= scale;
    }
    xs[static_cast<std::size_t>(t)] = px;
    ys[static_cast<std::size_t>(t)] = py;
  }
  for (int t = 0; t < T; ++t) {
    if (t == 0) {
      speeds[0] = 0.0;
      continue;
    }
    double d = std::hypot(xs[static_cast<std::size_t>(t)] - xs[static_cast<std::size_t>(t - 1)],
                          ys[static_cast<std::size_t>(t)] - ys[static_cast<std::size_t>(t - 1)]);
    speeds[static_cast<std::size_t>(t)] = d / bin_width;
  }
  if (T > 1) speeds[0] = speeds[1];
  SpatialDataset out;
  out.seq = std::move(seq);
  out.counts = std::move(counts);
  out.positions = PositionTrace::from_xy(std::move(xs), std::move(ys),
                                         std::move(speeds));
  out.state_centers = std::move(centers);
  return out;
}

/// Adds an independent NB(mean, variance) draw to every entry. The draw is
/// generated as its gamma-Poisson mixture: rate ~ Gamma(r, b) with
/// r = mean^2/(variance - mean) and b = mean/(variance - mean).
inline CountMatrix inject_nb_noise(RngHandle& rng, const CountMatrix& counts,
                                   double mean, double variance) {
  if (!(variance > mean) || !(mean > 0.0)) {
    throw DomainError("NB noise requires variance > mean > 0");
  }
  double r = mean * mean / (variance - mean);
  double b = mean / (variance - mean);
  CountArray noisy = counts.counts;
  for (Eigen::Index c = 0; c < noisy.rows(); ++c) {
    for (Eigen::Index t = 0; t < noisy.cols(); ++t) {
      double lam = gamma_sample(rng, r, b);
      noisy(c, t) += poisson_sample(rng, lam);
    }
  }
  return CountMatrix(std::move(noisy), counts.bin_width, counts.cell_ids);
}

}  // namespace hdphmm
