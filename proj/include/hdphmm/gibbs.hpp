#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/count_data.hpp"
#include "hdphmm/distributions.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/hmc.hpp"
#include "hdphmm/hmm.hpp"
#include "hdphmm/rng.hpp"

namespace hdphmm {

/// Weak-limit HDP layer: global stick weights plus the two concentrations.
struct HdpParams {
  Eigen::VectorXd beta;  // M, sums to 1
  double alpha0 = 4.0;
  double gamma = 8.0;
  int M = 1;

  void validate() const {
    if (M < 1 || beta.size() != M) throw ShapeMismatch("bad HDP truncation");
    if (std::fabs(beta.sum() - 1.0) > 1e-9 || (beta.array() <= 0.0).any()) {
      throw DomainError("beta must be a positive probability vector");
    }
    if (!(alpha0 > 0.0) || !(gamma > 0.0)) {
      throw DomainError("concentrations must be positive");
    }
  }
};

/// Transition counts, state occupancies, and per-state summed counts for
/// one sampled sequence.
struct SufficientStats {
  Eigen::MatrixXd n;        // M x M, n(i, j) = #{t : S_t = i, S_{t+1} = j}
  Eigen::VectorXd occ;      // M, #{t : S_t = i}
  Eigen::MatrixXd cellsum;  // C x M, sum_t y_{c,t} [S_t = i]
  int first_state = 0;
};

inline SufficientStats sufficient_stats(const StateSequence& seq,
                                        const CountMatrix& counts, int M) {
  if (seq.size() != static_cast<std::size_t>(counts.n_bins())) {
    throw LengthMismatch("sequence length must match bin count");
  }
  SufficientStats s;
  s.n = Eigen::MatrixXd::Zero(M, M);
  s.occ = Eigen::VectorXd::Zero(M);
  s.cellsum = Eigen::MatrixXd::Zero(counts.n_cells(), M);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    int i = seq[t];
    s.occ[i] += 1.0;
    s.cellsum.col(i) += counts.counts.col(static_cast<Eigen::Index>(t)).cast<double>();
    if (t + 1 < seq.size()) s.n(i, seq[t + 1]) += 1.0;
  }
  s.first_state = seq.front();
  return s;
}

struct GibbsState {
  HmmParams hmm;
  HdpParams hdp;
  StateSequence seq;
  std::vector<GammaHyper> hypers;  // one per cell
  long iteration = 0;
};

struct TraceRecord {
  long iter = 0;
  double loglik = 0.0;    // log p(y | pi, P, Lambda) via forward messages
  double log_joint = 0.0; // log p(y, S, params) including prior terms
  int n_states = 0;
  int n_states_95 = 0;
  double alpha0 = 0.0;
  double gamma = 0.0;
};

struct ChainTrace {
  std::vector<TraceRecord> records;
  std::vector<GibbsState> snapshots;  // last n_snapshots states
};

enum class HyperMode { hmc, eb, fixed };

struct ConcentrationPrior {
  double a = 1.0;
  double b = 1.0;
};

struct GibbsConfig {
  int M = 80;
  int n_iters = 300;
  HyperMode hyper_mode = HyperMode::hmc;
  GammaHyper rate_prior{1.0, 1.0};  // init for hmc, value for fixed
  ConcentrationPrior alpha0_prior{1.0, 1.0};
  ConcentrationPrior gamma_prior{8.0, 1.0};
  HmcConfig hmc;
  int n_snapshots = 50;
  int init_max_states = 25;

  void validate() const {
    if (M < 1) throw DomainError("truncation level must be >= 1");
    if (n_iters < 0) throw DomainError("n_iters must be >= 0");
    if (n_snapshots < 0) throw DomainError("n_snapshots must be >= 0");
    rate_prior.validate();
  }
};

struct FiniteHmmConfig {
  int m = 2;
  int n_iters = 300;
  HyperMode hyper_mode = HyperMode::hmc;
  GammaHyper rate_prior{1.0, 1.0};
  double alpha0 = 1.0;  // symmetric Dirichlet concentration per entry
  HmcConfig hmc;
  int n_snapshots = 50;

  void validate() const {
    if (m < 1) throw DomainError("state count must be >= 1");
    if (n_iters < 0) throw DomainError("n_iters must be >= 0");
    if (!(alpha0 > 0.0)) throw DomainError("alpha0 must be positive");
    rate_prior.validate();
  }
};

// ---------------------------------------------------------------------------
// Conjugate updates

/// lambda_{c,i} ~ Gamma(a_c + cellsum(c,i), b_c + occ(i)); unoccupied states
/// fall back to the prior automatically.
inline Eigen::MatrixXd resample_rates(RngHandle& rng,
                                      const SufficientStats& stats,
                                      const std::vector<GammaHyper>& hypers) {
  const Eigen::Index C = stats.cellsum.rows();
  const Eigen::Index M = stats.cellsum.cols();
  Eigen::MatrixXd Lambda(C, M);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index i = 0; i < M; ++i) {
      Lambda(c, i) = gamma_sample(rng, hypers[c].a + stats.cellsum(c, i),
                                  hypers[c].b + stats.occ[i]);
    }
  }
  return Lambda;
}

/// P_i ~ Dir(alpha0 beta + n_i), pi ~ Dir(alpha0 beta + 1_{S_1}).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> resample_transitions(
    RngHandle& rng, const SufficientStats& stats, const HdpParams& hdp) {
  const Eigen::Index M = hdp.beta.size();
  Eigen::MatrixXd P(M, M);
  Eigen::VectorXd base = hdp.alpha0 * hdp.beta;
  for (Eigen::Index i = 0; i < M; ++i) {
    Eigen::VectorXd alpha = base + stats.n.row(i).transpose();
    P.row(i) = dirichlet_sample(rng, alpha).transpose();
  }
  Eigen::VectorXd pia = base;
  pia[stats.first_state] += 1.0;
  return {dirichlet_sample(rng, pia), std::move(P)};
}

inline StateSequence resample_states(RngHandle& rng, const CountMatrix& counts,
                                     const HmmParams& hmm) {
  EmissionTable table = emission_logliks(counts, hmm.Lambda);
  ForwardResult fwd = forward_messages(table, hmm.pi, hmm.P);
  return backward_sample(rng, fwd.log_alpha, hmm.P);
}

/// Chinese-restaurant auxiliary table counts for one cell:
/// m = sum_{k=1..n} Bernoulli(w / (w + k - 1)); the first customer always
/// opens a table.
inline long crt_sample(RngHandle& rng, long n, double w) {
  long m = 0;
  for (long k = 1; k <= n; ++k) {
    double p = w / (w + static_cast<double>(k - 1));
    if (rng.uniform() < p) ++m;
  }
  return m;
}

/// Auxiliary-table update for the global stick weights. Returns the new
/// beta and the table count matrix m (needed by the concentration update).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> resample_beta(
    RngHandle& rng, const SufficientStats& stats, const HdpParams& hdp) {
  const Eigen::Index M = hdp.beta.size();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(M, M);
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index j = 0; j < M; ++j) {
      long n_ij = static_cast<long>(stats.n(i, j));
      if (n_ij > 0) {
        m(i, j) = static_cast<double>(
            crt_sample(rng, n_ij, hdp.alpha0 * hdp.beta[j]));
      }
    }
  }
  Eigen::VectorXd alpha =
      Eigen::VectorXd::Constant(M, hdp.gamma / static_cast<double>(M)) +
      m.colwise().sum().transpose();
  return {dirichlet_sample(rng, alpha), std::move(m)};
}

/// Standard auxiliary-variable resampling of the DP concentrations: per
/// restaurant a beta and a Bernoulli variable for alpha0 (Teh et al.'s
/// scheme), the Escobar-West mixture for the top-level gamma. With no
/// customers/tables the draws reduce to the priors.
inline std::pair<double, double> resample_concentrations(
    RngHandle& rng, const HdpParams& hdp, const SufficientStats& stats,
    const Eigen::MatrixXd& tables, const ConcentrationPrior& alpha0_prior,
    const ConcentrationPrior& gamma_prior) {
  const Eigen::Index M = stats.n.rows();
  double total_tables = tables.sum();

  double alpha0 = hdp.alpha0;
  {
    double sum_log_w = 0.0;
    double sum_s = 0.0;
    bool any_group = false;
    for (Eigen::Index i = 0; i < M; ++i) {
      double n_i = stats.n.row(i).sum();
      if (n_i < 1.0) continue;
      any_group = true;
      double w = beta_sample(rng, alpha0 + 1.0, n_i);
      sum_log_w += std::log(w);
      if (rng.uniform() < n_i / (n_i + alpha0)) sum_s += 1.0;
    }
    double shape = alpha0_prior.a + (any_group ? total_tables - sum_s : 0.0);
    double rate = alpha0_prior.b - sum_log_w;
    if (shape <= 0.0) shape = alpha0_prior.a;  // all customers vetoed
    alpha0 = gamma_sample(rng, shape, rate);
  }

  double gamma_conc = hdp.gamma;
  {
    double K = 0.0;
    for (Eigen::Index j = 0; j < M; ++j) {
      if (tables.col(j).sum() > 0.0) K += 1.0;
    }
    if (total_tables < 1.0) {
      gamma_conc = gamma_sample(rng, gamma_prior.a, gamma_prior.b);
    } else {
      double eta = beta_sample(rng, gamma_conc + 1.0, total_tables);
      double A = gamma_prior.a + K - 1.0;
      double B = gamma_prior.b - std::log(eta);
      double odds = A / (total_tables * B);
      if (rng.uniform() < odds / (1.0 + odds)) {
        gamma_conc = gamma_sample(rng, A + 1.0, B);
      } else {
        gamma_conc = gamma_sample(rng, A, B);
      }
    }
  }
  return {alpha0, gamma_conc};
}

// ---------------------------------------------------------------------------
// Log joint for traces and symmetry checks

inline double log_joint(const GibbsState& state, const CountMatrix& counts,
                        const ConcentrationPrior& alpha0_prior,
                        const ConcentrationPrior& gamma_prior) {
  const auto& hmm = state.hmm;
  const auto& hdp = state.hdp;
  const Eigen::Index M = hdp.beta.size();
  double lp = 0.0;
  lp += gamma_logpdf(hdp.alpha0, alpha0_prior.a, alpha0_prior.b);
  lp += gamma_logpdf(hdp.gamma, gamma_prior.a, gamma_prior.b);
  lp += dirichlet_logpdf(
      hdp.beta, Eigen::VectorXd::Constant(M, hdp.gamma / static_cast<double>(M)));
  Eigen::VectorXd base = hdp.alpha0 * hdp.beta;
  lp += dirichlet_logpdf(hmm.pi, base);
  for (Eigen::Index i = 0; i < M; ++i) {
    lp += dirichlet_logpdf(hmm.P.row(i).transpose(), base);
  }
  for (Eigen::Index c = 0; c < hmm.Lambda.rows(); ++c) {
    for (Eigen::Index i = 0; i < M; ++i) {
      lp += gamma_logpdf(hmm.Lambda(c, i), state.hypers[c].a,
                         state.hypers[c].b);
    }
  }
  lp += std::log(hmm.pi[state.seq.front()]);
  for (std::size_t t = 0; t + 1 < state.seq.size(); ++t) {
    lp += std::log(hmm.P(state.seq[t], state.seq[t + 1]));
  }
  for (std::size_t t = 0; t < state.seq.size(); ++t) {
    for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
      lp += poisson_logpmf(counts.counts(c, static_cast<Eigen::Index>(t)),
                           hmm.Lambda(c, state.seq[t]));
    }
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Sweeps and chain drivers

namespace detail {

inline void resample_rate_hypers_hmc(RngHandle& rng, GibbsState& state,
                                     const HmcConfig& config) {
  const Eigen::Index C = state.hmm.Lambda.rows();
  for (Eigen::Index c = 0; c < C; ++c) {
    Eigen::VectorXd rates = state.hmm.Lambda.row(c).transpose();
    HmcTarget target{
        [&rates](const Eigen::VectorXd& q) {
          return hyper_logpdf(Eigen::Vector2d(q[0], q[1]), rates);
        },
        [&rates](const Eigen::VectorXd& q) -> Eigen::VectorXd {
          return hyper_grad(Eigen::Vector2d(q[0], q[1]), rates);
        }};
    Eigen::VectorXd pos(2);
    pos << std::log(state.hypers[c].a), std::log(state.hypers[c].b);
    HmcResult res = hmc_step(rng, target, pos, config);
    state.hypers[c].a = std::exp(res.position[0]);
    state.hypers[c].b = std::exp(res.position[1]);
  }
}

inline TraceRecord make_record(const GibbsState& state,
                               const CountMatrix& counts,
                               const ConcentrationPrior& ap,
                               const ConcentrationPrior& gp, bool hdp_mode) {
  TraceRecord rec;
  rec.iter = state.iteration;
  EmissionTable table = emission_logliks(counts, state.hmm.Lambda);
  rec.loglik = forward_messages(table, state.hmm.pi, state.hmm.P).log_evidence;
  rec.log_joint = hdp_mode ? log_joint(state, counts, ap, gp) : 0.0;
  rec.n_states = state_count(state.seq);
  rec.n_states_95 = coverage_state_count(state.seq, state.hdp.M, 0.95);
  rec.alpha0 = state.hdp.alpha0;
  rec.gamma = state.hdp.gamma;
  return rec;
}

}  // namespace detail

/// Draws (Lambda, pi, P) from their conditionals given the current sequence.
inline void gibbs_parameter_updates(RngHandle& rng, GibbsState& state,
                                    const CountMatrix& counts) {
  SufficientStats stats = sufficient_stats(state.seq, counts, state.hdp.M);
  state.hmm.Lambda = resample_rates(rng, stats, state.hypers);
  auto [pi, P] = resample_transitions(rng, stats, state.hdp);
  state.hmm.pi = std::move(pi);
  state.hmm.P = std::move(P);
}

/// One full HDP sweep: states, rates, transitions, stick weights,
/// concentrations, then (in HMC mode) the rate hyperparameters.
inline void hdp_sweep(RngHandle& rng, GibbsState& state,
                      const CountMatrix& counts, const GibbsConfig& config) {
  state.seq = resample_states(rng, counts, state.hmm);
  SufficientStats stats = sufficient_stats(state.seq, counts, state.hdp.M);
  state.hmm.Lambda = resample_rates(rng, stats, state.hypers);
  auto [pi, P] = resample_transitions(rng, stats, state.hdp);
  state.hmm.pi = std::move(pi);
  state.hmm.P = std::move(P);
  auto [beta, tables] = resample_beta(rng, stats, state.hdp);
  state.hdp.beta = std::move(beta);
  auto [a0, g0] = resample_concentrations(rng, state.hdp, stats, tables,
                                          config.alpha0_prior,
                                          config.gamma_prior);
  state.hdp.alpha0 = a0;
  state.hdp.gamma = g0;
  if (config.hyper_mode == HyperMode::hmc) {
    detail::resample_rate_hypers_hmc(rng, state, config.hmc);
  }
  ++state.iteration;
}

/// Finite-HMM sweep (Eq.-2 priors): no stick weights or concentration
/// moves, symmetric Dirichlet rows.
inline void finite_sweep(RngHandle& rng, GibbsState& state,
                         const CountMatrix& counts,
                         const FiniteHmmConfig& config) {
  state.seq = resample_states(rng, counts, state.hmm);
  SufficientStats stats = sufficient_stats(state.seq, counts, config.m);
  state.hmm.Lambda = resample_rates(rng, stats, state.hypers);
  const Eigen::Index m = config.m;
  Eigen::VectorXd base = Eigen::VectorXd::Constant(m, config.alpha0);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::VectorXd alpha = base + stats.n.row(i).transpose();
    state.hmm.P.row(i) = dirichlet_sample(rng, alpha).transpose();
  }
  Eigen::VectorXd pia = base;
  pia[stats.first_state] += 1.0;
  state.hmm.pi = dirichlet_sample(rng, pia);
  if (config.hyper_mode == HyperMode::hmc) {
    detail::resample_rate_hypers_hmc(rng, state, config.hmc);
  }
  ++state.iteration;
}

inline std::vector<GammaHyper> init_hypers(const CountMatrix& counts,
                                           HyperMode mode,
                                           const GammaHyper& rate_prior) {
  std::vector<GammaHyper> hypers;
  for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
    if (mode == HyperMode::eb) {
      hypers.push_back(eb_fit(counts.counts.row(c).transpose()));
    } else {
      hypers.push_back(rate_prior);
    }
  }
  return hypers;
}

/// Random-state initialization: states uniform over a bounded prefix of the
/// truncation, then one conditional parameter draw so the initial states
/// seed the first sweep.
inline GibbsState init_hdp_state(RngHandle& rng, const CountMatrix& counts,
                                 const GibbsConfig& config) {
  GibbsState state;
  state.hdp.M = config.M;
  state.hdp.beta =
      Eigen::VectorXd::Constant(config.M, 1.0 / static_cast<double>(config.M));
  state.hdp.alpha0 =
      gamma_sample(rng, config.alpha0_prior.a, config.alpha0_prior.b);
  state.hdp.gamma = gamma_sample(rng, config.gamma_prior.a, config.gamma_prior.b);
  state.hypers = init_hypers(counts, config.hyper_mode, config.rate_prior);
  int k = std::min(config.M, config.init_max_states);
  state.seq.resize(static_cast<std::size_t>(counts.n_bins()));
  for (auto& s : state.seq) {
    s = static_cast<int>(rng.uniform() * k);
    if (s >= k) s = k - 1;
  }
  state.hmm.Lambda.resize(counts.n_cells(), config.M);
  state.hmm.P.resize(config.M, config.M);
  gibbs_parameter_updates(rng, state, counts);
  return state;
}

inline GibbsState init_finite_state(RngHandle& rng, const CountMatrix& counts,
                                    const FiniteHmmConfig& config) {
  GibbsState state;
  state.hdp.M = config.m;
  state.hdp.beta =
      Eigen::VectorXd::Constant(config.m, 1.0 / static_cast<double>(config.m));
  state.hdp.alpha0 = config.alpha0;
  state.hdp.gamma = 1.0;  // unused in the finite model
  state.hypers = init_hypers(counts, config.hyper_mode, config.rate_prior);
  int k = std::min(config.m, 25);
  state.seq.resize(static_cast<std::size_t>(counts.n_bins()));
  for (auto& s : state.seq) {
    s = static_cast<int>(rng.uniform() * k);
    if (s >= k) s = k - 1;
  }
  SufficientStats stats = sufficient_stats(state.seq, counts, config.m);
  state.hmm.Lambda = resample_rates(rng, stats, state.hypers);
  state.hmm.P.resize(config.m, config.m);
  Eigen::VectorXd base = Eigen::VectorXd::Constant(config.m, config.alpha0);
  for (Eigen::Index i = 0; i < config.m; ++i) {
    state.hmm.P.row(i) =
        dirichlet_sample(rng, Eigen::VectorXd(base + stats.n.row(i).transpose()))
            .transpose();
  }
  Eigen::VectorXd pia = base;
  pia[stats.first_state] += 1.0;
  state.hmm.pi = dirichlet_sample(rng, pia);
  return state;
}

inline ChainTrace run_chain(RngHandle& rng, const CountMatrix& counts,
                            const GibbsConfig& config) {
  config.validate();
  ChainTrace trace;
  GibbsState state = init_hdp_state(rng, counts, config);
  for (int it = 0; it < config.n_iters; ++it) {
    hdp_sweep(rng, state, counts, config);
    trace.records.push_back(detail::make_record(
        state, counts, config.alpha0_prior, config.gamma_prior, true));
    if (config.n_iters - it <= config.n_snapshots) {
      trace.snapshots.push_back(state);
    }
  }
  return trace;
}

inline ChainTrace run_finite_hmm_chain(RngHandle& rng,
                                       const CountMatrix& counts,
                                       const FiniteHmmConfig& config) {
  config.validate();
  ChainTrace trace;
  GibbsState state = init_finite_state(rng, counts, config);
  ConcentrationPrior unused;
  for (int it = 0; it < config.n_iters; ++it) {
    finite_sweep(rng, state, counts, config);
    trace.records.push_back(
        detail::make_record(state, counts, unused, unused, false));
    if (config.n_iters - it <= config.n_snapshots) {
      trace.snapshots.push_back(state);
    }
  }
  return trace;
}

}  // namespace hdphmm
