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
#include "hdphmm/special.hpp"

namespace hdphmm {

struct VbConfig {
  int M = 80;
  int n_iters = 100;
  double alpha0 = 4.0;
  double gamma_conc = 8.0;
  bool finite = false;  // finite HMM: Dir(alpha0 * 1) rows, no beta_star
  std::vector<GammaHyper> hypers;  // per cell; empty -> empirical Bayes
  std::uint64_t seed = 0;          // drives the clustering initialization
  int init_clusters = 25;
  int beta_star_block_rounds = 50;  // (rows, beta*) alternations per sweep

  void validate() const {
    if (M < 1 || n_iters < 0) throw DomainError("invalid VB configuration");
    if (!(alpha0 > 0.0) || !(gamma_conc > 0.0)) {
      throw DomainError("concentrations must be positive");
    }
  }
};

/// Mean-field factors under the direct-assignment truncation. Dirichlet
/// factors carry M+1 dimensions, the last accounting for all states beyond
/// the truncation; the finite variant drops that column and the stick
/// point estimate.
struct VariationalState {
  Eigen::MatrixXd rate_a;       // C x M gamma shape parameters
  Eigen::MatrixXd rate_b;       // C x M gamma rate parameters
  Eigen::MatrixXd trans_alpha;  // M x (M+1), finite: M x M
  Eigen::VectorXd init_alpha;   // M+1, finite: M
  Eigen::VectorXd beta_star;    // M+1 point estimate; finite: uniform M
  Eigen::MatrixXd gamma;        // T x M state marginals
  std::vector<Eigen::MatrixXd> xi;  // T-1 pairwise marginals, M x M
  double state_entropy = 0.0;       // H[q(S)]
  bool finite = false;

  Eigen::Index n_states() const { return rate_a.cols(); }
};

/// exp{E_q[ln .]} surrogate HMM; stored in log space since the rows are
/// sub-normalized and all downstream message passing is logarithmic.
struct SurrogateHmm {
  Eigen::VectorXd log_pi;  // M
  Eigen::MatrixXd log_P;   // M x M
  EmissionTable loglik;    // T x M expected emission log densities
};

// ---------------------------------------------------------------------------
// Coordinate updates

/// a~ = a0 + sum_t y_{c,t} gamma(t,i);  b~ = b0 + sum_t gamma(t,i)
inline void update_rate_factors(VariationalState& v, const CountMatrix& counts,
                                const std::vector<GammaHyper>& hypers) {
  const Eigen::Index C = counts.n_cells();
  const Eigen::Index M = v.gamma.cols();
  v.rate_a = counts.counts.cast<double>() * v.gamma;  // C x M
  Eigen::RowVectorXd occ = v.gamma.colwise().sum();
  v.rate_b.resize(C, M);
  for (Eigen::Index c = 0; c < C; ++c) {
    v.rate_a.row(c).array() += hypers[c].a;
    v.rate_b.row(c) = occ.array() + hypers[c].b;
  }
}

namespace detail {

inline Eigen::VectorXd dirichlet_expected_log(
    const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  double total = digamma(alpha.sum());
  Eigen::VectorXd out(alpha.size());
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    out[j] = digamma(alpha[j]) - total;
  }
  return out;
}

}  // namespace detail

inline SurrogateHmm build_surrogate(const VariationalState& v,
                                    const CountMatrix& counts) {
  const Eigen::Index M = v.n_states();
  const Eigen::Index C = counts.n_cells();
  const Eigen::Index T = counts.n_bins();
  SurrogateHmm s;
  s.log_pi = detail::dirichlet_expected_log(v.init_alpha).head(M);
  s.log_P.resize(M, M);
  for (Eigen::Index i = 0; i < M; ++i) {
    s.log_P.row(i) =
        detail::dirichlet_expected_log(v.trans_alpha.row(i).transpose())
            .head(M)
            .transpose();
  }
  // E[ln lambda] = Psi(a~) - ln b~ and E[lambda] = a~/b~ feed the Poisson
  // expected log density.
  Eigen::MatrixXd e_log_lam(C, M);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index i = 0; i < M; ++i) {
      e_log_lam(c, i) = digamma(v.rate_a(c, i)) - std::log(v.rate_b(c, i));
    }
  }
  Eigen::MatrixXd e_lam = v.rate_a.cwiseQuotient(v.rate_b);
  s.loglik = counts.counts.cast<double>().transpose() * e_log_lam;
  s.loglik.rowwise() -= e_lam.colwise().sum();
  for (Eigen::Index t = 0; t < T; ++t) {
    double lg = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      lg += std::lgamma(static_cast<double>(counts.counts(c, t)) + 1.0);
    }
    s.loglik.row(t).array() -= lg;
  }
  return s;
}

/// Runs smoothed message passing on the surrogate and refreshes the state
/// marginals. The factor entropy comes from the forward log normalizer:
/// H[q(S)] = ln Z~ - E_q[ln p~(S)].
inline void update_state_factor(VariationalState& v, const SurrogateHmm& s) {
  SmoothedMarginals sm =
      detail::smoothed_marginals_log(s.log_pi, s.log_P, s.loglik);
  double energy = (sm.gamma.array() * s.loglik.array()).sum();
  energy += sm.gamma.row(0).dot(s.log_pi);
  for (const auto& slice : sm.xi) {
    energy += (slice.array() * s.log_P.array()).sum();
  }
  v.gamma = std::move(sm.gamma);
  v.xi = std::move(sm.xi);
  v.state_entropy = sm.log_evidence - energy;
}

namespace detail {

inline Eigen::MatrixXd expected_transition_counts(const VariationalState& v) {
  const Eigen::Index M = v.gamma.cols();
  Eigen::MatrixXd xi_sum = Eigen::MatrixXd::Zero(M, M);
  for (const auto& slice : v.xi) xi_sum += slice;
  return xi_sum;
}

inline void set_transition_factors(VariationalState& v, double alpha0,
                                   const Eigen::MatrixXd& xi_sum) {
  const Eigen::Index M = v.gamma.cols();
  if (v.finite) {
    v.trans_alpha = Eigen::MatrixXd::Constant(M, M, alpha0) + xi_sum;
    v.init_alpha =
        Eigen::VectorXd::Constant(M, alpha0) + v.gamma.row(0).transpose();
    return;
  }
  Eigen::RowVectorXd prior = (alpha0 * v.beta_star).transpose();
  v.trans_alpha = prior.replicate(M, 1);
  v.trans_alpha.leftCols(M) += xi_sum;
  v.init_alpha = alpha0 * v.beta_star;
  v.init_alpha.head(M) += v.gamma.row(0).transpose();
}

}  // namespace detail

/// (alpha~_P^(i))_j = alpha0 beta*_j + sum_t xi(t,i,j), overflow column kept
/// at its prior value; the initial-state factor uses the one-step marginal.
inline void update_transition_factors(VariationalState& v, double alpha0) {
  detail::set_transition_factors(v, alpha0, detail::expected_transition_counts(v));
}

namespace detail {

/// beta*-dependent ELBO terms: the truncated stick prior plus the expected
/// Dirichlet priors of the transition and initial-state rows. The prior is
/// the symmetric Dirichlet with concentration 1 + gamma/(M+1): a point
/// estimate of beta needs a density that is bounded on the simplex, and
/// sub-unit weak-limit atoms gamma/(M+1) would send the objective to
/// infinity as unused sticks shrink toward the boundary.
inline double beta_star_logprior(const Eigen::VectorXd& beta,
                                 double gamma_conc) {
  const Eigen::Index D = beta.size();
  double c = 1.0 + gamma_conc / static_cast<double>(D);
  return std::lgamma(static_cast<double>(D) * c) -
         static_cast<double>(D) * std::lgamma(c) +
         (c - 1.0) * beta.array().log().sum();
}

inline double beta_star_objective(const Eigen::VectorXd& beta, double alpha0,
                                  double gamma_conc,
                                  const std::vector<Eigen::VectorXd>& row_elogs) {
  const Eigen::Index D = beta.size();
  double f = beta_star_logprior(beta, gamma_conc);
  for (const auto& elog : row_elogs) {
    f += std::lgamma(alpha0);
    for (Eigen::Index j = 0; j < D; ++j) {
      double ab = alpha0 * beta[j];
      f += -std::lgamma(ab) + (ab - 1.0) * elog[j];
    }
  }
  return f;
}

inline Eigen::VectorXd beta_star_gradient(
    const Eigen::VectorXd& beta, double alpha0, double gamma_conc,
    const std::vector<Eigen::VectorXd>& row_elogs) {
  const Eigen::Index D = beta.size();
  double c = 1.0 + gamma_conc / static_cast<double>(D);
  Eigen::VectorXd grad = (c - 1.0) * beta.cwiseInverse();
  for (const auto& elog : row_elogs) {
    for (Eigen::Index j = 0; j < D; ++j) {
      grad[j] += alpha0 * (elog[j] - digamma(alpha0 * beta[j]));
    }
  }
  return grad;
}

}  // namespace detail

namespace detail {

inline std::vector<Eigen::VectorXd> factor_row_elogs(const VariationalState& v) {
  std::vector<Eigen::VectorXd> row_elogs;
  row_elogs.reserve(static_cast<std::size_t>(v.trans_alpha.rows()) + 1);
  for (Eigen::Index i = 0; i < v.trans_alpha.rows(); ++i) {
    row_elogs.push_back(
        dirichlet_expected_log(v.trans_alpha.row(i).transpose()));
  }
  row_elogs.push_back(dirichlet_expected_log(v.init_alpha));
  return row_elogs;
}

/// Exponentiated-gradient ascent steps on beta* with backtracking halving,
/// run until the accepted improvement vanishes or the step budget is spent.
/// The step size is scale-free across stick weights spanning many decades
/// (plain simplex projection crawls there) and persists across calls via
/// step_memory so later calls resume at the productive scale.
inline double ascend_beta_star(VariationalState& v, double alpha0,
                               double gamma_conc,
                               const std::vector<Eigen::VectorXd>& row_elogs,
                               double& step_memory, int max_steps) {
  double f = beta_star_objective(v.beta_star, alpha0, gamma_conc, row_elogs);
  for (int s = 0; s < max_steps; ++s) {
    Eigen::VectorXd grad =
        beta_star_gradient(v.beta_star, alpha0, gamma_conc, row_elogs);
    double gbar = v.beta_star.dot(grad);
    Eigen::VectorXd dir = grad.array() - gbar;
    double dmax = dir.cwiseAbs().maxCoeff();
    if (!(dmax > 1e-14)) break;  // stationary point

    double step = std::min(2.0 * step_memory, 4.0 / dmax);
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving) {
      Eigen::VectorXd cand = v.beta_star.array() * (step * dir).array().exp();
      double total = cand.sum();
      if (total > 0.0 && cand.allFinite()) {
        cand /= total;
        if ((cand.array() > 0.0).all()) {
          double f1 = beta_star_objective(cand, alpha0, gamma_conc, row_elogs);
          if (f1 >= f) {
            v.beta_star = std::move(cand);
            step_memory = step;
            accepted = true;
            if (f1 - f < 1e-13) return f1;  // converged
            f = f1;
            break;
          }
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search stalled, current point stands
  }
  return f;
}

}  // namespace detail

/// One beta* ascent step (line-searched; the objective never decreases and
/// a stalled search keeps the old point).
inline double update_beta_star(VariationalState& v, double alpha0,
                               double gamma_conc) {
  if (v.finite) return 0.0;
  auto row_elogs = detail::factor_row_elogs(v);
  double step_memory = 1.0;
  return detail::ascend_beta_star(v, alpha0, gamma_conc, row_elogs,
                                  step_memory, 1);
}

// ---------------------------------------------------------------------------
// Evidence lower bound

namespace detail {

inline double gamma_entropy(double a, double b) {
  return a - std::log(b) + std::lgamma(a) + (1.0 - a) * digamma(a);
}

inline double dirichlet_entropy(const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  double a0 = alpha.sum();
  double h = -std::lgamma(a0) +
             (a0 - static_cast<double>(alpha.size())) * digamma(a0);
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    h += std::lgamma(alpha[j]) - (alpha[j] - 1.0) * digamma(alpha[j]);
  }
  return h;
}

/// Entropy of the Markov chain with the given marginals; equals the
/// normalizer-based value whenever the marginals came from message passing.
inline double markov_chain_entropy(const Eigen::MatrixXd& gamma,
                                   const std::vector<Eigen::MatrixXd>& xi) {
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  double h = 0.0;
  for (Eigen::Index i = 0; i < gamma.cols(); ++i) h -= xlogx(gamma(0, i));
  for (std::size_t t = 0; t < xi.size(); ++t) {
    for (Eigen::Index i = 0; i < xi[t].rows(); ++i) {
      double gi = gamma(static_cast<Eigen::Index>(t), i);
      if (gi <= 0.0) continue;
      for (Eigen::Index j = 0; j < xi[t].cols(); ++j) {
        double x = xi[t](i, j);
        if (x > 0.0) h -= x * std::log(x / gi);
      }
    }
  }
  return h;
}

}  // namespace detail

/// Mean-field lower bound E_q[ln joint] - E_q[ln q]. beta* enters through
/// its prior density and the row-prior cross terms only.
inline double elbo(const VariationalState& v, const CountMatrix& counts,
                   const std::vector<GammaHyper>& hypers, double alpha0,
                   double gamma_conc) {
  const Eigen::Index M = v.n_states();
  SurrogateHmm s = build_surrogate(v, counts);

  double bound = (v.gamma.array() * s.loglik.array()).sum();
  bound += v.gamma.row(0).dot(s.log_pi);
  Eigen::MatrixXd xi_sum = Eigen::MatrixXd::Zero(M, M);
  for (const auto& slice : v.xi) xi_sum += slice;
  bound += (xi_sum.array() * s.log_P.array()).sum();
  bound += v.state_entropy;

  for (Eigen::Index c = 0; c < v.rate_a.rows(); ++c) {
    const double a0 = hypers[c].a;
    const double b0 = hypers[c].b;
    for (Eigen::Index i = 0; i < M; ++i) {
      double e_log = digamma(v.rate_a(c, i)) - std::log(v.rate_b(c, i));
      double e_lam = v.rate_a(c, i) / v.rate_b(c, i);
      bound += a0 * std::log(b0) - std::lgamma(a0) + (a0 - 1.0) * e_log -
               b0 * e_lam;
      bound += detail::gamma_entropy(v.rate_a(c, i), v.rate_b(c, i));
    }
  }

  const Eigen::Index D = v.finite ? M : M + 1;
  Eigen::VectorXd prior_alpha =
      v.finite ? Eigen::VectorXd::Constant(M, alpha0)
               : Eigen::VectorXd(alpha0 * v.beta_star);
  auto row_terms = [&](const Eigen::VectorXd& alpha) {
    Eigen::VectorXd elog = detail::dirichlet_expected_log(alpha);
    double term = std::lgamma(prior_alpha.sum());
    for (Eigen::Index j = 0; j < D; ++j) {
      term += -std::lgamma(prior_alpha[j]) + (prior_alpha[j] - 1.0) * elog[j];
    }
    return term + detail::dirichlet_entropy(alpha);
  };
  for (Eigen::Index i = 0; i < M; ++i) {
    bound += row_terms(v.trans_alpha.row(i).transpose());
  }
  bound += row_terms(v.init_alpha);

  if (!v.finite) {
    bound += detail::beta_star_logprior(v.beta_star, gamma_conc);
  }
  return bound;
}

// ---------------------------------------------------------------------------
// Initialization and the coordinate ascent driver

namespace detail {

/// Per-bin soft clustering of count vectors under per-cluster Poisson
/// rates; uniform initialization collapses to one state, so the marginals
/// start from a few clustering passes instead. Clusters that lose all their
/// responsibility are dropped along the way.
inline Eigen::MatrixXd cluster_init_marginals(const CountMatrix& counts, int M,
                                              int k, std::uint64_t seed) {
  const Eigen::Index T = counts.n_bins();
  const Eigen::Index C = counts.n_cells();
  k = std::min<int>(std::min<int>(k, static_cast<int>(T)), M);
  RngHandle rng(seed, 0xc1u);
  Eigen::MatrixXd Y = counts.counts.cast<double>();
  Eigen::MatrixXd rates(C, k);
  for (int j = 0; j < k; ++j) {
    auto t = static_cast<Eigen::Index>(rng.uniform() * T);
    if (t >= T) t = T - 1;
    rates.col(j) = Y.col(t).array() + 0.5;
  }
  Eigen::MatrixXd resp(T, k);
  for (int pass = 0; pass < 25; ++pass) {
    Eigen::MatrixXd logw = Y.transpose() * rates.array().log().matrix();
    logw.rowwise() -= rates.colwise().sum();
    for (Eigen::Index t = 0; t < T; ++t) {
      double lse = log_sum_exp(logw.row(t).transpose());
      resp.row(t) = (logw.row(t).array() - lse).exp();
    }
    std::vector<int> alive;
    for (int j = 0; j < k; ++j) {
      if (resp.col(j).sum() > 2.0) alive.push_back(j);
    }
    if (static_cast<int>(alive.size()) < k && !alive.empty()) {
      Eigen::MatrixXd kept(C, static_cast<Eigen::Index>(alive.size()));
      for (std::size_t a = 0; a < alive.size(); ++a) {
        kept.col(static_cast<Eigen::Index>(a)) = rates.col(alive[a]);
      }
      rates = std::move(kept);
      k = static_cast<int>(alive.size());
      resp.resize(T, k);
      continue;
    }
    for (int j = 0; j < k; ++j) {
      double w = resp.col(j).sum();
      rates.col(j) = ((Y * resp.col(j)).array() + 0.5) / (w + 0.1);
    }
  }
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Constant(
      T, M, 1e-6 / static_cast<double>(M));
  gamma.leftCols(k) += (1.0 - 1e-6) * resp;
  for (Eigen::Index t = 0; t < T; ++t) gamma.row(t) /= gamma.row(t).sum();
  return gamma;
}

}  // namespace detail

struct VbResult {
  VariationalState state;
  std::vector<double> elbo_trace;
};

/// Coordinate ascent in the fixed order state factor, rate factors,
/// transition factors, beta*. The bound is recorded every sweep and must
/// never decrease by more than the tolerance; a violation indicates an
/// implementation bug and aborts.
inline VbResult run_vb(const CountMatrix& counts, const VbConfig& config) {
  config.validate();
  const Eigen::Index T = counts.n_bins();
  const Eigen::Index M = config.M;

  std::vector<GammaHyper> hypers = config.hypers;
  if (hypers.empty()) {
    for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
      hypers.push_back(eb_fit(counts.counts.row(c).transpose()));
    }
  }

  VariationalState v;
  v.finite = config.finite;
  v.gamma = detail::cluster_init_marginals(
      counts, static_cast<int>(M), config.init_clusters, config.seed);
  v.xi.clear();
  v.xi.reserve(static_cast<std::size_t>(T - 1));
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    v.xi.push_back(v.gamma.row(t).transpose() * v.gamma.row(t + 1));
  }
  v.state_entropy = detail::markov_chain_entropy(v.gamma, v.xi);
  v.beta_star = Eigen::VectorXd::Constant(
      config.finite ? M : M + 1,
      1.0 / static_cast<double>(config.finite ? M : M + 1));
  update_rate_factors(v, counts, hypers);
  update_transition_factors(v, config.alpha0);

  VbResult out;
  double prev = elbo(v, counts, hypers, config.alpha0, config.gamma_conc);
  out.elbo_trace.push_back(prev);
  double step_memory = 1e-3;
  for (int it = 0; it < config.n_iters; ++it) {
    SurrogateHmm s = build_surrogate(v, counts);
    update_state_factor(v, s);
    update_rate_factors(v, counts, hypers);
    Eigen::MatrixXd xi_sum = detail::expected_transition_counts(v);
    detail::set_transition_factors(v, config.alpha0, xi_sum);
    if (!config.finite) {
      // alternate the Dirichlet rows and beta* to their joint optimum; a
      // fixed small number of gradient steps leaves this pair crawling down
      // a long valley and the bound never settles
      double block_prev = -std::numeric_limits<double>::infinity();
      for (int round = 0; round < config.beta_star_block_rounds; ++round) {
        auto row_elogs = detail::factor_row_elogs(v);
        double f = detail::ascend_beta_star(v, config.alpha0, config.gamma_conc,
                                            row_elogs, step_memory, 300);
        detail::set_transition_factors(v, config.alpha0, xi_sum);
        if (f - block_prev < 1e-12) break;
        block_prev = f;
      }
    }
    double cur = elbo(v, counts, hypers, config.alpha0, config.gamma_conc);
    if (cur < prev - 1e-8) {
      throw MonotonicityViolation("ELBO decreased by " +
                                  std::to_string(prev - cur) + " at sweep " +
                                  std::to_string(it));
    }
    out.elbo_trace.push_back(cur);
    prev = cur;
  }
  out.state = std::move(v);
  return out;
}

/// Per-bin argmax of the smoothed marginals (the most likely state sequence
/// in the marginal sense).
inline StateSequence map_state_sequence(const VariationalState& v) {
  StateSequence seq(static_cast<std::size_t>(v.gamma.rows()));
  for (Eigen::Index t = 0; t < v.gamma.rows(); ++t) {
    Eigen::Index best = 0;
    v.gamma.row(t).maxCoeff(&best);
    seq[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return seq;
}

}  // namespace hdphmm
