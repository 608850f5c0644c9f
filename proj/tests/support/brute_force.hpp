#pragma once

// Exhaustive-enumeration oracles for small HMM instances. Everything here is
// independent of the message-passing implementation it checks: joint path
// probabilities are accumulated directly in linear space over all M^T paths.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/count_data.hpp"
#include "hdphmm/hmm.hpp"

namespace oracle {

struct Enumeration {
  double log_evidence = 0.0;
  Eigen::MatrixXd gamma;                    // T x M smoothed marginals
  std::vector<Eigen::MatrixXd> xi;          // T-1 pairwise marginals
  std::vector<double> path_logprob;         // M^T entries, posterior-unnormalized
};

inline Enumeration enumerate_paths(const hdphmm::EmissionTable& table,
                                   const Eigen::VectorXd& pi,
                                   const Eigen::MatrixXd& P) {
  const Eigen::Index T = table.rows();
  const Eigen::Index M = table.cols();
  long n_paths = 1;
  for (Eigen::Index t = 0; t < T; ++t) n_paths *= M;

  Enumeration out;
  out.path_logprob.resize(static_cast<std::size_t>(n_paths));
  double max_lp = -std::numeric_limits<double>::infinity();
  std::vector<int> path(static_cast<std::size_t>(T));
  for (long code = 0; code < n_paths; ++code) {
    long rem = code;
    for (Eigen::Index t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rem % M);
      rem /= M;
    }
    double lp = std::log(pi[path[0]]) + table(0, path[0]);
    for (Eigen::Index t = 1; t < T; ++t) {
      lp += std::log(P(path[static_cast<std::size_t>(t - 1)],
                       path[static_cast<std::size_t>(t)]));
      lp += table(t, path[static_cast<std::size_t>(t)]);
    }
    out.path_logprob[static_cast<std::size_t>(code)] = lp;
    if (lp > max_lp) max_lp = lp;
  }
  double total = 0.0;
  for (double lp : out.path_logprob) total += std::exp(lp - max_lp);
  out.log_evidence = max_lp + std::log(total);

  out.gamma = Eigen::MatrixXd::Zero(T, M);
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    out.xi.push_back(Eigen::MatrixXd::Zero(M, M));
  }
  for (long code = 0; code < n_paths; ++code) {
    double w = std::exp(out.path_logprob[static_cast<std::size_t>(code)] -
                        out.log_evidence);
    long rem = code;
    for (Eigen::Index t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rem % M);
      rem /= M;
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      out.gamma(t, path[static_cast<std::size_t>(t)]) += w;
    }
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      out.xi[static_cast<std::size_t>(t)](path[static_cast<std::size_t>(t)],
                                          path[static_cast<std::size_t>(t + 1)]) += w;
    }
  }
  return out;
}

/// Exact probability of each full path under the posterior, indexed by the
/// mixed-radix code used above.
inline std::vector<double> exact_path_posterior(const Enumeration& e) {
  std::vector<double> post(e.path_logprob.size());
  for (std::size_t i = 0; i < post.size(); ++i) {
    post[i] = std::exp(e.path_logprob[i] - e.log_evidence);
  }
  return post;
}

inline long path_code(const hdphmm::StateSequence& seq, Eigen::Index M) {
  long code = 0;
  for (std::size_t t = seq.size(); t-- > 0;) {
    code = code * M + seq[t];
  }
  return code;
}

/// Conjugate marginal evidence ln p(y | beta*, alpha0, hypers) for the
/// truncated model with Dirichlet rows over M+1 dimensions: parameters are
/// integrated out in closed form (Polya urns for pi and P, gamma-Poisson
/// for the rates) and the latent sequences enumerated. Includes all
/// log Gamma(y+1) terms.
inline double exact_marginal_evidence(const hdphmm::CountMatrix& counts,
                                      const Eigen::VectorXd& beta_star,
                                      double alpha0,
                                      const std::vector<hdphmm::GammaHyper>& hypers,
                                      Eigen::Index M) {
  const Eigen::Index T = counts.n_bins();
  const Eigen::Index C = counts.n_cells();
  long n_paths = 1;
  for (Eigen::Index t = 0; t < T; ++t) n_paths *= M;
  std::vector<int> path(static_cast<std::size_t>(T));
  std::vector<double> lps;
  lps.reserve(static_cast<std::size_t>(n_paths));
  for (long code = 0; code < n_paths; ++code) {
    long rem = code;
    for (Eigen::Index t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rem % M);
      rem /= M;
    }
    // E[pi_{S_1}] under Dir(alpha0 beta*)
    double lp = std::log(beta_star[path[0]]);
    // Polya urn per transition row
    Eigen::MatrixXd n = Eigen::MatrixXd::Zero(M, M);
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      n(path[static_cast<std::size_t>(t)], path[static_cast<std::size_t>(t + 1)]) += 1.0;
    }
    for (Eigen::Index i = 0; i < M; ++i) {
      double row_total = n.row(i).sum();
      lp += std::lgamma(alpha0) - std::lgamma(alpha0 + row_total);
      for (Eigen::Index j = 0; j < M; ++j) {
        double ab = alpha0 * beta_star[j];
        lp += std::lgamma(ab + n(i, j)) - std::lgamma(ab);
      }
    }
    // gamma-Poisson marginal per cell and state
    Eigen::VectorXd occ = Eigen::VectorXd::Zero(M);
    for (int s : path) occ[s] += 1.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::VectorXd s_ci = Eigen::VectorXd::Zero(M);
      for (Eigen::Index t = 0; t < T; ++t) {
        s_ci[path[static_cast<std::size_t>(t)]] +=
            static_cast<double>(counts.counts(c, t));
      }
      const double a = hypers[static_cast<std::size_t>(c)].a;
      const double b = hypers[static_cast<std::size_t>(c)].b;
      for (Eigen::Index i = 0; i < M; ++i) {
        if (occ[i] == 0.0) continue;
        lp += std::lgamma(a + s_ci[i]) - std::lgamma(a) + a * std::log(b) -
              (a + s_ci[i]) * std::log(b + occ[i]);
      }
      for (Eigen::Index t = 0; t < T; ++t) {
        lp -= std::lgamma(static_cast<double>(counts.counts(c, t)) + 1.0);
      }
    }
    lps.push_back(lp);
  }
  double m = *std::max_element(lps.begin(), lps.end());
  double sum = 0.0;
  for (double lp : lps) sum += std::exp(lp - m);
  return m + std::log(sum);
}

}  // namespace oracle
