#pragma once

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/count_data.hpp"
#include "hdphmm/distributions.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/rng.hpp"
#include "hdphmm/special.hpp"

namespace hdphmm {

using StateSequence = std::vector<int>;

/// Initial distribution, row-stochastic transition matrix, and the C x M
/// panel of per-cell per-state Poisson rates.
struct HmmParams {
  Eigen::VectorXd pi;      // M
  Eigen::MatrixXd P;       // M x M, rows sum to 1
  Eigen::MatrixXd Lambda;  // C x M, nonnegative

  Eigen::Index n_states() const { return pi.size(); }
  Eigen::Index n_cells() const { return Lambda.rows(); }

  void validate() const {
    if (P.rows() != P.cols() || P.rows() != pi.size() ||
        Lambda.cols() != pi.size()) {
      throw ShapeMismatch("inconsistent HMM parameter shapes");
    }
    if (std::fabs(pi.sum() - 1.0) > 1e-9) {
      throw DomainError("pi must sum to 1");
    }
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      if (std::fabs(P.row(i).sum() - 1.0) > 1e-9) {
        throw DomainError("transition rows must sum to 1");
      }
    }
    if ((Lambda.array() < 0.0).any()) {
      throw DomainError("rates must be nonnegative");
    }
  }
};

/// T x M table of per-bin emission log likelihoods,
/// entry (t, i) = sum_c log Poisson(y_{c,t} | Lambda(c, i)).
using EmissionTable = Eigen::MatrixXd;

inline EmissionTable emission_logliks(const CountMatrix& counts,
                                      const Eigen::MatrixXd& Lambda) {
  if (Lambda.rows() != counts.n_cells()) {
    throw ShapeMismatch("rate panel rows must match cell count");
  }
  const Eigen::Index T = counts.n_bins();
  const Eigen::Index M = Lambda.cols();
  Eigen::VectorXd lgamma_terms(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
      s += std::lgamma(static_cast<double>(counts.counts(c, t)) + 1.0);
    }
    lgamma_terms[t] = s;
  }
  if ((Lambda.array() > 0.0).all()) {
    // table = Y^T log(Lambda) - 1 * colsum(Lambda) - lgamma row terms
    Eigen::MatrixXd logL = Lambda.array().log().matrix();
    EmissionTable table =
        counts.counts.cast<double>().transpose() * logL;
    table.rowwise() -= Lambda.colwise().sum();
    table.colwise() -= lgamma_terms;
    return table;
  }
  // zero rates present: 0 * log 0 must contribute 0, positive counts -inf
  EmissionTable table(T, M);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < M; ++i) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
        long y = counts.counts(c, t);
        double lam = Lambda(c, i);
        if (lam == 0.0) {
          if (y != 0) {
            s = neg_inf;
            break;
          }
        } else {
          s += static_cast<double>(y) * std::log(lam) - lam;
        }
      }
      table(t, i) = s == neg_inf ? neg_inf : s - lgamma_terms[t];
    }
  }
  return table;
}

struct ForwardResult {
  Eigen::MatrixXd log_alpha;  // T x M, log p(y_{1:t}, S_t = i)
  double log_evidence = 0.0;  // log p(y_{1:T})
};

namespace detail {

/// Forward recursion on (log pi, log P, emission table). Accepts
/// sub-normalized rows (exp of expected logs), so the variational surrogate
/// can reuse it unchanged. Max-shift scaling keeps every step exact in
/// log space.
inline ForwardResult forward_messages_log(const Eigen::VectorXd& log_pi,
                                          const Eigen::MatrixXd& log_P,
                                          const EmissionTable& table) {
  const Eigen::Index T = table.rows();
  const Eigen::Index M = table.cols();
  if (log_pi.size() != M || log_P.rows() != M || log_P.cols() != M) {
    throw ShapeMismatch("forward_messages: inconsistent shapes");
  }
  Eigen::MatrixXd expP = log_P.array().exp().matrix();
  ForwardResult res;
  res.log_alpha.resize(T, M);
  res.log_alpha.row(0) = (log_pi + table.row(0).transpose()).transpose();
  for (Eigen::Index t = 1; t < T; ++t) {
    double m = res.log_alpha.row(t - 1).maxCoeff();
    if (!std::isfinite(m)) {
      throw NumericalError("forward pass hit an all-impossible time step");
    }
    Eigen::RowVectorXd w =
        shifted_exp(res.log_alpha.row(t - 1).transpose(), m).transpose();
    Eigen::RowVectorXd mix = w * expP;
    res.log_alpha.row(t) =
        table.row(t).array() + (mix.array().log() + m);
  }
  res.log_evidence = log_sum_exp(res.log_alpha.row(T - 1).transpose());
  if (std::isnan(res.log_evidence)) {
    throw NumericalError("forward evidence is NaN");
  }
  return res;
}

inline Eigen::MatrixXd backward_messages_log(const Eigen::MatrixXd& log_P,
                                             const EmissionTable& table) {
  const Eigen::Index T = table.rows();
  const Eigen::Index M = table.cols();
  Eigen::MatrixXd expP = log_P.array().exp().matrix();
  Eigen::MatrixXd log_beta = Eigen::MatrixXd::Zero(T, M);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    Eigen::VectorXd b =
        (table.row(t + 1) + log_beta.row(t + 1)).transpose();
    double m = b.maxCoeff();
    if (!std::isfinite(m)) {
      throw NumericalError("backward pass hit an all-impossible time step");
    }
    Eigen::VectorXd v = shifted_exp(b, m);
    log_beta.row(t) = ((expP * v).array().log() + m).transpose();
  }
  return log_beta;
}

}  // namespace detail

inline ForwardResult forward_messages(const EmissionTable& table,
                                      const Eigen::VectorXd& pi,
                                      const Eigen::MatrixXd& P) {
  return detail::forward_messages_log(pi.array().log().matrix(),
                                      P.array().log().matrix(), table);
}

/// Exact joint draw from p(S | y, pi, P, Lambda) given forward messages:
/// sample S_T from the filtered marginal, then go backward with
/// p(S_t = i | S_{t+1} = j) proportional to exp(log_alpha[t, i]) P(i, j).
inline StateSequence backward_sample(RngHandle& rng,
                                     const Eigen::MatrixXd& log_alpha,
                                     const Eigen::MatrixXd& P) {
  const Eigen::Index T = log_alpha.rows();
  const Eigen::Index M = log_alpha.cols();
  StateSequence seq(static_cast<std::size_t>(T));
  Eigen::VectorXd w(M);
  {
    double m = log_alpha.row(T - 1).maxCoeff();
    if (!std::isfinite(m)) {
      throw NumericalError("backward_sample: all states impossible at T");
    }
    w = shifted_exp(log_alpha.row(T - 1).transpose(), m);
    seq[static_cast<std::size_t>(T - 1)] = categorical_sample_unnormalized(rng, w);
  }
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    int next = seq[static_cast<std::size_t>(t + 1)];
    double m = log_alpha.row(t).maxCoeff();
    if (!std::isfinite(m)) {
      throw NumericalError("backward_sample: all states impossible");
    }
    w = shifted_exp(log_alpha.row(t).transpose(), m);
    w.array() *= P.col(next).array();
    seq[static_cast<std::size_t>(t)] = categorical_sample_unnormalized(rng, w);
  }
  return seq;
}

struct SmoothedMarginals {
  Eigen::MatrixXd gamma;              // T x M, p(S_t = i | y)
  std::vector<Eigen::MatrixXd> xi;    // T-1 slices, p(S_t=i, S_{t+1}=j | y)
  double log_evidence = 0.0;
};

namespace detail {

inline SmoothedMarginals smoothed_marginals_log(const Eigen::VectorXd& log_pi,
                                                const Eigen::MatrixXd& log_P,
                                                const EmissionTable& table) {
  const Eigen::Index T = table.rows();
  const Eigen::Index M = table.cols();
  ForwardResult fwd = forward_messages_log(log_pi, log_P, table);
  Eigen::MatrixXd log_beta = backward_messages_log(log_P, table);
  Eigen::MatrixXd expP = log_P.array().exp().matrix();

  SmoothedMarginals out;
  out.log_evidence = fwd.log_evidence;
  out.gamma.resize(T, M);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::VectorXd lg = (fwd.log_alpha.row(t) + log_beta.row(t)).transpose();
    double m = lg.maxCoeff();
    Eigen::VectorXd g = shifted_exp(lg, m);
    double s = g.sum();
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw NumericalError("smoothed marginals: degenerate time step");
    }
    out.gamma.row(t) = (g / s).transpose();
  }
  out.xi.reserve(static_cast<std::size_t>(T > 0 ? T - 1 : 0));
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    double ma = fwd.log_alpha.row(t).maxCoeff();
    Eigen::VectorXd a = shifted_exp(fwd.log_alpha.row(t).transpose(), ma);
    Eigen::VectorXd brow =
        (table.row(t + 1) + log_beta.row(t + 1)).transpose();
    double mb = brow.maxCoeff();
    Eigen::VectorXd b = shifted_exp(brow, mb);
    Eigen::MatrixXd slice =
        (a * b.transpose()).cwiseProduct(expP);
    double s = slice.sum();
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw NumericalError("smoothed marginals: degenerate transition step");
    }
    out.xi.push_back(slice / s);
  }
  return out;
}

}  // namespace detail

inline SmoothedMarginals smoothed_marginals(const EmissionTable& table,
                                            const Eigen::VectorXd& pi,
                                            const Eigen::MatrixXd& P) {
  return detail::smoothed_marginals_log(pi.array().log().matrix(),
                                        P.array().log().matrix(), table);
}

inline int state_count(const StateSequence& seq) {
  std::set<int> used(seq.begin(), seq.end());
  return static_cast<int>(used.size());
}

inline Eigen::VectorXd occupancy(const StateSequence& seq, Eigen::Index M) {
  Eigen::VectorXd occ = Eigen::VectorXd::Zero(M);
  for (int s : seq) {
    if (s < 0 || s >= M) throw RangeError("state index out of range");
    occ[s] += 1.0;
  }
  return occ;
}

/// Smallest number of states, taken in decreasing occupancy order, whose
/// bins cover at least the given fraction of the sequence.
inline int coverage_state_count(const StateSequence& seq, Eigen::Index M,
                                double fraction = 0.95) {
  if (seq.empty()) return 0;
  Eigen::VectorXd occ = occupancy(seq, M);
  std::vector<double> sorted(occ.data(), occ.data() + occ.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double target = fraction * static_cast<double>(seq.size());
  double cum = 0.0;
  int k = 0;
  for (double v : sorted) {
    if (cum >= target) break;
    cum += v;
    ++k;
  }
  return k;
}

}  // namespace hdphmm
