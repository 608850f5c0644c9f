#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/count_data.hpp"
#include "hdphmm/distributions.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/hmm.hpp"
#include "hdphmm/rng.hpp"
#include "hdphmm/special.hpp"
#include "hdphmm/vb.hpp"

namespace hdphmm {

// ---------------------------------------------------------------------------
// Predictive likelihoods. All values drop the sum of log Gamma(y+1) terms,
// matching the homogeneous-Poisson baseline formula, so differences between
// models are constant-free.

inline Eigen::VectorXd baseline_rates(const CountMatrix& train) {
  return train.counts.cast<double>().rowwise().mean();
}

inline double baseline_predictive_ll(const CountMatrix& test,
                                     const Eigen::VectorXd& rates) {
  if (rates.size() != test.n_cells()) {
    throw ShapeMismatch("baseline rates must match cell count");
  }
  const double T_test = static_cast<double>(test.n_bins());
  double ll = 0.0;
  for (Eigen::Index c = 0; c < test.n_cells(); ++c) {
    double total = static_cast<double>(test.counts.row(c).sum());
    if (rates[c] == 0.0) {
      if (total > 0.0) return neg_inf;  // a test spike the baseline cannot emit
      continue;
    }
    ll += -T_test * rates[c] + total * std::log(rates[c]);
  }
  return ll;
}

namespace detail {

inline double lgamma_correction(const CountMatrix& counts) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
    for (Eigen::Index t = 0; t < counts.n_bins(); ++t) {
      s += std::lgamma(static_cast<double>(counts.counts(c, t)) + 1.0);
    }
  }
  return s;
}

inline double log_mean_exp(const std::vector<double>& xs) {
  Eigen::Map<const Eigen::VectorXd> v(xs.data(),
                                      static_cast<Eigen::Index>(xs.size()));
  return log_sum_exp(v) - std::log(static_cast<double>(xs.size()));
}

}  // namespace detail

/// log (1/N) sum_n p(y_test | theta_n) with the per-sample evidence from
/// exact message passing.
inline double predictive_ll_mcmc(const std::vector<HmmParams>& samples,
                                 const CountMatrix& test) {
  if (samples.empty()) throw DomainError("need at least one posterior sample");
  std::vector<double> evidences;
  evidences.reserve(samples.size());
  for (const auto& params : samples) {
    EmissionTable table = emission_logliks(test, params.Lambda);
    evidences.push_back(
        forward_messages(table, params.pi, params.P).log_evidence);
  }
  return detail::log_mean_exp(evidences) + detail::lgamma_correction(test);
}

/// Draws (Lambda, P, pi) from the variational factors; the overflow column
/// of each Dirichlet factor is dropped and the row renormalized. S_test is
/// marginalized exactly by the forward pass.
inline double predictive_ll_vb(const VariationalState& v, int n_draws,
                               RngHandle& rng, const CountMatrix& test) {
  if (n_draws < 1) throw DomainError("need at least one draw");
  const Eigen::Index M = v.n_states();
  const Eigen::Index C = v.rate_a.rows();
  if (C != test.n_cells()) throw ShapeMismatch("cell count mismatch");
  std::vector<double> evidences;
  evidences.reserve(static_cast<std::size_t>(n_draws));
  for (int n = 0; n < n_draws; ++n) {
    HmmParams params;
    params.Lambda.resize(C, M);
    for (Eigen::Index c = 0; c < C; ++c) {
      for (Eigen::Index i = 0; i < M; ++i) {
        params.Lambda(c, i) = gamma_sample(rng, v.rate_a(c, i), v.rate_b(c, i));
      }
    }
    params.P.resize(M, M);
    for (Eigen::Index i = 0; i < M; ++i) {
      Eigen::VectorXd row =
          dirichlet_sample(rng, v.trans_alpha.row(i).transpose());
      Eigen::VectorXd head = row.head(M);
      params.P.row(i) = (head / head.sum()).transpose();
    }
    Eigen::VectorXd pi = dirichlet_sample(rng, v.init_alpha);
    Eigen::VectorXd head = pi.head(M);
    params.pi = head / head.sum();
    EmissionTable table = emission_logliks(test, params.Lambda);
    evidences.push_back(
        forward_messages(table, params.pi, params.P).log_evidence);
  }
  return detail::log_mean_exp(evidences) + detail::lgamma_correction(test);
}

/// (model - baseline) / (ln 2 * total test spikes)
inline double bits_per_spike(double model_ll, double baseline_ll,
                             const CountMatrix& test) {
  long spikes = test.total_spikes();
  if (spikes < 1) throw NoSpikes("test data contains no spikes");
  return (model_ll - baseline_ll) / (std::log(2.0) * static_cast<double>(spikes));
}

// ---------------------------------------------------------------------------
// State alignment

struct StateMatch {
  std::vector<std::pair<int, int>> mapping;  // (true state, inferred state)
  Eigen::MatrixXd overlap;                   // K_true x K_inf shared-bin counts
};

/// Greedy overlap matching: repeatedly take the largest cell among
/// unmatched rows and columns (ties to the lower true index, then the lower
/// inferred index) until one side is exhausted.
inline StateMatch greedy_state_match(const StateSequence& true_seq,
                                     const StateSequence& inferred_seq) {
  if (true_seq.size() != inferred_seq.size()) {
    throw LengthMismatch("sequences must have equal length");
  }
  int k_true = true_seq.empty()
                   ? 0
                   : *std::max_element(true_seq.begin(), true_seq.end()) + 1;
  int k_inf = inferred_seq.empty()
                  ? 0
                  : *std::max_element(inferred_seq.begin(), inferred_seq.end()) + 1;
  StateMatch match;
  match.overlap = Eigen::MatrixXd::Zero(k_true, k_inf);
  for (std::size_t t = 0; t < true_seq.size(); ++t) {
    match.overlap(true_seq[t], inferred_seq[t]) += 1.0;
  }
  std::vector<bool> row_used(static_cast<std::size_t>(k_true), false);
  std::vector<bool> col_used(static_cast<std::size_t>(k_inf), false);
  int n_pairs = std::min(k_true, k_inf);
  for (int pair = 0; pair < n_pairs; ++pair) {
    double best = -1.0;
    int bi = -1, bj = -1;
    for (int i = 0; i < k_true; ++i) {
      if (row_used[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < k_inf; ++j) {
        if (col_used[static_cast<std::size_t>(j)]) continue;
        if (match.overlap(i, j) > best) {
          best = match.overlap(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    row_used[static_cast<std::size_t>(bi)] = true;
    col_used[static_cast<std::size_t>(bj)] = true;
    match.mapping.emplace_back(bi, bj);
  }
  return match;
}

/// Fraction of bins that land on a matched pair.
inline double matched_bin_fraction(const StateMatch& match, std::size_t T) {
  double covered = 0.0;
  for (const auto& [i, j] : match.mapping) covered += match.overlap(i, j);
  return T > 0 ? covered / static_cast<double>(T) : 0.0;
}

// ---------------------------------------------------------------------------
// Spatial structure

/// Polar grid with equal-area cells: radial edges r_k = R sqrt(k / K).
struct SpatialBinning {
  int n_angular = 11;
  int n_radial = 20;
  double arena_radius_cm = 60.0;

  int n_bins() const { return n_angular * n_radial; }

  int bin_index(double r, double theta) const {
    double u = r / arena_radius_cm;
    int k = static_cast<int>(std::floor(u * u * n_radial));
    if (k >= n_radial) k = n_radial - 1;
    if (k < 0) k = 0;
    double frac = (theta + M_PI) / (2.0 * M_PI);
    int a = static_cast<int>(std::floor(frac * n_angular));
    if (a >= n_angular) a = n_angular - 1;
    if (a < 0) a = 0;
    return k * n_angular + a;
  }

  double radial_edge(int k) const {
    return arena_radius_cm *
           std::sqrt(static_cast<double>(k) / static_cast<double>(n_radial));
  }
};

/// Per-state mean location and empirical location distribution, plus
/// occupancy. Only states with positive occupancy carry a mean.
struct StateLocationMap {
  Eigen::VectorXd mean_r;        // M; NaN where occupancy is 0
  Eigen::VectorXd mean_theta;    // M
  Eigen::MatrixXd location_dist; // M x n_bins, rows normalized where occupied
  Eigen::VectorXd occupancy;     // M soft bin counts
  SpatialBinning binning;

  bool covered(Eigen::Index i) const { return occupancy[i] > 0.0; }
};

/// Soft-weighted construction from state marginals; hard sequences pass a
/// one-hot matrix through the wrapper below.
inline StateLocationMap state_location_map(const Eigen::MatrixXd& marginals,
                                           const PositionTrace& pos,
                                           const SpatialBinning& binning) {
  if (static_cast<std::size_t>(marginals.rows()) != pos.size()) {
    throw LengthMismatch("marginals and positions must cover the same bins");
  }
  const Eigen::Index M = marginals.cols();
  StateLocationMap map;
  map.binning = binning;
  map.occupancy = marginals.colwise().sum().transpose();
  map.mean_r = Eigen::VectorXd::Constant(M, std::nan(""));
  map.mean_theta = Eigen::VectorXd::Constant(M, std::nan(""));
  map.location_dist = Eigen::MatrixXd::Zero(M, binning.n_bins());
  Eigen::VectorXd sum_r = Eigen::VectorXd::Zero(M);
  Eigen::VectorXd sum_theta = Eigen::VectorXd::Zero(M);
  for (std::size_t t = 0; t < pos.size(); ++t) {
    int cell = binning.bin_index(pos.r[t], pos.theta[t]);
    for (Eigen::Index i = 0; i < M; ++i) {
      double w = marginals(static_cast<Eigen::Index>(t), i);
      if (w <= 0.0) continue;
      sum_r[i] += w * pos.r[t];
      sum_theta[i] += w * pos.theta[t];
      map.location_dist(i, cell) += w;
    }
  }
  for (Eigen::Index i = 0; i < M; ++i) {
    if (map.occupancy[i] > 0.0) {
      map.mean_r[i] = sum_r[i] / map.occupancy[i];
      map.mean_theta[i] = sum_theta[i] / map.occupancy[i];
      map.location_dist.row(i) /= map.location_dist.row(i).sum();
    }
  }
  return map;
}

inline Eigen::MatrixXd one_hot_marginals(const StateSequence& seq, int M) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seq.size()), M);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    g(static_cast<Eigen::Index>(t), seq[t]) = 1.0;
  }
  return g;
}

inline StateLocationMap state_location_map(const StateSequence& seq, int M,
                                           const PositionTrace& pos,
                                           const SpatialBinning& binning) {
  return state_location_map(one_hot_marginals(seq, M), pos, binning);
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodedTrajectory {
  std::vector<double> r_hat;
  std::vector<double> theta_hat;
};

struct DecodeSummary {
  std::vector<double> err_cm;  // per bin Euclidean error
  double mean_cm = 0.0;
  double sd_cm = 0.0;
};

/// r^_t = sum_i rbar_i Pr(S_t = i), theta^_t likewise. The angular mean is
/// the plain weighted average as printed in the source equation; set
/// circular_mean to use the circular variant instead. Marginal mass on
/// states without a training location is renormalized away when it is below
/// max_uncovered_mass, otherwise the state is reported as uncovered.
inline DecodedTrajectory decode_positions(const Eigen::MatrixXd& marginals,
                                          const StateLocationMap& map,
                                          bool circular_mean = false,
                                          double max_uncovered_mass = 0.01) {
  const Eigen::Index T = marginals.rows();
  const Eigen::Index M = marginals.cols();
  if (map.mean_r.size() != M) {
    throw ShapeMismatch("location map does not match marginal states");
  }
  DecodedTrajectory out;
  out.r_hat.resize(static_cast<std::size_t>(T));
  out.theta_hat.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    double covered_mass = 0.0;
    for (Eigen::Index i = 0; i < M; ++i) {
      if (map.covered(i)) covered_mass += marginals(t, i);
    }
    if (covered_mass < 1.0 - max_uncovered_mass) {
      throw UncoveredState("test-time state mass on states with no training location");
    }
    double r = 0.0, th = 0.0, cs = 0.0, sn = 0.0;
    for (Eigen::Index i = 0; i < M; ++i) {
      if (!map.covered(i)) continue;
      double w = marginals(t, i) / covered_mass;
      r += w * map.mean_r[i];
      th += w * map.mean_theta[i];
      cs += w * std::cos(map.mean_theta[i]);
      sn += w * std::sin(map.mean_theta[i]);
    }
    out.r_hat[static_cast<std::size_t>(t)] = r;
    out.theta_hat[static_cast<std::size_t>(t)] =
        circular_mean ? std::atan2(sn, cs) : th;
  }
  return out;
}

/// Euclidean error after polar-to-Cartesian conversion, mean and sd.
inline DecodeSummary decode_error(const DecodedTrajectory& pred,
                                  const PositionTrace& truth) {
  if (pred.r_hat.size() != truth.size()) {
    throw LengthMismatch("prediction and truth must have equal length");
  }
  DecodeSummary s;
  s.err_cm.resize(truth.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    double px = pred.r_hat[t] * std::cos(pred.theta_hat[t]);
    double py = pred.r_hat[t] * std::sin(pred.theta_hat[t]);
    double tx = truth.r[t] * std::cos(truth.theta[t]);
    double ty = truth.r[t] * std::sin(truth.theta[t]);
    s.err_cm[t] = std::hypot(px - tx, py - ty);
    sum += s.err_cm[t];
  }
  s.mean_cm = sum / static_cast<double>(truth.size());
  double var = 0.0;
  for (double e : s.err_cm) var += (e - s.mean_cm) * (e - s.mean_cm);
  s.sd_cm = truth.size() > 1
                ? std::sqrt(var / static_cast<double>(truth.size() - 1))
                : 0.0;
  return s;
}

/// field(l) proportional to sum_i lambda_{c,i} Pr(S=i) p(l | S=i),
/// normalized over spatial bins.
inline Eigen::VectorXd place_field(const StateLocationMap& map,
                                   const Eigen::VectorXd& cell_rates,
                                   const Eigen::VectorXd& state_probs) {
  if (cell_rates.size() != map.mean_r.size() ||
      state_probs.size() != map.mean_r.size()) {
    throw ShapeMismatch("place_field: inconsistent dimensions");
  }
  Eigen::VectorXd field = Eigen::VectorXd::Zero(map.binning.n_bins());
  for (Eigen::Index i = 0; i < cell_rates.size(); ++i) {
    if (!map.covered(i)) continue;
    field += cell_rates[i] * state_probs[i] * map.location_dist.row(i).transpose();
  }
  double total = field.sum();
  if (total > 0.0) field /= total;
  return field;
}

// ---------------------------------------------------------------------------
// Mutual information

/// Discrete MI in bits from joint co-occurrence counts; 0 log 0 = 0.
inline double mutual_information_from_counts(const Eigen::MatrixXd& joint) {
  double total = joint.sum();
  if (!(total > 0.0)) return 0.0;
  Eigen::VectorXd pa = joint.rowwise().sum() / total;
  Eigen::VectorXd pb = joint.colwise().sum().transpose() / total;
  double mi = 0.0;
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    for (Eigen::Index j = 0; j < joint.cols(); ++j) {
      double p = joint(i, j) / total;
      if (p > 0.0) mi += p * std::log2(p / (pa[i] * pb[j]));
    }
  }
  return mi;
}

inline Eigen::MatrixXd state_location_joint(const StateSequence& seq,
                                            const PositionTrace& pos,
                                            const SpatialBinning& binning,
                                            int M) {
  if (seq.size() != pos.size()) {
    throw LengthMismatch("sequence and positions must have equal length");
  }
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(M, binning.n_bins());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    joint(seq[t], binning.bin_index(pos.r[t], pos.theta[t])) += 1.0;
  }
  return joint;
}

/// I(S; L) over the equal-area location bins.
inline double mutual_information(const StateSequence& seq,
                                 const PositionTrace& pos,
                                 const SpatialBinning& binning, int M) {
  return mutual_information_from_counts(
      state_location_joint(seq, pos, binning, M));
}

/// MI of the binary in-state-i indicator with location, one value per state.
inline Eigen::VectorXd per_state_information(const StateSequence& seq,
                                             const PositionTrace& pos,
                                             const SpatialBinning& binning,
                                             int M) {
  Eigen::MatrixXd joint = state_location_joint(seq, pos, binning, M);
  Eigen::VectorXd out(M);
  Eigen::RowVectorXd totals = joint.colwise().sum();
  for (Eigen::Index i = 0; i < M; ++i) {
    Eigen::MatrixXd binary(2, joint.cols());
    binary.row(0) = joint.row(i);
    binary.row(1) = totals - joint.row(i);
    out[i] = mutual_information_from_counts(binary);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shuffle controls

inline PositionTrace circular_shift(const PositionTrace& pos, std::size_t offset) {
  const std::size_t T = pos.size();
  PositionTrace out;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t s = (t + offset) % T;
    out.t_index.push_back(static_cast<long>(t));
    out.r.push_back(pos.r[s]);
    out.theta.push_back(pos.theta[s]);
    out.x.push_back(pos.x[s]);
    out.y.push_back(pos.y[s]);
    out.speed.push_back(pos.speed[s]);
  }
  return out;
}

/// Chance level for the decoding error: mean error against circularly
/// shifted positions, collected over n_shuffles random offsets; returns the
/// requested quantile of those means. The default 0.05 quantile is the
/// level below which the decoder beats 95% of the shuffles.
inline double decode_chance_level(const DecodedTrajectory& pred,
                                  const PositionTrace& truth, int n_shuffles,
                                  RngHandle& rng, double quantile = 0.05) {
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(n_shuffles));
  for (int s = 0; s < n_shuffles; ++s) {
    std::size_t offset =
        1 + static_cast<std::size_t>(rng.uniform() * (truth.size() - 1));
    means.push_back(decode_error(pred, circular_shift(truth, offset)).mean_cm);
  }
  std::sort(means.begin(), means.end());
  auto idx = static_cast<std::size_t>(quantile * (means.size() - 1));
  return means[idx];
}

/// Mean MI over circularly shifted positions (the independence reference).
inline double mi_shuffle_mean(const StateSequence& seq, const PositionTrace& pos,
                              const SpatialBinning& binning, int M,
                              int n_shuffles, RngHandle& rng) {
  double sum = 0.0;
  for (int s = 0; s < n_shuffles; ++s) {
    std::size_t offset =
        1 + static_cast<std::size_t>(rng.uniform() * (pos.size() - 1));
    sum += mutual_information(seq, circular_shift(pos, offset), binning, M);
  }
  return sum / static_cast<double>(n_shuffles);
}

}  // namespace hdphmm
