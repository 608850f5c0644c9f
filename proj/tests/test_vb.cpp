#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hdphmm/special.hpp"
#include "hdphmm/synthesis.hpp"
#include "hdphmm/vb.hpp"
#include "support/brute_force.hpp"

using namespace hdphmm;
using Catch::Approx;

namespace {

CountMatrix tiny_counts(std::uint64_t seed, int C, int T, double rate) {
  RngHandle rng(seed, 5);
  CountArray y(C, T);
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < T; ++t) y(c, t) = poisson_sample(rng, rate);
  }
  return CountMatrix(y);
}

VariationalState fresh_state(int T, int M, bool finite = false) {
  VariationalState v;
  v.finite = finite;
  v.gamma = Eigen::MatrixXd::Constant(T, M, 1.0 / M);
  for (int t = 0; t + 1 < T; ++t) {
    v.xi.push_back(Eigen::MatrixXd::Constant(M, M, 1.0 / (M * M)));
  }
  int D = finite ? M : M + 1;
  v.beta_star = Eigen::VectorXd::Constant(D, 1.0 / D);
  v.trans_alpha = Eigen::MatrixXd::Ones(M, D);
  v.init_alpha = Eigen::VectorXd::Ones(D);
  v.state_entropy = 0.0;
  return v;
}

}  // namespace

TEST_CASE("rate factor updates are conjugate", "[vb]") {
  // all marginal mass on state 0, one cell with 5 spikes over T = 2
  CountArray y(1, 2);
  y << 2, 3;
  CountMatrix counts(y);
  VariationalState v = fresh_state(2, 2);
  v.gamma << 1.0, 0.0, 1.0, 0.0;
  std::vector<GammaHyper> hypers{GammaHyper{1.0, 1.0}};
  update_rate_factors(v, counts, hypers);
  CHECK(v.rate_a(0, 0) == Approx(6.0));
  CHECK(v.rate_b(0, 0) == Approx(3.0));
  CHECK(v.rate_a(0, 1) == Approx(1.0));
  CHECK(v.rate_b(0, 1) == Approx(1.0));

  // uniform marginals split the mass evenly
  v.gamma << 0.5, 0.5, 0.5, 0.5;
  update_rate_factors(v, counts, hypers);
  CHECK(v.rate_a(0, 0) == Approx(1.0 + 2.5));
  CHECK(v.rate_a(0, 1) == Approx(1.0 + 2.5));
  CHECK(v.rate_b(0, 0) == Approx(1.0 + 1.0));
}

TEST_CASE("rate factors reproduce Gibbs parameters for hard assignments",
          "[vb][oracle]") {
  RngHandle rng(60);
  CountMatrix counts = tiny_counts(61, 2, 12, 2.0);
  StateSequence seq;
  for (int t = 0; t < 12; ++t) {
    seq.push_back(static_cast<int>(rng.uniform() * 3));
  }
  VariationalState v = fresh_state(12, 3);
  v.gamma.setZero();
  for (int t = 0; t < 12; ++t) v.gamma(t, seq[static_cast<std::size_t>(t)]) = 1.0;
  std::vector<GammaHyper> hypers{GammaHyper{1.5, 0.5}, GammaHyper{2.0, 1.0}};
  update_rate_factors(v, counts, hypers);

  SufficientStats stats = sufficient_stats(seq, counts, 3);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 3; ++i) {
      CHECK(v.rate_a(c, i) ==
            Approx(hypers[static_cast<std::size_t>(c)].a + stats.cellsum(c, i))
                .margin(1e-12));
      CHECK(v.rate_b(c, i) ==
            Approx(hypers[static_cast<std::size_t>(c)].b + stats.occ[i])
                .margin(1e-12));
    }
  }
}

TEST_CASE("surrogate expected logs", "[vb]") {
  // Dir(1,1): exp(E[ln p]) entries are exp(Psi(1) - Psi(2)) = e^{-1}
  Eigen::VectorXd alpha(2);
  alpha << 1.0, 1.0;
  Eigen::VectorXd elog = hdphmm::detail::dirichlet_expected_log(alpha);
  CHECK(std::exp(elog[0]) == Approx(std::exp(-1.0)).margin(1e-10));
  CHECK(std::exp(elog[0]) + std::exp(elog[1]) ==
        Approx(2.0 * std::exp(-1.0)).margin(1e-10));
  CHECK(std::exp(elog[0]) + std::exp(elog[1]) < 1.0);

  Eigen::VectorXd big(2);
  big << 1e6, 1e6;
  Eigen::VectorXd elog_big = hdphmm::detail::dirichlet_expected_log(big);
  CHECK(std::exp(elog_big[0]) == Approx(0.5).margin(1e-3));
}

TEST_CASE("surrogate P rows are sub-normalized", "[vb][property]") {
  RngHandle rng(62);
  CountMatrix counts = tiny_counts(63, 2, 8, 2.0);
  VariationalState v = fresh_state(8, 3);
  v.trans_alpha = Eigen::MatrixXd::Ones(3, 4) * 1.7;
  v.trans_alpha(0, 1) = 4.0;
  v.rate_a = Eigen::MatrixXd::Ones(2, 3) * 3.0;
  v.rate_b = Eigen::MatrixXd::Ones(2, 3) * 1.5;
  SurrogateHmm s = build_surrogate(v, counts);
  for (int i = 0; i < 3; ++i) {
    double row_sum = s.log_P.row(i).array().exp().sum();
    CHECK(row_sum > 0.0);
    CHECK(row_sum <= 1.0);
  }
}

TEST_CASE("surrogate approaches the exact likelihood in the point-mass limit",
          "[vb][oracle]") {
  CountMatrix counts = tiny_counts(64, 2, 6, 3.0);
  Eigen::MatrixXd lambda(2, 2);
  lambda << 2.0, 5.0, 4.0, 1.0;
  VariationalState v = fresh_state(6, 2);
  double scale = 1e7;  // a~/b~ fixed at lambda with vanishing variance
  v.rate_a = lambda * scale;
  v.rate_b = Eigen::MatrixXd::Constant(2, 2, scale);
  SurrogateHmm s = build_surrogate(v, counts);
  EmissionTable exact = emission_logliks(counts, lambda);
  for (int t = 0; t < 6; ++t) {
    for (int i = 0; i < 2; ++i) {
      CHECK(s.loglik(t, i) == Approx(exact(t, i)).margin(1e-3));
    }
  }
}

TEST_CASE("transition factor updates", "[vb]") {
  VariationalState v = fresh_state(3, 2);
  v.beta_star << 0.5, 0.3, 0.2;
  v.gamma << 1.0, 0.0, 0.0, 1.0, 1.0, 0.0;
  v.xi.clear();
  Eigen::MatrixXd x1(2, 2), x2(2, 2);
  x1 << 0.0, 1.0, 0.0, 0.0;  // hard transition 0 -> 1
  x2 << 0.0, 0.0, 1.0, 0.0;  // hard transition 1 -> 0
  v.xi.push_back(x1);
  v.xi.push_back(x2);
  update_transition_factors(v, 2.0);
  CHECK(v.trans_alpha(0, 0) == Approx(2.0 * 0.5));
  CHECK(v.trans_alpha(0, 1) == Approx(2.0 * 0.3 + 1.0));
  CHECK(v.trans_alpha(0, 2) == Approx(2.0 * 0.2));  // overflow column
  CHECK(v.trans_alpha(1, 0) == Approx(2.0 * 0.5 + 1.0));
  CHECK(v.init_alpha[0] == Approx(2.0 * 0.5 + 1.0));
  CHECK(v.init_alpha[2] == Approx(2.0 * 0.2));

  // zero expected transitions leave the prior untouched
  VariationalState v0 = fresh_state(3, 2);
  v0.beta_star << 0.5, 0.3, 0.2;
  for (auto& slice : v0.xi) slice.setZero();
  v0.gamma.row(0).setZero();
  update_transition_factors(v0, 2.0);
  CHECK(v0.trans_alpha(1, 1) == Approx(0.6));

  // the data part of row i sums to the expected occupancy over t < T-1
  VariationalState vr = fresh_state(5, 3);
  RngHandle rng(65);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd g = dirichlet_sample(rng, Eigen::VectorXd::Ones(3));
    vr.gamma.row(t) = g.transpose();
  }
  vr.xi.clear();
  for (int t = 0; t + 1 < 5; ++t) {
    Eigen::MatrixXd slice = vr.gamma.row(t).transpose() * vr.gamma.row(t + 1);
    vr.xi.push_back(slice);
  }
  update_transition_factors(vr, 1.5);
  for (int i = 0; i < 3; ++i) {
    double data_part = 0.0;
    for (int j = 0; j < 3; ++j) {
      data_part += vr.trans_alpha(i, j) - 1.5 * vr.beta_star[j];
    }
    double occ = vr.gamma.col(i).head(4).sum();
    CHECK(data_part == Approx(occ).margin(1e-9));
  }
}

TEST_CASE("beta* ascent honors the line-search contract", "[vb][property]") {
  RngHandle rng(66);
  for (int rep = 0; rep < 100; ++rep) {
    int M = 2 + static_cast<int>(rng.uniform() * 3);
    VariationalState v = fresh_state(4, M);
    for (int i = 0; i < M; ++i) {
      for (int j = 0; j < M + 1; ++j) {
        v.trans_alpha(i, j) = 0.2 + 5.0 * rng.uniform();
      }
    }
    for (int j = 0; j < M + 1; ++j) v.init_alpha[j] = 0.2 + 5.0 * rng.uniform();
    double alpha0 = 0.5 + 4.0 * rng.uniform();
    double gamma_conc = 0.5 + 8.0 * rng.uniform();

    std::vector<Eigen::VectorXd> row_elogs;
    for (int i = 0; i < M; ++i) {
      row_elogs.push_back(
          hdphmm::detail::dirichlet_expected_log(v.trans_alpha.row(i).transpose()));
    }
    row_elogs.push_back(hdphmm::detail::dirichlet_expected_log(v.init_alpha));
    double before = hdphmm::detail::beta_star_objective(v.beta_star, alpha0,
                                                        gamma_conc, row_elogs);
    double after = update_beta_star(v, alpha0, gamma_conc);
    CHECK(after >= before - 1e-12);
    CHECK(std::fabs(v.beta_star.sum() - 1.0) < 1e-12);
    CHECK((v.beta_star.array() > 0.0).all());
  }
}

TEST_CASE("beta* converges to uniform on a symmetric problem", "[vb][oracle]") {
  int M = 3;
  VariationalState v = fresh_state(4, M);
  v.trans_alpha = Eigen::MatrixXd::Constant(M, M + 1, 2.5);
  v.init_alpha = Eigen::VectorXd::Constant(M + 1, 2.5);
  v.beta_star << 0.4, 0.3, 0.2, 0.1;  // asymmetric start
  for (int it = 0; it < 400; ++it) update_beta_star(v, 3.0, 6.0);
  for (int j = 0; j < M + 1; ++j) {
    CHECK(v.beta_star[j] == Approx(0.25).margin(1e-6));
  }
}

TEST_CASE("beta* stays put at a stationary point", "[vb]") {
  int M = 2;
  VariationalState v = fresh_state(3, M);
  v.trans_alpha = Eigen::MatrixXd::Constant(M, M + 1, 1.8);
  v.init_alpha = Eigen::VectorXd::Constant(M + 1, 1.8);
  v.beta_star = Eigen::VectorXd::Constant(M + 1, 1.0 / (M + 1));
  Eigen::VectorXd before = v.beta_star;
  update_beta_star(v, 2.0, 4.0);
  CHECK((v.beta_star - before).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("state factor entropy matches the chain-rule formula",
          "[vb][property]") {
  CountMatrix counts = tiny_counts(67, 2, 10, 2.5);
  VbConfig config;
  config.M = 3;
  config.n_iters = 2;
  config.alpha0 = 2.0;
  config.gamma_conc = 4.0;
  config.hypers = {GammaHyper{1.0, 0.5}, GammaHyper{1.0, 0.5}};
  VbResult res = run_vb(counts, config);
  double chain = hdphmm::detail::markov_chain_entropy(res.state.gamma, res.state.xi);
  CHECK(res.state.state_entropy == Approx(chain).margin(1e-9));
}

TEST_CASE("ELBO equals the exact evidence for one state", "[vb][oracle]") {
  // With M = 1 the mean-field factorization is exact, so after convergence
  // the bound must hit ln p(beta*) + ln p(y | beta*), with the parameter
  // integrals in closed form.
  RngHandle rng(68);
  CountArray y(1, 7);
  long total = 0;
  for (int t = 0; t < 7; ++t) {
    y(0, t) = poisson_sample(rng, 3.0);
    total += y(0, t);
  }
  CountMatrix counts(y);
  const double a0 = 1.5, b0 = 0.5, alpha0 = 2.0, gamma_conc = 3.0;
  VbConfig config;
  config.M = 1;
  config.n_iters = 30;
  config.alpha0 = alpha0;
  config.gamma_conc = gamma_conc;
  config.hypers = {GammaHyper{a0, b0}};
  VbResult res = run_vb(counts, config);
  const Eigen::VectorXd& beta = res.state.beta_star;

  const double T = 7.0;
  double evidence = std::lgamma(a0 + total) - std::lgamma(a0) +
                    a0 * std::log(b0) - (a0 + total) * std::log(b0 + T);
  for (int t = 0; t < 7; ++t) {
    evidence -= std::lgamma(static_cast<double>(y(0, t)) + 1.0);
  }
  evidence += std::log(beta[0]);  // E[pi_1] under Dir(alpha0 beta*)
  for (int k = 0; k < 6; ++k) {   // Polya product for T-1 self transitions
    evidence += std::log(alpha0 * beta[0] + k) - std::log(alpha0 + k);
  }
  evidence += hdphmm::detail::beta_star_logprior(beta, gamma_conc);

  double bound = elbo(res.state, counts, config.hypers, alpha0, gamma_conc);
  CHECK(bound == Approx(evidence).margin(1e-8));
}

TEST_CASE("ELBO lower-bounds the exact evidence", "[vb][oracle]") {
  RngHandle rng(69);
  for (int rep = 0; rep < 5; ++rep) {
    int T = 3 + static_cast<int>(rng.uniform() * 3);
    CountMatrix counts = tiny_counts(70 + static_cast<std::uint64_t>(rep), 1, T, 2.0);
    VbConfig config;
    config.M = 2;
    config.n_iters = 1 + rep;
    config.alpha0 = 1.5;
    config.gamma_conc = 3.0;
    config.hypers = {GammaHyper{1.0, 0.5}};
    VbResult res = run_vb(counts, config);
    double bound =
        elbo(res.state, counts, config.hypers, config.alpha0, config.gamma_conc);

    double evidence = oracle::exact_marginal_evidence(
        counts, res.state.beta_star, config.alpha0, config.hypers, 2);
    evidence += hdphmm::detail::beta_star_logprior(res.state.beta_star,
                                                    config.gamma_conc);
    CHECK(bound <= evidence + 1e-9);
  }
}

TEST_CASE("ELBO is invariant under state permutation", "[vb][property]") {
  CountMatrix counts = tiny_counts(75, 2, 8, 2.0);
  VbConfig config;
  config.M = 3;
  config.n_iters = 3;
  config.alpha0 = 2.0;
  config.gamma_conc = 4.0;
  config.hypers = {GammaHyper{1.0, 0.5}, GammaHyper{1.0, 0.5}};
  VbResult res = run_vb(counts, config);
  double bound =
      elbo(res.state, counts, config.hypers, config.alpha0, config.gamma_conc);

  std::vector<int> perm{2, 0, 1};  // states; overflow column stays last
  VariationalState p = res.state;
  for (int i = 0; i < 3; ++i) {
    p.rate_a.col(perm[static_cast<std::size_t>(i)]) = res.state.rate_a.col(i);
    p.rate_b.col(perm[static_cast<std::size_t>(i)]) = res.state.rate_b.col(i);
    p.gamma.col(perm[static_cast<std::size_t>(i)]) = res.state.gamma.col(i);
    p.beta_star[perm[static_cast<std::size_t>(i)]] = res.state.beta_star[i];
    p.init_alpha[perm[static_cast<std::size_t>(i)]] = res.state.init_alpha[i];
    for (int j = 0; j < 3; ++j) {
      p.trans_alpha(perm[static_cast<std::size_t>(i)],
                    perm[static_cast<std::size_t>(j)]) =
          res.state.trans_alpha(i, j);
    }
    p.trans_alpha(perm[static_cast<std::size_t>(i)], 3) =
        res.state.trans_alpha(i, 3);
  }
  for (std::size_t t = 0; t < res.state.xi.size(); ++t) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        p.xi[t](perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(j)]) = res.state.xi[t](i, j);
      }
    }
  }
  double bound_perm =
      elbo(p, counts, config.hypers, config.alpha0, config.gamma_conc);
  CHECK(bound == Approx(bound_perm).margin(1e-9));
}

TEST_CASE("coordinate ascent is monotone and converges", "[vb]") {
  SimConfig sc;
  sc.C = 5;
  sc.T = 200;
  sc.M = 6;
  sc.alpha0 = 4.0;
  sc.gamma = 8.0;
  sc.rate_prior = GammaHyper{1.0, 0.2};
  RngHandle rng(123, 9);
  auto [hmm, hdp] = sample_hdp_hmm(rng, sc);
  auto [seq, counts] = simulate(rng, hmm, sc.T);

  VbConfig config;
  config.M = 8;
  config.n_iters = 100;
  config.alpha0 = 4.0;
  config.gamma_conc = 8.0;
  VbResult res = run_vb(counts, config);
  REQUIRE(res.elbo_trace.size() == 101);
  for (std::size_t i = 1; i < res.elbo_trace.size(); ++i) {
    CHECK(res.elbo_trace[i] >= res.elbo_trace[i - 1] - 1e-8);
  }
  double last_delta = res.elbo_trace.back() - res.elbo_trace[res.elbo_trace.size() - 2];
  CHECK(std::fabs(last_delta) < 1e-6);
}

TEST_CASE("zero-sweep run returns the initial state", "[vb]") {
  CountMatrix counts = tiny_counts(77, 2, 10, 2.0);
  VbConfig config;
  config.M = 3;
  config.n_iters = 0;
  VbResult res = run_vb(counts, config);
  CHECK(res.elbo_trace.size() == 1);
  CHECK(res.state.gamma.rows() == 10);
}

TEST_CASE("different initializations reach comparable optima", "[vb][oracle]") {
  RngHandle data_rng(78, 9);
  SimConfig sc;
  sc.C = 5;
  sc.T = 120;
  sc.M = 2;
  sc.alpha0 = 4.0;
  sc.gamma = 4.0;
  sc.rate_prior = GammaHyper{1.0, 0.2};
  auto [hmm, hdp] = sample_hdp_hmm(data_rng, sc);
  auto [seq, counts] = simulate(data_rng, hmm, sc.T);

  std::vector<double> finals;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    VbConfig config;
    config.M = 2;
    config.n_iters = 80;
    config.alpha0 = 4.0;
    config.gamma_conc = 4.0;
    config.seed = seed;
    finals.push_back(run_vb(counts, config).elbo_trace.back());
  }
  double lo = *std::min_element(finals.begin(), finals.end());
  double hi = *std::max_element(finals.begin(), finals.end());
  CHECK((hi - lo) / std::fabs(hi) < 0.01);
}

TEST_CASE("finite-mode VB uses symmetric Dirichlet rows", "[vb]") {
  CountMatrix counts = tiny_counts(79, 2, 30, 2.0);
  VbConfig config;
  config.M = 3;
  config.finite = true;
  config.n_iters = 20;
  config.alpha0 = 2.0;
  VbResult res = run_vb(counts, config);
  CHECK(res.state.trans_alpha.cols() == 3);  // no overflow column
  for (std::size_t i = 1; i < res.elbo_trace.size(); ++i) {
    CHECK(res.elbo_trace[i] >= res.elbo_trace[i - 1] - 1e-8);
  }
}
