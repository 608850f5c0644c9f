#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/errors.hpp"
#include "hdphmm/rng.hpp"
#include "hdphmm/special.hpp"

namespace hdphmm {

/// Per-cell gamma prior over firing rates, rate parameterization:
/// density b^a/Gamma(a) * x^(a-1) exp(-b x), mean a/b.
struct GammaHyper {
  double a = 1.0;  // shape
  double b = 1.0;  // rate

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0)) {
      throw DomainError("GammaHyper requires a > 0 and b > 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Gamma

/// Marsaglia-Tsang for shape >= 1; boosted by U^(1/shape) below 1.
inline double gamma_sample(RngHandle& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("gamma_sample requires shape > 0 and rate > 0");
  }
  double boost = 1.0;
  if (shape < 1.0) {
    boost = std::pow(rng.uniform_pos(), 1.0 / shape);
    shape += 1.0;
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = rng.uniform_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x ||
        std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      double y = boost * d * v / rate;
      return y > 0.0 ? y : 1e-300;  // keep strictly positive under underflow
    }
  }
}

inline double gamma_logpdf(double x, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0) || !(x > 0.0)) {
    throw DomainError("gamma_logpdf requires x, shape, rate > 0");
  }
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

// ---------------------------------------------------------------------------
// Beta

inline double beta_sample(RngHandle& rng, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw DomainError("beta_sample requires a > 0 and b > 0");
  }
  double x = gamma_sample(rng, a, 1.0);
  double y = gamma_sample(rng, b, 1.0);
  double r = x / (x + y);
  if (r <= 0.0) return std::nextafter(0.0, 1.0);
  if (r >= 1.0) return std::nextafter(1.0, 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Dirichlet

inline Eigen::VectorXd dirichlet_sample(
    RngHandle& rng, const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  if (alpha.size() == 0) throw DomainError("dirichlet_sample: empty alpha");
  Eigen::VectorXd x(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    if (!(alpha[i] > 0.0)) {
      throw DomainError("dirichlet_sample requires all alpha > 0");
    }
    x[i] = gamma_sample(rng, alpha[i], 1.0);
  }
  return x / x.sum();
}

inline double dirichlet_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  if (x.size() != alpha.size()) {
    throw DomainError("dirichlet_logpdf: size mismatch");
  }
  double lp = std::lgamma(alpha.sum());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(alpha[i] > 0.0)) {
      throw DomainError("dirichlet_logpdf requires all alpha > 0");
    }
    lp -= std::lgamma(alpha[i]);
    lp += (alpha[i] - 1.0) * std::log(x[i]);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Poisson

inline double poisson_logpmf(long k, double rate) {
  if (rate < 0.0 || k < 0) {
    throw DomainError("poisson_logpmf requires rate >= 0 and k >= 0");
  }
  if (rate == 0.0) return k == 0 ? 0.0 : neg_inf;
  return static_cast<double>(k) * std::log(rate) - rate -
         std::lgamma(static_cast<double>(k) + 1.0);
}

/// Knuth's product method, chunked so the exp(-rate) factor never
/// underflows; exact for any rate, O(rate) draws.
inline long poisson_sample(RngHandle& rng, double rate) {
  if (rate < 0.0) throw DomainError("poisson_sample requires rate >= 0");
  long k = 0;
  while (rate > 30.0) {
    // Poisson(rate) = Poisson(30) + Poisson(rate - 30), independent
    double l = std::exp(-30.0);
    double p = rng.uniform_pos();
    long kk = 0;
    while (p > l) {
      ++kk;
      p *= rng.uniform_pos();
    }
    k += kk;
    rate -= 30.0;
  }
  double l = std::exp(-rate);
  double p = rng.uniform_pos();
  while (p > l) {
    ++k;
    p *= rng.uniform_pos();
  }
  return k;
}

// ---------------------------------------------------------------------------
// Categorical

inline int categorical_sample(RngHandle& rng,
                              const Eigen::Ref<const Eigen::VectorXd>& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] < 0.0) throw DomainError("categorical_sample: negative weight");
    total += w[i];
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw DomainError("categorical_sample: weights must sum to 1");
  }
  double u = rng.uniform() * total;
  double cum = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    cum += w[i];
    if (u < cum) return static_cast<int>(i);
  }
  // rounding spill: last positive weight
  for (Eigen::Index i = w.size() - 1; i >= 0; --i) {
    if (w[i] > 0.0) return static_cast<int>(i);
  }
  throw DomainError("categorical_sample: all-zero weights");
}

/// Unnormalized variant for internal samplers (weights >= 0, sum > 0).
inline int categorical_sample_unnormalized(
    RngHandle& rng, const Eigen::Ref<const Eigen::VectorXd>& w) {
  double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("categorical draw over zero or non-finite weights");
  }
  double u = rng.uniform() * total;
  double cum = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    cum += w[i];
    if (u < cum) return static_cast<int>(i);
  }
  for (Eigen::Index i = w.size() - 1; i >= 0; --i) {
    if (w[i] > 0.0) return static_cast<int>(i);
  }
  throw NumericalError("categorical draw failed");
}

// ---------------------------------------------------------------------------
// Negative binomial

/// log pmf of the gamma-Poisson mixture: mixing Gamma(a, b) over a Poisson
/// rate gives this distribution with r = a and p = 1/(1+b), under the
/// convention pmf(k) = C(k+r-1, k) p^k (1-p)^r.
inline double negbinom_logpmf(long k, double r, double p) {
  if (!(r > 0.0) || !(p > 0.0) || !(p < 1.0) || k < 0) {
    throw DomainError("negbinom_logpmf requires r > 0, p in (0,1), k >= 0");
  }
  double kd = static_cast<double>(k);
  return std::lgamma(kd + r) - std::lgamma(kd + 1.0) - std::lgamma(r) +
         kd * std::log(p) + r * std::log1p(-p);
}

}  // namespace hdphmm
