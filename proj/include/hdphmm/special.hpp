#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace hdphmm {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// log(sum_i exp(x_i)) with the usual max shift; -inf inputs carry zero mass.
inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a nan/inf poisoned input)
  double s = (x.array() - m).exp().sum();
  return m + std::log(s);
}

/// exp(x - shift) elementwise with -inf mapped to exactly zero (Eigen's
/// vectorized exp can leave denormals behind for -inf inputs).
inline Eigen::VectorXd shifted_exp(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   double shift) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] = x[i] == neg_inf ? 0.0 : std::exp(x[i] - shift);
  }
  return out;
}

/// Digamma Psi(x) for x > 0. Recurrence up to x >= 10, then the standard
/// asymptotic series; accurate to ~1e-13 over the range used here.
inline double digamma(double x) {
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv;
  // Bernoulli-number coefficients B_2/2, B_4/4, ...
  result -= inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                            inv2 * (1.0 / 252.0 -
                                    inv2 * (1.0 / 240.0 -
                                            inv2 * (1.0 / 132.0)))));
  return result;
}

/// Regularized lower incomplete gamma P(a, x). Series for x < a+1, the
/// Lentz continued fraction otherwise.
inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  double q = std::exp(-x + a * std::log(x) - lg) * h;
  return 1.0 - q;
}

inline double gamma_q(double a, double x) { return 1.0 - gamma_p(a, x); }

/// Survival function of the chi-square distribution with k dof.
inline double chi2_sf(double x, double k) { return gamma_q(0.5 * k, 0.5 * x); }

}  // namespace hdphmm
