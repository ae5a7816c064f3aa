#pragma once

// Scalar log densities (normalised) and the derivatives the gradient code
// needs. Scale arguments are standard deviations throughout.

#include <cmath>
#include <numbers>

namespace mbw::dist {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)

inline double normal_lpdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}
/// d/dx
inline double normal_dx(double x, double mu, double sd) {
  return -(x - mu) / (sd * sd);
}
/// d/dsd
inline double normal_dsd(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return (z * z - 1.0) / sd;
}

/// Log-normal with log-location `log_mu` and log-scale `sd`.
inline double lognormal_lpdf(double x, double log_mu, double sd) {
  const double lx = std::log(x);
  return normal_lpdf(lx, log_mu, sd) - lx;
}

/// Beta(a, b) on (0, 1).
inline double beta_lpdf(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) +
         std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}
inline double beta_dx(double x, double a, double b) {
  return (a - 1.0) / x - (b - 1.0) / (1.0 - x);
}

/// Cauchy(0, scale) restricted to x > 0 (twice the Cauchy density).
inline double half_cauchy_lpdf(double x, double scale) {
  const double z = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p(z * z);
}
inline double half_cauchy_dx(double x, double scale) {
  const double z = x / scale;
  return -2.0 * z / (scale * (1.0 + z * z));
}

/// Normal(0, sd) restricted to x > 0 (twice the normal density).
inline double half_normal_lpdf(double x, double sd) {
  return std::log(2.0) + normal_lpdf(x, 0.0, sd);
}

inline double inv_logit(double u) {
  return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}
inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double log_sum_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double hi = a > b ? a : b;
  return hi + std::log1p(std::exp(-(a > b ? a - b : b - a)));
}

}  // namespace mbw::dist
