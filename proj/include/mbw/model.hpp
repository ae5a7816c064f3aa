#pragma once

// Single-test posterior: likelihood of the three curves, diffuse or
// informative priors, and the unconstrained parameterisation used for
// sampling.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "mbw/core.hpp"
#include "mbw/distributions.hpp"
#include "mbw/error.hpp"
#include "mbw/random.hpp"

namespace mbw {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Grad9 = std::array<double, MbwParams::kSize>;

/// Scales of the diffuse prior (standard deviations).
struct DiffuseScales {
  static constexpr double beta_rate = 1.0;     // beta1, beta2, beta4
  static constexpr double beta3 = 1000.0;      // asymptotic FRC (mL)
  static constexpr double beta5 = 100.0;       // mL per breath
  static constexpr double noise = 2.5;         // half-Cauchy scale
  static constexpr double beta0_shape = 2.0;   // Beta(2, 2)
};

class PriorSpec {
 public:
  enum class Kind { Diffuse, Informative };

  static PriorSpec diffuse() { return PriorSpec(); }

  /// Multivariate normal prior on (beta0..beta5). Throws ParameterDomainError
  /// unless `sigma` is symmetric positive definite.
  static PriorSpec informative(const Vector6& mu, const Matrix6& sigma) {
    if (!mu.allFinite() || !sigma.allFinite())
      throw ParameterDomainError("informative prior has non-finite entries");
    if (!sigma.isApprox(sigma.transpose(), 1e-12))
      throw ParameterDomainError("informative prior covariance is not symmetric");
    PriorSpec p;
    p.kind_ = Kind::Informative;
    p.mu_ = mu;
    p.sigma_ = 0.5 * (sigma + sigma.transpose());
    Eigen::LLT<Matrix6> llt(p.sigma_);
    if (llt.info() != Eigen::Success)
      throw ParameterDomainError(
          "informative prior covariance is not positive definite");
    p.chol_ = llt.matrixL();
    p.precision_ = llt.solve(Matrix6::Identity());
    p.log_norm_ = -6.0 * dist::kHalfLog2Pi - p.chol_.diagonal().array().log().sum();
    return p;
  }

  Kind kind() const noexcept { return kind_; }
  bool is_informative() const noexcept { return kind_ == Kind::Informative; }
  const Vector6& mu() const noexcept { return mu_; }
  const Matrix6& sigma() const noexcept { return sigma_; }
  const Matrix6& sigma_cholesky() const noexcept { return chol_; }

  /// Log prior density of the six curve parameters; adds its gradient to
  /// `grad` (first six entries) when non-null. Assumes in-domain betas.
  double log_density_betas(const Vector6& b, double* grad) const {
    if (kind_ == Kind::Informative) {
      const Vector6 diff = b - mu_;
      const Vector6 pd = precision_ * diff;
      if (grad)
        for (int i = 0; i < 6; ++i) grad[i] -= pd[i];
      return log_norm_ - 0.5 * diff.dot(pd);
    }
    using S = DiffuseScales;
    double lp = dist::beta_lpdf(b[0], S::beta0_shape, S::beta0_shape) +
                dist::normal_lpdf(b[1], 0, S::beta_rate) +
                dist::normal_lpdf(b[2], 0, S::beta_rate) +
                dist::normal_lpdf(b[3], 0, S::beta3) +
                dist::normal_lpdf(b[4], 0, S::beta_rate) +
                dist::normal_lpdf(b[5], 0, S::beta5);
    if (grad) {
      grad[0] += dist::beta_dx(b[0], S::beta0_shape, S::beta0_shape);
      grad[1] += dist::normal_dx(b[1], 0, S::beta_rate);
      grad[2] += dist::normal_dx(b[2], 0, S::beta_rate);
      grad[3] += dist::normal_dx(b[3], 0, S::beta3);
      grad[4] += dist::normal_dx(b[4], 0, S::beta_rate);
      grad[5] += dist::normal_dx(b[5], 0, S::beta5);
    }
    return lp;
  }

  /// Draw betas from the prior, restricted to the parameter domain.
  /// Returns false if `attempts` draws all fell outside the domain.
  bool draw_betas(Rng& rng, Vector6& out, int attempts = 1000) const {
    for (int a = 0; a < attempts; ++a) {
      if (kind_ == Kind::Informative) {
        Vector6 z;
        for (int i = 0; i < 6; ++i) z[i] = std_normal(rng);
        out = mu_ + chol_ * z;
      } else {
        using S = DiffuseScales;
        std::gamma_distribution<double> g(S::beta0_shape, 1.0);
        const double x = g(rng), y = g(rng);
        out[0] = x / (x + y);
        const double r1 = std::abs(std_normal(rng)) * S::beta_rate;
        const double r2 = std::abs(std_normal(rng)) * S::beta_rate;
        out[1] = std::min(r1, r2);
        out[2] = std::max(r1, r2);
        out[3] = std::abs(std_normal(rng)) * S::beta3;
        out[4] = std::abs(std_normal(rng)) * S::beta_rate;
        out[5] = std::abs(std_normal(rng)) * S::beta5;
      }
      if (betas_in_domain(out[0], out[1], out[2], out[3], out[4], out[5])) return true;
    }
    return false;
  }

 private:
  Kind kind_ = Kind::Diffuse;
  Vector6 mu_ = Vector6::Zero();
  Matrix6 sigma_ = Matrix6::Identity();
  Matrix6 chol_ = Matrix6::Identity();
  Matrix6 precision_ = Matrix6::Identity();
  double log_norm_ = 0.0;
};

inline double noise_log_prior(double s, double* grad) {
  if (grad) *grad += dist::half_cauchy_dx(s, DiffuseScales::noise);
  return dist::half_cauchy_lpdf(s, DiffuseScales::noise);
}

/// Series transformed to the modelling scales once, up front.
struct PreparedSeries {
  std::vector<double> k;        // 0..M-1
  std::vector<double> log_gas;  // M
  std::vector<double> log_dv;   // M-1 log CEVGM increments
  std::vector<double> log_dr;   // M-1 log CEVTG increments
  double sum_log_gas = 0.0;

  PreparedSeries() = default;
  explicit PreparedSeries(const BreathSeries& s)
      : log_dv(log_increments(s.cevgm())), log_dr(log_increments(s.cevtg())) {
    const auto gas = s.gas();
    k.resize(gas.size());
    log_gas.resize(gas.size());
    for (std::size_t i = 0; i < gas.size(); ++i) {
      k[i] = static_cast<double>(i);
      log_gas[i] = std::log(gas[i]);
      sum_log_gas += log_gas[i];
    }
  }
  std::size_t size() const noexcept { return k.size(); }
};

/// Mean of the log CEVTG increment following breath k.
inline double log_cevtg_increment_mean(double k, double beta3, double beta4) {
  return std::log(beta3) + std::log(-std::expm1(-beta4)) - beta4 * k;
}

/// Log likelihood of one test on the natural parameter scale. Adds the
/// gradient (9 entries, MbwParams order) to `grad` when non-null. Returns
/// -inf for out-of-domain parameters.
inline double log_likelihood(const PreparedSeries& d, const MbwParams& p,
                             double* grad = nullptr) {
  if (!in_domain(p)) return -std::numeric_limits<double>::infinity();
  const double b0 = p.beta0, b1 = p.beta1, b2 = p.beta2;
  const double log_b0 = std::log(b0), log_1mb0 = std::log1p(-b0);

  double lp = 0.0;
  // GAS: log-normal around f(k).
  {
    const double s = p.sigma_c, inv_s2 = 1.0 / (s * s);
    double ss = 0.0, g0 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < d.k.size(); ++i) {
      const double k = d.k[i];
      const double a = log_b0 - b1 * k;
      const double b = log_1mb0 - b2 * k;
      const double hi = std::max(a, b);
      const double mu = hi + std::log1p(std::exp(std::min(a, b) - hi));
      const double r = d.log_gas[i] - mu;
      ss += r * r;
      if (grad) {
        const double w1 = std::exp(a - mu), w2 = std::exp(b - mu);
        const double dr = r * inv_s2;
        g0 += dr * (w1 / b0 - w2 / (1.0 - b0));
        g1 -= dr * k * w1;
        g2 -= dr * k * w2;
      }
    }
    const double n = static_cast<double>(d.k.size());
    lp += -n * (dist::kHalfLog2Pi + std::log(s)) - 0.5 * ss * inv_s2 - d.sum_log_gas;
    if (grad) {
      grad[0] += g0;
      grad[1] += g1;
      grad[2] += g2;
      grad[6] += ss * inv_s2 / s - n / s;
    }
  }
  // CEVGM: normal log increments around ln beta5.
  {
    const double s = p.sigma_v, inv_s2 = 1.0 / (s * s), mu = std::log(p.beta5);
    double ss = 0.0, sr = 0.0;
    for (double y : d.log_dv) {
      const double r = y - mu;
      ss += r * r;
      sr += r;
    }
    const double n = static_cast<double>(d.log_dv.size());
    lp += -n * (dist::kHalfLog2Pi + std::log(s)) - 0.5 * ss * inv_s2;
    if (grad) {
      grad[5] += sr * inv_s2 / p.beta5;
      grad[7] += ss * inv_s2 / s - n / s;
    }
  }
  // CEVTG: normal log increments, linear in the left breath index.
  {
    const double s = p.sigma_r, inv_s2 = 1.0 / (s * s);
    const double c = std::log(p.beta3) + std::log(-std::expm1(-p.beta4));
    const double dc_db4 = 1.0 / std::expm1(p.beta4);
    double ss = 0.0, sr = 0.0, srk = 0.0;
    for (std::size_t m = 0; m < d.log_dr.size(); ++m) {
      const double k = d.k[m];
      const double r = d.log_dr[m] - (c - p.beta4 * k);
      ss += r * r;
      sr += r;
      srk += r * k;
    }
    const double n = static_cast<double>(d.log_dr.size());
    lp += -n * (dist::kHalfLog2Pi + std::log(s)) - 0.5 * ss * inv_s2;
    if (grad) {
      grad[3] += sr * inv_s2 / p.beta3;
      grad[4] += (sr * dc_db4 - srk) * inv_s2;
      grad[8] += ss * inv_s2 / s - n / s;
    }
  }
  return lp;
}

/// Log prior (betas plus the three half-Cauchy noise scales).
inline double log_prior(const MbwParams& p, const PriorSpec& prior,
                        double* grad = nullptr) {
  if (!in_domain(p)) return -std::numeric_limits<double>::infinity();
  Vector6 b;
  b << p.beta0, p.beta1, p.beta2, p.beta3, p.beta4, p.beta5;
  double lp = prior.log_density_betas(b, grad);
  lp += noise_log_prior(p.sigma_c, grad ? grad + 6 : nullptr);
  lp += noise_log_prior(p.sigma_v, grad ? grad + 7 : nullptr);
  lp += noise_log_prior(p.sigma_r, grad ? grad + 8 : nullptr);
  return lp;
}

/// Unnormalised log posterior on the natural scale; -inf out of domain.
inline double log_posterior(const BreathSeries& series, const MbwParams& p,
                            const PriorSpec& prior) {
  if (!in_domain(p)) return -std::numeric_limits<double>::infinity();
  return log_likelihood(PreparedSeries(series), p) + log_prior(p, prior);
}

/// Unconstrained coordinates:
///   logit(beta0), log(beta1), log(beta2 - beta1), log(beta3), log(beta4),
///   log(beta5), log(sigma_c), log(sigma_v), log(sigma_r).
namespace transform {

inline std::array<double, 9> to_unconstrained(const MbwParams& p) {
  validate(p);
  return {dist::logit(p.beta0), std::log(p.beta1), std::log(p.beta2 - p.beta1),
          std::log(p.beta3),    std::log(p.beta4), std::log(p.beta5),
          std::log(p.sigma_c),  std::log(p.sigma_v), std::log(p.sigma_r)};
}

inline MbwParams from_unconstrained(const double* u) {
  MbwParams p;
  p.beta0 = dist::inv_logit(u[0]);
  p.beta1 = std::exp(u[1]);
  p.beta2 = p.beta1 + std::exp(u[2]);
  p.beta3 = std::exp(u[3]);
  p.beta4 = std::exp(u[4]);
  p.beta5 = std::exp(u[5]);
  p.sigma_c = std::exp(u[6]);
  p.sigma_v = std::exp(u[7]);
  p.sigma_r = std::exp(u[8]);
  return p;
}

inline double log_abs_jacobian(const double* u, const MbwParams& p) {
  return std::log(p.beta0) + std::log1p(-p.beta0) + u[1] + u[2] + u[3] + u[4] +
         u[5] + u[6] + u[7] + u[8];
}

/// Maps a natural-scale gradient to the unconstrained scale and adds the
/// gradient of the log Jacobian.
inline void chain_rule(const double* u, const MbwParams& p, const double* g_nat,
                       double* g_u) {
  g_u[0] = g_nat[0] * p.beta0 * (1.0 - p.beta0) + (1.0 - 2.0 * p.beta0);
  g_u[1] = (g_nat[1] + g_nat[2]) * p.beta1 + 1.0;
  g_u[2] = g_nat[2] * std::exp(u[2]) + 1.0;
  g_u[3] = g_nat[3] * p.beta3 + 1.0;
  g_u[4] = g_nat[4] * p.beta4 + 1.0;
  g_u[5] = g_nat[5] * p.beta5 + 1.0;
  g_u[6] = g_nat[6] * p.sigma_c + 1.0;
  g_u[7] = g_nat[7] * p.sigma_v + 1.0;
  g_u[8] = g_nat[8] * p.sigma_r + 1.0;
}

}  // namespace transform

/// Posterior of one test as a sampler target on the unconstrained scale.
class PosteriorTarget {
 public:
  PosteriorTarget(const BreathSeries& series, PriorSpec prior,
                  bool include_likelihood = true)
      : data_(series), prior_(std::move(prior)), use_data_(include_likelihood) {}

  std::size_t dim() const noexcept { return MbwParams::kSize; }
  const PriorSpec& prior() const noexcept { return prior_; }

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    const MbwParams p = transform::from_unconstrained(u.data());
    grad.resize(9);
    if (!in_domain(p)) {
      grad.setZero();
      return -std::numeric_limits<double>::infinity();
    }
    double g_nat[9] = {};
    double lp = log_prior(p, prior_, g_nat);
    if (use_data_) lp += log_likelihood(data_, p, g_nat);
    lp += transform::log_abs_jacobian(u.data(), p);
    transform::chain_rule(u.data(), p, g_nat, grad.data());
    return lp;
  }

  /// Prior draw restricted to the domain, with uniform(-0.1, 0.1) jitter on
  /// the unconstrained scale.
  Eigen::VectorXd initial_point(Rng& rng) const {
    Eigen::VectorXd u(9);
    MbwParams p;
    Vector6 b;
    if (!prior_.draw_betas(rng, b, 100)) {
      u.setConstant(std::numeric_limits<double>::quiet_NaN());
      return u;
    }
    p.set_betas(std::span<const double>(b.data(), 6));
    std::cauchy_distribution<double> cauchy(0.0, DiffuseScales::noise);
    p.sigma_c = std::abs(cauchy(rng));
    p.sigma_v = std::abs(cauchy(rng));
    p.sigma_r = std::abs(cauchy(rng));
    if (!in_domain(p)) {
      u.setConstant(std::numeric_limits<double>::quiet_NaN());
      return u;
    }
    const auto a = transform::to_unconstrained(p);
    for (int i = 0; i < 9; ++i) u[i] = a[i] + (2.0 * uniform01(rng) - 1.0) * 0.1;
    return u;
  }

 private:
  PreparedSeries data_;
  PriorSpec prior_;
  bool use_data_;
};

/// Gradient of the log posterior (including the log Jacobian) with respect to
/// the unconstrained coordinates of `p`.
inline Grad9 log_posterior_gradient(const BreathSeries& series,
                                    const MbwParams& p, const PriorSpec& prior) {
  const auto u = transform::to_unconstrained(p);
  PosteriorTarget target(series, prior);
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(u.data(), 9);
  Eigen::VectorXd g;
  target(x, g);
  Grad9 out;
  for (int i = 0; i < 9; ++i) out[i] = g[i];
  return out;
}

/// Gradient of the log posterior with respect to the natural parameters
/// (no Jacobian term).
inline Grad9 log_posterior_gradient_natural(const BreathSeries& series,
                                            const MbwParams& p,
                                            const PriorSpec& prior,
                                            bool include_likelihood = true) {
  Grad9 g{};
  validate(p);
  log_prior(p, prior, g.data());
  if (include_likelihood) log_likelihood(PreparedSeries(series), p, g.data());
  return g;
}

}  // namespace mbw
