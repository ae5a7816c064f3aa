#pragma once

// Two-level model across tests: per-test curve parameters are population
// values plus multivariate-normal random effects, written non-centred as
// w_i = diag(sd_w) L z_i with an LKJ prior on the correlation factor L.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mbw/corr.hpp"
#include "mbw/diagnostics.hpp"
#include "mbw/inference.hpp"
#include "mbw/matrix.hpp"
#include "mbw/model.hpp"
#include "mbw/sampler.hpp"

namespace mbw {

inline constexpr std::size_t kBetaDim = 6;
inline constexpr double kDefaultLkjEta = 2.0;

struct HierOptions {
  /// Hold the random-effect SDs at these values instead of sampling them.
  std::optional<Vector6> fixed_sd_w;
  /// Force L = I (independent random effects).
  bool identity_correlation = false;
  bool include_likelihood = true;
  double lkj_eta = kDefaultLkjEta;
  /// Keep per-draw random effects w_i in the samples.
  bool store_effects = true;
};

struct HierParams {
  Vector6 beta_hyper = Vector6::Zero();
  Vector6 sd_w = Vector6::Ones();
  Matrix6 corr_chol = Matrix6::Identity();
  Eigen::MatrixXd z;  // 6 x N
  std::array<double, 3> sigma{0.1, 0.1, 0.1};

  std::size_t n_tests() const { return static_cast<std::size_t>(z.cols()); }
  Vector6 effect(std::size_t i) const {
    return sd_w.cwiseProduct(corr_chol * z.col(static_cast<Eigen::Index>(i)));
  }
  MbwParams test_params(std::size_t i) const {
    const Vector6 b = beta_hyper + effect(i);
    MbwParams p;
    p.set_betas(std::span<const double>(b.data(), 6));
    p.sigma_c = sigma[0];
    p.sigma_v = sigma[1];
    p.sigma_r = sigma[2];
    return p;
  }
};

namespace detail {

inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

struct LineFit {
  double slope = 0, intercept = 0, resid_sd = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        std::size_t from, std::size_t to) {
  LineFit f;
  const double n = static_cast<double>(to - from);
  if (n < 1) return f;
  double mx = 0, my = 0;
  for (std::size_t i = from; i < to; ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = from; i < to; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss = 0;
  for (std::size_t i = from; i < to; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ss += r * r;
  }
  f.resid_sd = n > 2 ? std::sqrt(ss / (n - 2)) : 0.0;
  return f;
}

/// Rough in-domain parameter values read off one test by log-linear fits.
/// Used only to start samplers.
inline MbwParams crude_estimate(const PreparedSeries& d) {
  MbwParams p;
  const std::size_t m = d.size();
  std::vector<double> kk(d.k.begin(), d.k.end() - 1);

  double mv = 0;
  for (double v : d.log_dv) mv += v;
  mv /= static_cast<double>(d.log_dv.size());
  double sv = 0;
  for (double v : d.log_dv) sv += (v - mv) * (v - mv);
  p.beta5 = std::exp(mv);
  p.sigma_v = std::max(1e-2, std::sqrt(sv / std::max<double>(1, d.log_dv.size() - 1.0)));

  const LineFit r = fit_line(kk, d.log_dr, 0, kk.size());
  p.beta4 = std::clamp(-r.slope, 0.01, 5.0);
  p.beta3 = std::exp(r.intercept) / -std::expm1(-p.beta4);
  p.sigma_r = std::max(1e-2, r.resid_sd);

  const std::size_t tail = std::min(m / 2, m - 3);
  const LineFit g = fit_line(d.k, d.log_gas, std::max<std::size_t>(1, tail), m);
  p.beta1 = std::clamp(-g.slope, 0.01, 2.0);
  p.beta0 = std::clamp(std::exp(g.intercept), 0.05, 0.95);
  const double rest = std::exp(d.log_gas[1]) - p.beta0 * std::exp(-p.beta1);
  double b2 = 4 * p.beta1;
  if (rest > 0 && rest < 1 - p.beta0) b2 = -std::log(rest / (1 - p.beta0));
  p.beta2 = std::clamp(b2, 1.5 * p.beta1, 10.0);

  double sc = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = d.log_gas[i] - log_gas_curve(d.k[i], p.beta0, p.beta1, p.beta2);
    sc += e * e;
  }
  p.sigma_c = std::clamp(std::sqrt(sc / static_cast<double>(m)), 1e-2, 1.0);
  return p;
}

/// Log density and gradient of the diffuse population prior in the
/// single-test unconstrained coordinates of the six betas (Jacobian
/// included). `g_nat` holds the natural-scale gradient on entry.
inline double betas_to_unconstrained_grad(const double* u, const Vector6& b,
                                          double* g_nat, double* g_u) {
  g_u[0] = g_nat[0] * b[0] * (1 - b[0]) + (1 - 2 * b[0]);
  g_u[1] = (g_nat[1] + g_nat[2]) * b[1] + 1;
  g_u[2] = g_nat[2] * std::exp(u[2]) + 1;
  for (int j = 3; j < 6; ++j) g_u[j] = g_nat[j] * b[j] + 1;
  return std::log(b[0]) + std::log1p(-b[0]) + u[1] + u[2] + u[3] + u[4] + u[5];
}

inline Vector6 betas_from_unconstrained(const double* u) {
  Vector6 b;
  b[0] = dist::inv_logit(u[0]);
  b[1] = std::exp(u[1]);
  b[2] = b[1] + std::exp(u[2]);
  b[3] = std::exp(u[3]);
  b[4] = std::exp(u[4]);
  b[5] = std::exp(u[5]);
  return b;
}

inline std::array<double, 6> betas_to_unconstrained(const Vector6& b) {
  return {dist::logit(b[0]), std::log(b[1]), std::log(b[2] - b[1]),
          std::log(b[3]),    std::log(b[4]), std::log(b[5])};
}

}  // namespace detail

/// Sum over tests of the single-test likelihood at beta_hyper + w_i.
inline double hier_log_likelihood(const std::vector<PreparedSeries>& tests,
                                  const HierParams& hp) {
  if (tests.size() != hp.n_tests())
    throw ParameterDomainError("one column of z is needed per test");
  std::vector<double> terms(tests.size());
  for (std::size_t i = 0; i < tests.size(); ++i) {
    terms[i] = log_likelihood(tests[i], hp.test_params(i));
    if (!std::isfinite(terms[i])) return -std::numeric_limits<double>::infinity();
  }
  return detail::pairwise_sum(terms.data(), terms.size());
}

/// Natural-scale log posterior (no change-of-variables terms).
inline double hier_log_posterior(const std::vector<PreparedSeries>& tests,
                                 const HierParams& hp, const HierOptions& opt = {}) {
  const Vector6& b = hp.beta_hyper;
  if (!betas_in_domain(b[0], b[1], b[2], b[3], b[4], b[5]) ||
      !(hp.sigma[0] > 0 && hp.sigma[1] > 0 && hp.sigma[2] > 0) || !(hp.sd_w.array() > 0).all())
    return -std::numeric_limits<double>::infinity();
  double lp = opt.include_likelihood ? hier_log_likelihood(tests, hp) : 0.0;
  if (!std::isfinite(lp)) return lp;
  lp += PriorSpec::diffuse().log_density_betas(b, nullptr);
  if (!opt.fixed_sd_w)
    for (int j = 0; j < 6; ++j) lp += noise_log_prior(hp.sd_w[j], nullptr);
  if (!opt.identity_correlation) {
    std::vector<double> l(36);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) l[i * 6 + j] = hp.corr_chol(i, j);
    lp += lkj_corr_cholesky_lpdf(l, 6, opt.lkj_eta);
  }
  lp += -0.5 * hp.z.squaredNorm() - static_cast<double>(hp.z.size()) * dist::kHalfLog2Pi;
  for (double s : hp.sigma) lp += noise_log_prior(s, nullptr);
  return lp;
}

inline double hier_log_posterior(const std::vector<BreathSeries>& tests,
                                 const HierParams& hp, const HierOptions& opt = {}) {
  std::vector<PreparedSeries> prepared(tests.begin(), tests.end());
  return hier_log_posterior(prepared, hp, opt);
}

/// Joint posterior on the unconstrained scale. Coordinates, in order: the six
/// population betas (single-test transform), log sd_w (unless fixed), 15
/// partial-correlation reals (unless identity), z (6 per test, test-major),
/// log sigma (3).
class HierTarget {
 public:
  HierTarget(const std::vector<BreathSeries>& tests, HierOptions opt = {})
      : opt_(std::move(opt)) {
    if (tests.empty()) throw ParameterDomainError("hierarchical fit needs tests");
    for (const auto& t : tests) {
      data_.emplace_back(t);
      crude_.push_back(detail::crude_estimate(data_.back()));
    }
    off_sd_ = 6;
    off_y_ = off_sd_ + (opt_.fixed_sd_w ? 0 : 6);
    off_z_ = off_y_ + (opt_.identity_correlation ? 0 : corr_free_dim(6));
    off_sigma_ = off_z_ + 6 * data_.size();
    dim_ = off_sigma_ + 3;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t n_tests() const noexcept { return data_.size(); }
  const HierOptions& options() const noexcept { return opt_; }
  const std::vector<PreparedSeries>& data() const noexcept { return data_; }

  HierParams decode(const Eigen::VectorXd& u) const {
    HierParams hp;
    hp.beta_hyper = detail::betas_from_unconstrained(u.data());
    if (opt_.fixed_sd_w)
      hp.sd_w = *opt_.fixed_sd_w;
    else
      for (int j = 0; j < 6; ++j) hp.sd_w[j] = std::exp(u[off_sd_ + j]);
    if (!opt_.identity_correlation) {
      std::vector<double> l;
      cholesky_corr_constrain(u.data() + off_y_, 6, l);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) hp.corr_chol(i, j) = l[i * 6 + j];
    }
    hp.z = Eigen::Map<const Eigen::MatrixXd>(u.data() + off_z_, 6,
                                             static_cast<Eigen::Index>(data_.size()));
    for (int j = 0; j < 3; ++j) hp.sigma[j] = std::exp(u[off_sigma_ + j]);
    return hp;
  }

  Eigen::VectorXd encode(const HierParams& hp) const {
    Eigen::VectorXd u(dim_);
    const auto b = detail::betas_to_unconstrained(hp.beta_hyper);
    for (int j = 0; j < 6; ++j) u[j] = b[j];
    if (!opt_.fixed_sd_w)
      for (int j = 0; j < 6; ++j) u[off_sd_ + j] = std::log(hp.sd_w[j]);
    if (!opt_.identity_correlation) {
      std::vector<double> l(36);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) l[i * 6 + j] = hp.corr_chol(i, j);
      const auto y = cholesky_corr_free(l, 6);
      for (std::size_t j = 0; j < y.size(); ++j) u[off_y_ + j] = y[j];
    }
    Eigen::Map<Eigen::MatrixXd>(u.data() + off_z_, 6,
                                static_cast<Eigen::Index>(data_.size())) = hp.z;
    for (int j = 0; j < 3; ++j) u[off_sigma_ + j] = std::log(hp.sigma[j]);
    return u;
  }

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    grad.setZero(dim_);
    const HierParams hp = decode(u);
    const std::size_t n = data_.size();

    double g_beta[6] = {};
    Vector6 g_sd = Vector6::Zero();
    Matrix6 g_l = Matrix6::Zero();
    double g_sigma[3] = {};
    std::vector<double> terms;
    if (opt_.include_likelihood) {
      terms.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Index c = static_cast<Eigen::Index>(i);
        const Vector6 lz = hp.corr_chol * hp.z.col(c);
        const MbwParams p = hp.test_params(i);
        double g[9] = {};
        terms[i] = log_likelihood(data_[i], p, g);
        if (!std::isfinite(terms[i])) {
          grad.setZero(dim_);
          return kNegInf;
        }
        Vector6 a;
        for (int j = 0; j < 6; ++j) {
          g_beta[j] += g[j];
          g_sd[j] += g[j] * lz[j];
          a[j] = hp.sd_w[j] * g[j];
        }
        g_l.noalias() += a * hp.z.col(c).transpose();
        grad.segment<6>(static_cast<Eigen::Index>(off_z_ + 6 * i)) =
            hp.corr_chol.transpose() * a;
        for (int j = 0; j < 3; ++j) g_sigma[j] += g[6 + j];
      }
    }
    double lp = terms.empty() ? 0.0 : detail::pairwise_sum(terms.data(), terms.size());

    // z ~ N(0, 1)
    lp += -0.5 * hp.z.squaredNorm() - static_cast<double>(hp.z.size()) * dist::kHalfLog2Pi;
    grad.segment(static_cast<Eigen::Index>(off_z_), static_cast<Eigen::Index>(6 * n)) -=
        u.segment(static_cast<Eigen::Index>(off_z_), static_cast<Eigen::Index>(6 * n));

    lp += PriorSpec::diffuse().log_density_betas(hp.beta_hyper, g_beta);
    lp += detail::betas_to_unconstrained_grad(u.data(), hp.beta_hyper, g_beta, grad.data());

    if (!opt_.fixed_sd_w) {
      for (int j = 0; j < 6; ++j) {
        double g = g_sd[j];
        lp += noise_log_prior(hp.sd_w[j], &g) + u[off_sd_ + j];
        grad[off_sd_ + j] = g * hp.sd_w[j] + 1.0;
      }
    }
    if (!opt_.identity_correlation) lp += correlation_terms(u, g_l, grad);

    for (int j = 0; j < 3; ++j) {
      double g = g_sigma[j];
      lp += noise_log_prior(hp.sigma[j], &g) + u[off_sigma_ + j];
      grad[off_sigma_ + j] = g * hp.sigma[j] + 1.0;
    }
    if (!std::isfinite(lp)) {
      grad.setZero(dim_);
      return kNegInf;
    }
    return lp;
  }

  /// Starts near per-test log-linear estimates: population values at their
  /// medians (jittered), sd_w at their robust spread, small correlations, and
  /// z solved so that every test starts at its own estimate.
  Eigen::VectorXd initial_point(Rng& rng) const {
    const std::size_t n = data_.size();
    auto jitter = [&](double scale) { return std::exp(scale * (2 * uniform01(rng) - 1)); };
    auto med = [](std::vector<double> v) { return diag::median(std::move(v)); };

    HierParams hp;
    std::array<std::vector<double>, 9> cols;
    for (const auto& c : crude_)
      for (std::size_t j = 0; j < 9; ++j) cols[j].push_back(c.to_array()[j]);
    for (int j = 0; j < 6; ++j) hp.beta_hyper[j] = med(cols[j]) * jitter(0.1);
    hp.beta_hyper[0] = std::clamp(hp.beta_hyper[0], 0.05, 0.95);
    if (!(hp.beta_hyper[2] > 1.2 * hp.beta_hyper[1])) hp.beta_hyper[2] = 1.2 * hp.beta_hyper[1];
    for (int j = 0; j < 6; ++j) {
      if (opt_.fixed_sd_w) {
        hp.sd_w[j] = (*opt_.fixed_sd_w)[j];
        continue;
      }
      std::vector<double> dev;
      for (double v : cols[j]) dev.push_back(std::abs(v - med(cols[j])));
      const double mad = 1.4826 * med(dev);
      hp.sd_w[j] = std::max(mad, 0.01 * hp.beta_hyper[j]) * jitter(0.3);
    }
    std::vector<double> y(corr_free_dim(6), 0.0);
    if (!opt_.identity_correlation) {
      for (auto& v : y) v = 0.2 * (2 * uniform01(rng) - 1);
      std::vector<double> l;
      cholesky_corr_constrain(y.data(), 6, l);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) hp.corr_chol(i, j) = l[i * 6 + j];
    }
    hp.z.resize(6, static_cast<Eigen::Index>(n));
    const auto lower = hp.corr_chol.triangularView<Eigen::Lower>();
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = crude_[i].betas();
      Vector6 dev;
      for (int j = 0; j < 6; ++j) dev[j] = (b[j] - hp.beta_hyper[j]) / hp.sd_w[j];
      Vector6 z = lower.solve(dev);
      z = z.cwiseMax(-4.0).cwiseMin(4.0);
      hp.z.col(static_cast<Eigen::Index>(i)) = z;
      const MbwParams p = hp.test_params(i);
      if (!betas_in_domain(p.beta0, p.beta1, p.beta2, p.beta3, p.beta4, p.beta5))
        hp.z.col(static_cast<Eigen::Index>(i)).setZero();
    }
    for (int j = 0; j < 3; ++j) hp.sigma[j] = med(cols[6 + j]) * jitter(0.2);
    return encode(hp);
  }

 private:
  /// LKJ density and transform Jacobian in y, plus the chain rule of g_l
  /// (gradient with respect to L) through the transform, one dual pass per y.
  double correlation_terms(const Eigen::VectorXd& u, const Matrix6& g_l,
                           Eigen::VectorXd& grad) const {
    const std::size_t m = corr_free_dim(6);
    std::vector<Dual> y(m);
    std::vector<Dual> l;
    double value = 0;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < m; ++j) y[j] = Dual(u[off_y_ + j], j == k ? 1.0 : 0.0);
      const Dual lj = cholesky_corr_constrain(y.data(), 6, l);
      const Dual lkj = lkj_corr_cholesky_lpdf(l, 6, opt_.lkj_eta);
      value = lj.v + lkj.v;
      double g = lj.d + lkj.d;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j <= i; ++j) g += g_l(i, j) * l[i * 6 + j].d;
      grad[off_y_ + k] = g;
    }
    return value;
  }

  HierOptions opt_;
  std::vector<PreparedSeries> data_;
  std::vector<MbwParams> crude_;
  std::size_t off_sd_ = 0, off_y_ = 0, off_z_ = 0, off_sigma_ = 0, dim_ = 0;
};

/// Hyperparameter draws. Columns of `hyper`: beta0..beta5, sd_beta0..5,
/// the 36 entries of the correlation matrix (row-major), sigma_c/v/r.
struct HierSamples {
  int n_chains = 0;
  int n_samples = 0;
  std::size_t n_tests = 0;
  HierOptions options;
  std::vector<Eigen::MatrixXd> hyper;
  /// [chain] -> n_samples x 6N random effects w_i (test-major).
  std::vector<Eigen::MatrixXd> effects;
  std::vector<int> divergences;
  std::vector<std::string> warnings;

  static constexpr int kSdOffset = 6, kCorrOffset = 12, kSigmaOffset = 48, kColumns = 51;

  static std::vector<std::string> column_names() {
    std::vector<std::string> n;
    for (int j = 0; j < 6; ++j) n.push_back(MbwParams::kNames[j]);
    for (int j = 0; j < 6; ++j) n.push_back(std::string("sd_") + MbwParams::kNames[j]);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) n.push_back("corr_" + std::to_string(i) + "_" + std::to_string(j));
    n.push_back("sigma_c");
    n.push_back("sigma_v");
    n.push_back("sigma_r");
    return n;
  }

  diag::Chains column(int col) const {
    diag::Chains out;
    for (const auto& h : hyper) out.emplace_back(h.col(col).data(), h.col(col).data() + h.rows());
    return out;
  }

  diag::Chains effect(std::size_t test, int j) const {
    diag::Chains out;
    const Eigen::Index c = static_cast<Eigen::Index>(6 * test + j);
    for (const auto& e : effects) out.emplace_back(e.col(c).data(), e.col(c).data() + e.rows());
    return out;
  }

  /// Columns that are actually sampled (fixed and structural ones skipped).
  std::vector<int> free_columns() const {
    std::vector<int> c;
    for (int j = 0; j < 6; ++j) c.push_back(j);
    if (!options.fixed_sd_w)
      for (int j = 0; j < 6; ++j) c.push_back(kSdOffset + j);
    if (!options.identity_correlation)
      for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) c.push_back(kCorrOffset + i * 6 + j);
    for (int j = 0; j < 3; ++j) c.push_back(kSigmaOffset + j);
    return c;
  }

  double max_hyper_rhat() const {
    double m = 0;
    for (int c : free_columns()) {
      const double r = diag::rhat(column(c));
      if (!std::isnan(r)) m = std::max(m, r);
    }
    return m;
  }

  double column_median(int col) const {
    std::vector<double> all;
    for (const auto& c : column(col)) all.insert(all.end(), c.begin(), c.end());
    return diag::median(std::move(all));
  }
};

/// Random effects live on the natural scale, so trajectories often reach the
/// parameter-domain boundary; a smaller adapted step keeps chains mixing.
inline constexpr double kHierTargetAccept = 0.95;

inline SamplerConfig hier_sampler_config() {
  SamplerConfig cfg;
  cfg.target_accept = kHierTargetAccept;
  return cfg;
}

inline HierSamples fit_hierarchical(const std::vector<BreathSeries>& tests,
                                    const SamplerConfig& cfg, const HierOptions& opt = {}) {
  const HierTarget target(tests, opt);
  const auto chains = mcmc::run_chains(target, cfg);
  HierSamples s;
  s.n_chains = cfg.n_chains;
  s.n_samples = cfg.n_samples;
  s.n_tests = tests.size();
  s.options = opt;
  const std::size_t n = tests.size();
  for (const auto& ch : chains) {
    Eigen::MatrixXd h(ch.draws.rows(), HierSamples::kColumns);
    Eigen::MatrixXd e;
    if (opt.store_effects) e.resize(ch.draws.rows(), static_cast<Eigen::Index>(6 * n));
    for (Eigen::Index r = 0; r < ch.draws.rows(); ++r) {
      const HierParams hp = target.decode(ch.draws.row(r).transpose());
      for (int j = 0; j < 6; ++j) {
        h(r, j) = hp.beta_hyper[j];
        h(r, HierSamples::kSdOffset + j) = hp.sd_w[j];
      }
      const Matrix6 corr = hp.corr_chol * hp.corr_chol.transpose();
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) h(r, HierSamples::kCorrOffset + i * 6 + j) = corr(i, j);
      for (int j = 0; j < 3; ++j) h(r, HierSamples::kSigmaOffset + j) = hp.sigma[j];
      if (opt.store_effects)
        for (std::size_t i = 0; i < n; ++i)
          e.block<1, 6>(r, static_cast<Eigen::Index>(6 * i)) = hp.effect(i).transpose();
    }
    s.hyper.push_back(std::move(h));
    if (opt.store_effects) s.effects.push_back(std::move(e));
    s.divergences.push_back(ch.divergences);
  }
  const double rate = static_cast<double>(mcmc::total_divergences(chains)) /
                      (static_cast<double>(cfg.n_chains) * cfg.n_samples);
  if (rate > kDivergenceWarningRate)
    s.warnings.push_back("divergent transitions in " +
                         std::to_string(static_cast<int>(std::lround(rate * 100))) +
                         "% of post-warmup iterations");
  return s;
}

struct ExtractedPrior {
  Vector6 mu;
  Vector6 sd;
  Matrix6 corr;
  PriorSpec prior;
  /// Set when the median correlation matrix had to be projected.
  bool projected = false;
};

/// Sigma = diag(sd) corr diag(sd), projecting corr to the nearest positive
/// definite correlation matrix (eigenvalue floor 1e-10) if needed.
inline ExtractedPrior assemble_prior(const Vector6& mu, const Vector6& sd, const Matrix6& corr) {
  ExtractedPrior e;
  e.mu = mu;
  e.sd = sd;
  Matrix6 c = 0.5 * (corr + corr.transpose());
  c.diagonal().setOnes();
  Eigen::LLT<Matrix6> llt(c);
  const bool ok = llt.info() == Eigen::Success &&
                  (Eigen::SelfAdjointEigenSolver<Matrix6>(c).eigenvalues().array() >= 1e-10).all();
  if (!ok) {
    c = nearest_correlation(c, 1e-10, &e.projected);
    e.projected = true;
  }
  e.corr = c;
  Matrix6 sigma = sd.asDiagonal() * c * sd.asDiagonal();
  for (int j = 0; j < 6; ++j) sigma(j, j) = sd[j] * sd[j];
  e.prior = PriorSpec::informative(mu, sigma);
  return e;
}

/// mu = posterior medians of the population betas; Sigma from the median
/// random-effect SDs and the element-wise median correlation matrix.
inline ExtractedPrior extract_informative_prior(const HierSamples& s) {
  Vector6 mu, sd;
  Matrix6 corr;
  for (int j = 0; j < 6; ++j) {
    mu[j] = s.column_median(j);
    sd[j] = s.column_median(HierSamples::kSdOffset + j);
  }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      corr(i, j) = i == j ? 1.0 : s.column_median(HierSamples::kCorrOffset + i * 6 + j);
  return assemble_prior(mu, sd, corr);
}

/// Inverse of assemble_prior: (mu, sqrt(diag Sigma), correlation of Sigma).
inline ExtractedPrior decompose_prior(const PriorSpec& prior) {
  ExtractedPrior e;
  e.mu = prior.mu();
  e.sd = prior.sigma().diagonal().cwiseSqrt();
  e.corr = e.sd.cwiseInverse().asDiagonal() * prior.sigma() * e.sd.cwiseInverse().asDiagonal();
  e.corr.diagonal().setOnes();
  e.prior = prior;
  return e;
}

/// Keeps the first test seen for each participant, then splits them with a
/// seeded shuffle: round(fraction * n) go to training, the rest to validation.
template <class Record>
std::pair<std::vector<Record>, std::vector<Record>> holdout_split(
    const std::vector<Record>& records, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ParameterDomainError("holdout fraction must lie in [0, 1]");
  std::vector<Record> firsts;
  std::vector<std::string> seen;
  for (const auto& r : records) {
    if (std::find(seen.begin(), seen.end(), r.participant_id) != seen.end()) continue;
    seen.push_back(r.participant_id);
    firsts.push_back(r);
  }
  std::vector<std::size_t> order(firsts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_stream(seed, 0);
  // Fisher-Yates with our own index draws keeps the split identical across
  // standard library implementations.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(firsts.size())));
  std::pair<std::vector<Record>, std::vector<Record>> out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(firsts[order[i]]);
  return out;
}

/// Flags tests whose standalone diffuse-prior fit has any R-hat above 1.25.
inline std::vector<bool> screen_irregular(const std::vector<BreathSeries>& tests,
                                          SamplerConfig cfg, std::size_t threads = 0) {
  std::vector<bool> flags(tests.size());
  std::vector<char> raw(tests.size(), 0);
  cfg.threads = 1;
  parallel_for(tests.size(), threads ? threads : default_thread_count(), [&](std::size_t i) {
    try {
      raw[i] = !summarize(sample_posterior(tests[i], PriorSpec::diffuse(), cfg)).converged();
    } catch (const Error&) {
      raw[i] = 1;
    }
  });
  for (std::size_t i = 0; i < tests.size(); ++i) flags[i] = raw[i] != 0;
  return flags;
}

}  // namespace mbw
