#pragma once

// Convergence diagnostics and posterior summaries over per-chain draws.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace mbw::diag {

/// Minimum ESS deemed sufficient: 5m with m = 2 x number of chains.
constexpr double sufficient_ess(int n_chains) { return 5.0 * 2.0 * n_chains; }

/// Per-test convergence flag used for batch runs.
inline constexpr double kBatchRhatThreshold = 1.25;
/// Advisory threshold for single interactive fits.
inline constexpr double kStrictRhatThreshold = 1.01;

using Chains = std::vector<std::vector<double>>;

namespace detail {

inline double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_var(std::span<const double> x) {
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Variance indistinguishable from rounding noise around `centre`.
inline bool negligible_variance(double var, double centre) {
  return !(var > 1e-26 * std::max(1.0, centre * centre));
}

}  // namespace detail

/// Split R-hat: each chain is halved and the classic potential scale
/// reduction computed over the 2m half-chains. NaN when the within-chain
/// variance is zero or there are fewer than 4 draws per chain.
inline double rhat(const Chains& chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    const std::size_t n = c.size() / 2;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.emplace_back(c.data(), n);
    halves.emplace_back(c.data() + (c.size() - n), n);
  }
  const std::size_t n = halves.front().size();
  for (const auto& h : halves)
    if (h.size() != n) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(detail::mean(h));
    vars.push_back(detail::sample_var(h));
  }
  const double w = detail::mean(vars);
  if (detail::negligible_variance(w, detail::mean(means)) || !std::isfinite(w))
    return std::numeric_limits<double>::quiet_NaN();
  const double b = static_cast<double>(n) * detail::sample_var(means);
  const double var_plus = (static_cast<double>(n) - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Effective sample size from the multi-chain autocorrelation estimate with
/// Geyer's initial positive sequence made monotone. Antithetic chains may
/// exceed the nominal draw count. NaN for zero variance.
inline double ess(const Chains& chains) {
  const std::size_t m = chains.size();
  if (m == 0) return std::numeric_limits<double>::quiet_NaN();
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> chain_mean(m), chain_var(m);
  std::vector<std::vector<double>> centred(m);
  for (std::size_t c = 0; c < m; ++c) {
    std::span<const double> x(chains[c].data(), n);
    chain_mean[c] = detail::mean(x);
    centred[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) centred[c][i] = x[i] - chain_mean[c];
  }
  // Biased autocovariance at lag t, averaged over chains.
  auto mean_acov = [&](std::size_t lag) {
    double s = 0;
    for (std::size_t c = 0; c < m; ++c) {
      double a = 0;
      const auto& x = centred[c];
      for (std::size_t i = 0; i + lag < n; ++i) a += x[i] * x[i + lag];
      s += a / static_cast<double>(n);
    }
    return s / static_cast<double>(m);
  };
  for (std::size_t c = 0; c < m; ++c) {
    double a = 0;
    for (double v : centred[c]) a += v * v;
    chain_var[c] = a / static_cast<double>(n) * n / (n - 1.0);
  }
  const double mean_var = detail::mean(chain_var);
  double var_plus = mean_var * (n - 1.0) / n;
  if (m > 1) var_plus += detail::sample_var(chain_mean);
  if (detail::negligible_variance(mean_var, detail::mean(chain_mean)))
    return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> rho(n + 1, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0) rho[max_s + 1] = rho_even;
  for (std::size_t t = 1; t + 3 <= max_s; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = (rho[t - 1] + rho[t]) / 2;
      rho[t + 2] = rho[t + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t t = 0; t <= max_s; ++t) tau += 2.0 * rho[t];
  tau += rho[max_s + 1];
  return total / std::max(tau, 1.0 / std::log10(total));
}

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = (static_cast<double>(n) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  return quantile_sorted(x, p);
}

inline double median(std::vector<double> x) { return quantile(std::move(x), 0.5); }

struct Summary {
  double mean = 0;
  double sd = 0;
  double median = 0;
  std::vector<double> quantiles;
  double rhat = 0;
  double ess = 0;
  bool rhat_defined = true;
};

inline const std::vector<double>& default_probs() {
  static const std::vector<double> p = {0.025, 0.5, 0.975};
  return p;
}

inline Summary summarize(const Chains& chains,
                         std::span<const double> probs = default_probs()) {
  Summary s;
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  std::sort(all.begin(), all.end());
  s.mean = detail::mean(all);
  const double var = all.size() > 1 ? detail::sample_var(all) : 0.0;
  s.sd = detail::negligible_variance(var, s.mean) ? 0.0 : std::sqrt(var);
  s.median = quantile_sorted(all, 0.5);
  for (double p : probs) s.quantiles.push_back(quantile_sorted(all, p));
  s.rhat = rhat(chains);
  s.rhat_defined = !std::isnan(s.rhat);
  s.ess = ess(chains);
  return s;
}

/// Partial autocorrelations at lags 1..max_lag via Durbin-Levinson on the
/// biased sample autocorrelation. All NaN when the input has zero variance.
inline std::vector<double> pacf(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  std::vector<double> out(max_lag, std::numeric_limits<double>::quiet_NaN());
  if (n < 2 || max_lag == 0) return out;
  const double m = detail::mean(x);
  std::vector<double> r(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag && lag < n; ++lag) {
    double a = 0;
    for (std::size_t i = 0; i + lag < n; ++i) a += (x[i] - m) * (x[i + lag] - m);
    r[lag] = a / static_cast<double>(n);
  }
  if (detail::negligible_variance(r[0], m)) return out;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) r[lag] /= r[0];
  r[0] = 1.0;

  std::vector<double> phi(max_lag + 1, 0.0), prev(max_lag + 1, 0.0);
  double v = 1.0;
  for (std::size_t k = 1; k <= max_lag && k < n; ++k) {
    double num = r[k];
    for (std::size_t j = 1; j < k; ++j) num -= prev[j] * r[k - j];
    const double phikk = num / v;
    phi[k] = phikk;
    for (std::size_t j = 1; j < k; ++j) phi[j] = prev[j] - phikk * prev[k - j];
    v *= (1.0 - phikk * phikk);
    out[k - 1] = phikk;
    prev = phi;
    if (!(v > 0)) break;
  }
  return out;
}

}  // namespace mbw::diag
