#pragma once

// Posterior sampling for a single test, derived outcomes per draw, summary
// tables and posterior-predictive checks.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "mbw/core.hpp"
#include "mbw/diagnostics.hpp"
#include "mbw/model.hpp"
#include "mbw/sampler.hpp"
#include "mbw/simulate.hpp"

namespace mbw {

using mcmc::SamplerConfig;

/// Per-draw model-based outcomes.
struct DerivedDraw {
  double theta = 0, cev = 0, frc_star = 0, frc_m = 0, lci_star = 0, lci_m = 0;

  static constexpr std::size_t kSize = 6;
  static constexpr std::array<const char*, kSize> kNames = {
      "theta", "cev", "frc_star", "frc_m", "lci_star", "lci_m"};

  std::array<double, kSize> to_array() const {
    return {theta, cev, frc_star, frc_m, lci_star, lci_m};
  }

  static DerivedDraw from_params(const MbwParams& p, double threshold) {
    DerivedDraw d;
    try {
      const ModelOutcomes o = outcomes_model_unbounded(p, threshold);
      d.theta = o.asymptotic.theta;
      d.cev = o.asymptotic.cev;
      d.frc_star = o.asymptotic.frc;
      d.lci_star = o.asymptotic.lci;
      d.frc_m = o.theta_based.frc;
      d.lci_m = o.theta_based.lci;
    } catch (const NoCrossingError&) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      d = {nan, nan, p.beta3, nan, nan, nan};
    }
    return d;
  }
};

struct InferenceOptions {
  double threshold = kDefaultThreshold;
  /// Disable to sample the prior only.
  bool include_likelihood = true;
};

struct PosteriorSamples {
  int n_chains = 0;
  int n_samples = 0;
  std::size_t n_breaths = 0;
  double threshold = kDefaultThreshold;
  /// [chain] -> n_samples x 9, unconstrained coordinates.
  std::vector<Eigen::MatrixXd> unconstrained;
  /// [chain][iteration]
  std::vector<std::vector<MbwParams>> params;
  std::vector<std::vector<DerivedDraw>> derived;

  std::vector<int> divergences;
  std::vector<double> step_sizes;
  std::vector<std::string> warnings;

  std::size_t total_draws() const {
    return static_cast<std::size_t>(n_chains) * static_cast<std::size_t>(n_samples);
  }

  /// Draws of a named parameter or derived quantity, one vector per chain.
  diag::Chains column(std::string_view name) const {
    diag::Chains out(n_chains);
    for (std::size_t j = 0; j < MbwParams::kSize; ++j)
      if (name == MbwParams::kNames[j]) {
        for (int c = 0; c < n_chains; ++c)
          for (const auto& p : params[c]) out[c].push_back(p.to_array()[j]);
        return out;
      }
    for (std::size_t j = 0; j < DerivedDraw::kSize; ++j)
      if (name == DerivedDraw::kNames[j]) {
        for (int c = 0; c < n_chains; ++c)
          for (const auto& d : derived[c]) out[c].push_back(d.to_array()[j]);
        return out;
      }
    throw Error("unknown quantity: " + std::string(name));
  }

  static std::vector<std::string> quantity_names() {
    std::vector<std::string> n(MbwParams::kNames.begin(), MbwParams::kNames.end());
    n.insert(n.end(), DerivedDraw::kNames.begin(), DerivedDraw::kNames.end());
    return n;
  }
};

inline constexpr double kDivergenceWarningRate = 0.2;

/// Runs the configured sampler on the unconstrained posterior of one test.
/// Throws InitializationError when a chain cannot find a finite start.
inline PosteriorSamples sample_posterior(const BreathSeries& series,
                                         const PriorSpec& prior,
                                         const SamplerConfig& cfg,
                                         const InferenceOptions& opt = {}) {
  if (cfg.n_chains < 1 || cfg.n_samples < 1 || cfg.n_warmup < 0)
    throw ParameterDomainError("sampler needs at least one chain and one draw");
  const PosteriorTarget target(series, prior, opt.include_likelihood);
  const auto chains = mcmc::run_chains(target, cfg);

  PosteriorSamples s;
  s.n_chains = cfg.n_chains;
  s.n_samples = cfg.n_samples;
  s.n_breaths = series.size();
  s.threshold = opt.threshold;
  for (const auto& ch : chains) {
    s.unconstrained.push_back(ch.draws);
    std::vector<MbwParams> ps;
    std::vector<DerivedDraw> ds;
    ps.reserve(cfg.n_samples);
    ds.reserve(cfg.n_samples);
    for (Eigen::Index i = 0; i < ch.draws.rows(); ++i) {
      const Eigen::VectorXd u = ch.draws.row(i).transpose();
      ps.push_back(transform::from_unconstrained(u.data()));
      ds.push_back(DerivedDraw::from_params(ps.back(), opt.threshold));
    }
    s.params.push_back(std::move(ps));
    s.derived.push_back(std::move(ds));
    s.divergences.push_back(ch.divergences);
    s.step_sizes.push_back(ch.step_size);
  }
  const double rate = static_cast<double>(mcmc::total_divergences(chains)) /
                      static_cast<double>(s.total_draws());
  if (rate > kDivergenceWarningRate)
    s.warnings.push_back("divergent transitions in " +
                         std::to_string(static_cast<int>(std::lround(rate * 100))) +
                         "% of post-warmup iterations");
  return s;
}

struct SummaryRow {
  std::string name;
  diag::Summary stats;
};

struct SummaryTable {
  std::vector<double> probs;
  std::vector<SummaryRow> rows;

  const SummaryRow& at(std::string_view name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw Error("no summary row named " + std::string(name));
  }

  /// Largest defined R-hat over the model parameters (not derived quantities).
  double max_parameter_rhat() const {
    double m = 0.0;
    for (std::size_t j = 0; j < MbwParams::kSize && j < rows.size(); ++j)
      if (rows[j].stats.rhat_defined) m = std::max(m, rows[j].stats.rhat);
    return m;
  }

  bool converged(double threshold = diag::kBatchRhatThreshold) const {
    return !(max_parameter_rhat() > threshold);
  }
};

inline SummaryTable summarize(const PosteriorSamples& s,
                              std::span<const double> probs = diag::default_probs()) {
  SummaryTable t;
  t.probs.assign(probs.begin(), probs.end());
  for (const auto& name : PosteriorSamples::quantity_names())
    t.rows.push_back({name, diag::summarize(s.column(name), probs)});
  return t;
}

/// Element-wise posterior medians of the model parameters.
inline MbwParams posterior_medians(const PosteriorSamples& s) {
  std::array<double, MbwParams::kSize> a{};
  for (std::size_t j = 0; j < MbwParams::kSize; ++j) {
    std::vector<double> all;
    for (const auto& c : s.column(MbwParams::kNames[j]))
      all.insert(all.end(), c.begin(), c.end());
    a[j] = diag::median(std::move(all));
  }
  return MbwParams::from_array(a);
}

struct PredictiveDataset {
  std::size_t chain = 0, iteration = 0;
  SimulatedSeries series;
  std::size_t violations = 0;
};

/// Simulates `n_datasets` series of the observed length, each from a draw
/// picked uniformly (with replacement) from the pooled posterior.
inline std::vector<PredictiveDataset> posterior_predictive(
    const PosteriorSamples& s, std::size_t n_datasets, PredictiveVariant variant,
    std::uint64_t seed) {
  std::vector<PredictiveDataset> out;
  out.reserve(n_datasets);
  Rng pick = make_stream(seed, 0);
  const std::size_t total = s.total_draws();
  for (std::size_t i = 0; i < n_datasets; ++i) {
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, total - 1)(pick);
    PredictiveDataset d;
    d.chain = idx / static_cast<std::size_t>(s.n_samples);
    d.iteration = idx % static_cast<std::size_t>(s.n_samples);
    Rng rng = make_stream(seed, 1, i);
    d.series = simulate_series(s.params[d.chain][d.iteration], s.n_breaths, rng, variant);
    d.violations = d.series.monotonicity_violations();
    out.push_back(std::move(d));
  }
  return out;
}

/// Residuals on the modelling scales at parameters `p`.
struct CurveResiduals {
  std::vector<double> gas, cevgm, cevtg;
};

inline CurveResiduals residuals(const BreathSeries& series, const MbwParams& p) {
  validate(p);
  const PreparedSeries d(series);
  CurveResiduals r;
  for (std::size_t i = 0; i < d.size(); ++i)
    r.gas.push_back(d.log_gas[i] -
                    detail::log_gas_curve(d.k[i], p.beta0, p.beta1, p.beta2));
  const double mv = std::log(p.beta5);
  for (std::size_t m = 0; m < d.log_dv.size(); ++m) {
    r.cevgm.push_back(d.log_dv[m] - mv);
    r.cevtg.push_back(d.log_dr[m] - log_cevtg_increment_mean(d.k[m], p.beta3, p.beta4));
  }
  return r;
}

/// Partial autocorrelations (lags 1..max_lag) of each curve's residuals.
inline CurveResiduals residual_pacf(const BreathSeries& series, const MbwParams& fitted,
                                    std::size_t max_lag) {
  const CurveResiduals r = residuals(series, fitted);
  return {diag::pacf(r.gas, max_lag), diag::pacf(r.cevgm, max_lag),
          diag::pacf(r.cevtg, max_lag)};
}

}  // namespace mbw
