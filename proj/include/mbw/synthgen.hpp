#pragma once

// Synthetic washout cohorts drawn from population hyperparameters.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbw/core.hpp"
#include "mbw/matrix.hpp"
#include "mbw/model.hpp"
#include "mbw/parallel.hpp"
#include "mbw/random.hpp"
#include "mbw/simulate.hpp"

namespace mbw {

struct NoiseLevels {
  double sigma_c = 0.10;
  double sigma_v = 0.08;
  double sigma_r = 0.08;
};

/// Population medians of (beta0..beta5).
inline Vector6 table1_mu() {
  Vector6 m;
  m << 0.68, 0.129, 0.53, 124.3, 0.137, 29.96;
  return m;
}

/// Random-effect standard deviations of (beta0..beta5).
inline Vector6 table1_sd() {
  Vector6 s;
  s << 0.15, 0.023, 0.2, 18.27, 0.024, 6.38;
  return s;
}

/// Published random-effect correlations, as printed (not positive definite).
inline Matrix6 table1_correlation_raw() {
  Matrix6 r = Matrix6::Identity();
  const auto set = [&](int i, int j, double v) { r(i, j) = r(j, i) = v; };
  set(0, 2, 0.25);
  set(0, 3, 0.83);
  set(0, 4, 0.02);
  set(0, 5, -0.15);
  set(1, 3, 0.25);
  set(1, 4, -0.11);
  set(1, 5, 0.91);
  set(2, 4, -0.08);
  set(2, 5, -0.10);
  set(3, 5, -0.14);
  return r;
}

/// Eigenvalue floor used to make the published correlations usable.
inline constexpr double kTable1EigenFloor = 0.01;

inline Matrix6 table1_correlation() {
  return nearest_correlation(table1_correlation_raw(), kTable1EigenFloor);
}

inline Matrix6 table1_covariance() {
  return covariance_from(table1_sd(), table1_correlation());
}

struct CohortSpec {
  std::size_t n_tests = 100;
  /// Tests per participant; each replicate has its own parameter draw.
  std::size_t replicates = 1;
  Vector6 hyper_mu = table1_mu();
  Matrix6 hyper_sigma = table1_covariance();
  NoiseLevels noise;
  /// Fixed series length; when absent the test runs until GAS stays at or
  /// below `stop_threshold` for three breaths, capped at `max_breath`.
  std::optional<std::size_t> fixed_length;
  double stop_threshold = kDefaultThreshold;
  std::size_t max_breath = 200;
  std::uint64_t seed = 1;
};

struct SyntheticTest {
  std::string test_id;
  std::string participant_id;
  std::string replicate_id;
  BreathSeries series;
  MbwParams truth;
  ModelOutcomes true_outcomes;
};

inline constexpr int kMaxDomainRejections = 10000;

/// Draws curve parameters from MVN(mu, sigma) restricted to the domain.
/// Throws ParameterDomainError when more than 99% of draws are rejected.
inline Vector6 draw_domain_betas(const Vector6& mu, const Eigen::LLT<Matrix6>& llt,
                                 Rng& rng) {
  const Matrix6 l = llt.matrixL();
  int rejected = 0;
  for (int attempt = 1; attempt <= kMaxDomainRejections; ++attempt) {
    Vector6 z;
    for (int i = 0; i < 6; ++i) z[i] = std_normal(rng);
    const Vector6 b = mu + l * z;
    if (betas_in_domain(b[0], b[1], b[2], b[3], b[4], b[5])) return b;
    ++rejected;
    if (attempt >= 100 && rejected > 0.99 * attempt)
      throw ParameterDomainError("hyperparameters put over 99% of draws outside "
                                 "the parameter domain");
  }
  throw ParameterDomainError("no in-domain parameter draw");
}

inline void validate(const CohortSpec& spec) {
  if (!(spec.noise.sigma_c >= 0 && spec.noise.sigma_v >= 0 && spec.noise.sigma_r >= 0))
    throw ParameterDomainError("noise levels must be non-negative");
  if (spec.fixed_length && *spec.fixed_length < 3)
    throw ParameterDomainError("series need at least 3 breaths");
  if (!(spec.stop_threshold > 0 && spec.stop_threshold < 1))
    throw ParameterDomainError("stop threshold must lie in (0, 1)");
  if (spec.replicates < 1) throw ParameterDomainError("replicates must be positive");
  if (Eigen::LLT<Matrix6>(spec.hyper_sigma).info() != Eigen::Success)
    throw ParameterDomainError("hyperparameter covariance is not positive definite");
}

/// Test i uses streams (seed, i, 0) for its parameters and (seed, i, 1) for
/// its observations, so cohorts are identical regardless of thread count.
inline std::vector<SyntheticTest> generate_cohort(const CohortSpec& spec,
                                                  std::size_t threads = 1) {
  validate(spec);
  const Eigen::LLT<Matrix6> llt(spec.hyper_sigma);
  std::vector<SyntheticTest> out(spec.n_tests);
  parallel_for(spec.n_tests, threads, [&](std::size_t i) {
    SyntheticTest& t = out[i];
    Rng prng = make_stream(spec.seed, i, 0);
    const Vector6 b = draw_domain_betas(spec.hyper_mu, llt, prng);
    t.truth.set_betas(std::span<const double>(b.data(), 6));
    t.truth.sigma_c = spec.noise.sigma_c;
    t.truth.sigma_v = spec.noise.sigma_v;
    t.truth.sigma_r = spec.noise.sigma_r;

    const std::size_t n = spec.fixed_length ? *spec.fixed_length : spec.max_breath + 1;
    Rng orng = make_stream(spec.seed, i, 1);
    SimulatedSeries s = simulate_series(t.truth, n, orng, PredictiveVariant::Derivative, true);
    if (!spec.fixed_length) {
      if (const auto k = first_sustained_at_or_below(s.gas, spec.stop_threshold)) {
        const std::size_t m = *k + 3;
        s.gas.resize(m);
        s.cevgm.resize(m);
        s.cevtg.resize(m);
      }
    }
    const std::size_t participant = i / spec.replicates;
    const std::size_t replicate = i % spec.replicates;
    t.participant_id = "p" + std::to_string(participant + 1);
    t.replicate_id = std::to_string(replicate + 1);
    t.test_id = spec.replicates == 1 ? "t" + std::to_string(i + 1)
                                     : t.participant_id + "r" + t.replicate_id;
    t.series = s.to_series(t.test_id);
    t.true_outcomes = outcomes_model_unbounded(t.truth);
  });
  return out;
}

}  // namespace mbw
