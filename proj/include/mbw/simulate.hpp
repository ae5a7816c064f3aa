#pragma once

// Generative side of the observation model.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mbw/core.hpp"
#include "mbw/model.hpp"
#include "mbw/random.hpp"

namespace mbw {

enum class PredictiveVariant {
  /// Normal noise on log increments, prefix-summed (always monotone).
  Derivative,
  /// Log-normal noise directly on the cumulative curves.
  Cumulative,
};

/// Raw simulated curves; unlike BreathSeries these may violate monotonicity.
struct SimulatedSeries {
  std::vector<double> gas, cevgm, cevtg;

  /// Adjacent pairs (in either cumulative curve) that fail to increase.
  std::size_t monotonicity_violations() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i < cevgm.size(); ++i) {
      if (!(cevgm[i] > cevgm[i - 1])) ++n;
      if (!(cevtg[i] > cevtg[i - 1])) ++n;
    }
    return n;
  }

  BreathSeries to_series(std::string test_id = {}) const {
    return BreathSeries(gas, cevgm, cevtg, std::move(test_id));
  }
};

/// Simulates `n_breaths` breaths (k = 0..n_breaths-1). Draws are consumed in
/// breath order, so a shorter simulation with the same generator state is a
/// prefix of a longer one. gas[0] is emitted as exactly 1 when
/// `exact_start` is set.
inline SimulatedSeries simulate_series(const MbwParams& p, std::size_t n_breaths,
                                       Rng& rng,
                                       PredictiveVariant variant = PredictiveVariant::Derivative,
                                       bool exact_start = false) {
  SimulatedSeries s;
  s.gas.resize(n_breaths);
  s.cevgm.assign(n_breaths, 0.0);
  s.cevtg.assign(n_breaths, 0.0);
  const double log_b5 = std::log(p.beta5);
  for (std::size_t i = 0; i < n_breaths; ++i) {
    const double k = static_cast<double>(i);
    const double zc = std_normal(rng);
    const double mu = detail::log_gas_curve(k, p.beta0, p.beta1, p.beta2);
    s.gas[i] = (i == 0 && exact_start) ? 1.0 : std::exp(mu + p.sigma_c * zc);
    if (i == 0) continue;
    const double zv = std_normal(rng);
    const double zr = std_normal(rng);
    if (variant == PredictiveVariant::Derivative) {
      const double mr = log_cevtg_increment_mean(k - 1.0, p.beta3, p.beta4);
      s.cevgm[i] = s.cevgm[i - 1] + std::exp(log_b5 + p.sigma_v * zv);
      s.cevtg[i] = s.cevtg[i - 1] + std::exp(mr + p.sigma_r * zr);
    } else {
      s.cevgm[i] = p.beta5 * k * std::exp(p.sigma_v * zv);
      s.cevtg[i] = detail::cevtg_curve(k, p) * std::exp(p.sigma_r * zr);
    }
  }
  return s;
}

}  // namespace mbw
