#pragma once

// Per-breath washout data, the three curve models and the standard and
// model-based end-of-test outcomes (CEV, FRC, LCI). Everything here is a pure
// function of its arguments.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbw/error.hpp"

namespace mbw {

/// Conventional end-of-test GAS threshold.
inline constexpr double kDefaultThreshold = 1.0 / 40.0;
/// Upper end of the bracket searched for the model-based end-test breath.
inline constexpr double kDefaultMaxBreath = 200.0;

/// One washout test on the per-breath scale. Breath indices are implicit and
/// contiguous from 0; construction validates every invariant.
class BreathSeries {
 public:
  BreathSeries() = default;

  BreathSeries(std::vector<double> gas, std::vector<double> cevgm,
               std::vector<double> cevtg, const std::string& test_id = {})
      : gas_(std::move(gas)), cevgm_(std::move(cevgm)), cevtg_(std::move(cevtg)) {
    validate(test_id);
  }

  std::size_t size() const noexcept { return gas_.size(); }
  bool empty() const noexcept { return gas_.empty(); }

  std::span<const double> gas() const noexcept { return gas_; }
  std::span<const double> cevgm() const noexcept { return cevgm_; }
  std::span<const double> cevtg() const noexcept { return cevtg_; }

  /// Breath index of observation i (always i).
  static int k(std::size_t i) noexcept { return static_cast<int>(i); }

  /// Breaths 0..last inclusive.
  BreathSeries prefix(std::size_t last) const {
    const std::size_t n = std::min(last + 1, size());
    return BreathSeries(std::vector<double>(gas_.begin(), gas_.begin() + n),
                        std::vector<double>(cevgm_.begin(), cevgm_.begin() + n),
                        std::vector<double>(cevtg_.begin(), cevtg_.begin() + n));
  }

  friend bool operator==(const BreathSeries&, const BreathSeries&) = default;

 private:
  void validate(const std::string& id) const {
    const std::size_t m = gas_.size();
    if (cevgm_.size() != m || cevtg_.size() != m)
      throw DataError(DataErrorKind::LengthMismatch,
                      "gas, cevgm and cevtg must have equal length", id);
    if (m < 3)
      throw DataError(DataErrorKind::TooShort,
                      "a series needs at least 3 breaths", id);
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::isfinite(gas_[i]) || !std::isfinite(cevgm_[i]) ||
          !std::isfinite(cevtg_[i]))
        throw DataError(DataErrorKind::MalformedNumeric, "non-finite value", id,
                        static_cast<long>(i));
      if (!(gas_[i] > 0.0))
        throw DataError(DataErrorKind::NonPositiveGas, "gas must be positive",
                        id, static_cast<long>(i));
    }
    if (cevgm_[0] != 0.0 || cevtg_[0] != 0.0)
      throw DataError(DataErrorKind::NonZeroStart,
                      "cumulative volumes must start at 0", id, 0);
    for (std::size_t i = 1; i < m; ++i) {
      if (!(cevgm_[i] > cevgm_[i - 1]))
        throw DataError(DataErrorKind::MonotonicityViolation,
                        "cevgm not strictly increasing", id, static_cast<long>(i));
      if (!(cevtg_[i] > cevtg_[i - 1]))
        throw DataError(DataErrorKind::MonotonicityViolation,
                        "cevtg not strictly increasing", id, static_cast<long>(i));
    }
  }

  std::vector<double> gas_;
  std::vector<double> cevgm_;
  std::vector<double> cevtg_;
};

/// Curve parameters and log-scale noise SDs.
///
/// beta0 weights exp(-beta1 k), the smaller of the two decay constants;
/// beta3 is the CEVTG asymptote (model FRC), beta4 its decay constant, and
/// beta5 the expired volume per breath.
struct MbwParams {
  double beta0 = 0.5;
  double beta1 = 0.1;
  double beta2 = 0.5;
  double beta3 = 100.0;
  double beta4 = 0.1;
  double beta5 = 30.0;
  double sigma_c = 0.1;
  double sigma_v = 0.1;
  double sigma_r = 0.1;

  static constexpr std::size_t kSize = 9;
  static constexpr std::array<const char*, kSize> kNames = {
      "beta0", "beta1", "beta2", "beta3", "beta4",
      "beta5", "sigma_c", "sigma_v", "sigma_r"};

  std::array<double, kSize> to_array() const {
    return {beta0, beta1, beta2, beta3, beta4, beta5, sigma_c, sigma_v, sigma_r};
  }
  static MbwParams from_array(std::span<const double> a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]};
  }
  std::array<double, 6> betas() const {
    return {beta0, beta1, beta2, beta3, beta4, beta5};
  }
  void set_betas(std::span<const double> b) {
    beta0 = b[0]; beta1 = b[1]; beta2 = b[2];
    beta3 = b[3]; beta4 = b[4]; beta5 = b[5];
  }

  friend bool operator==(const MbwParams&, const MbwParams&) = default;
};

inline bool betas_in_domain(double b0, double b1, double b2, double b3,
                            double b4, double b5) noexcept {
  return b0 > 0.0 && b0 < 1.0 && b1 > 0.0 && b2 > b1 && b3 > 0.0 &&
         b4 > 0.0 && b5 > 0.0 && std::isfinite(b2) && std::isfinite(b3) &&
         std::isfinite(b4) && std::isfinite(b5);
}

inline bool in_domain(const MbwParams& p) noexcept {
  return betas_in_domain(p.beta0, p.beta1, p.beta2, p.beta3, p.beta4, p.beta5) &&
         p.sigma_c > 0.0 && p.sigma_v > 0.0 && p.sigma_r > 0.0 &&
         std::isfinite(p.sigma_c) && std::isfinite(p.sigma_v) &&
         std::isfinite(p.sigma_r);
}

inline void validate(const MbwParams& p) {
  if (!in_domain(p))
    throw ParameterDomainError(
        "MbwParams out of domain: need 0<beta0<1, 0<beta1<beta2, and positive "
        "beta3, beta4, beta5 and noise scales");
}

/// Curve parameters only; the mean curves and outcomes ignore the noise scales.
inline void validate_curve(const MbwParams& p) {
  if (!betas_in_domain(p.beta0, p.beta1, p.beta2, p.beta3, p.beta4, p.beta5))
    throw ParameterDomainError(
        "curve parameters out of domain: need 0<beta0<1, 0<beta1<beta2, and "
        "positive beta3, beta4, beta5");
}

namespace detail {

inline double gas_curve(double k, const MbwParams& p) noexcept {
  return p.beta0 * std::exp(-p.beta1 * k) + (1.0 - p.beta0) * std::exp(-p.beta2 * k);
}

/// log f(k) without underflow for large k.
inline double log_gas_curve(double k, double b0, double b1, double b2) noexcept {
  const double a = std::log(b0) - b1 * k;
  const double b = std::log1p(-b0) - b2 * k;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double cevtg_curve(double k, const MbwParams& p) noexcept {
  return -p.beta3 * std::expm1(-p.beta4 * k);
}

}  // namespace detail

/// Two-phase exponential decay of the GAS proportion. f(0) = 1 exactly.
inline double gas_curve(double k, const MbwParams& p) {
  validate_curve(p);
  return detail::gas_curve(k, p);
}

/// Cumulative expired volume of gas mixture: beta5 * k.
inline double cevgm_curve(double k, const MbwParams& p) {
  validate_curve(p);
  return p.beta5 * k;
}

/// Cumulative expired tracer-gas volume: beta3 * (1 - exp(-beta4 k)).
inline double cevtg_curve(double k, const MbwParams& p) {
  validate_curve(p);
  return detail::cevtg_curve(k, p);
}

/// ln(series[i+1] - series[i]) for every adjacent pair.
inline std::vector<double> log_increments(std::span<const double> series) {
  std::vector<double> out;
  if (series.size() < 2) return out;
  out.reserve(series.size() - 1);
  for (std::size_t i = 0; i + 1 < series.size(); ++i) {
    const double d = series[i + 1] - series[i];
    if (!(d > 0.0))
      throw MonotonicityError(
          "series not strictly increasing between index " + std::to_string(i) +
              " and " + std::to_string(i + 1),
          i);
    out.push_back(std::log(d));
  }
  return out;
}

/// First index k with gas[k], gas[k+1], gas[k+2] all <= threshold.
inline std::optional<std::size_t> first_sustained_at_or_below(
    std::span<const double> gas, double threshold) {
  for (std::size_t i = 0; i + 2 < gas.size(); ++i)
    if (gas[i] <= threshold && gas[i + 1] <= threshold && gas[i + 2] <= threshold)
      return i;
  return std::nullopt;
}

/// Standard end-test breath k(40): the first of three consecutive breaths at or
/// below the threshold. Absent for an incomplete test.
inline std::optional<std::size_t> end_test_breath_standard(
    const BreathSeries& series, double threshold = kDefaultThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ParameterDomainError("threshold must lie in (0, 1)");
  return first_sustained_at_or_below(series.gas(), threshold);
}

enum class ThetaSolver {
  Bisection,  ///< bracketing bisection to an absolute x tolerance
  Grid,       ///< reference line search on a 1/nmax grid
};

struct ThetaOptions {
  ThetaSolver solver = ThetaSolver::Bisection;
  double max_breath = kDefaultMaxBreath;
  double x_tolerance = 1e-10;
  int grid_resolution = 100;  // nmax
};

/// Real-valued breath theta with f(theta) = threshold.
///
/// Bisection mode returns a point within `x_tolerance` of the root. Grid mode
/// scans integer breaths for the crossing interval and then steps through it
/// at resolution 1/nmax, returning the first grid point with f <= threshold;
/// that value lies in [root, root + 1/nmax).
inline double end_test_breath_model(const MbwParams& p,
                                    double threshold = kDefaultThreshold,
                                    const ThetaOptions& opt = {}) {
  validate_curve(p);
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ParameterDomainError("threshold must lie in (0, 1)");
  if (!(detail::gas_curve(opt.max_breath, p) <= threshold))
    throw NoCrossingError("gas curve does not reach the threshold by breath " +
                          std::to_string(opt.max_breath));

  if (opt.solver == ThetaSolver::Grid) {
    const int nmax = opt.grid_resolution;
    const double step = 1.0 / nmax;
    const auto passes = [&](double t1, double t2) {
      return detail::gas_curve(t1, p) > threshold &&
             detail::gas_curve(t2, p) <= threshold;
    };
    const int last = static_cast<int>(std::ceil(opt.max_breath));
    for (int m = 1; m <= last; ++m) {
      if (!passes(m - 1, m)) continue;
      double theta = static_cast<double>(m);
      for (int i = (m - 1) * nmax; i <= m * nmax; ++i)
        if (passes(step * (i - 1), step * i)) theta = step * i;
      return theta;
    }
    throw NoCrossingError("grid search found no crossing");
  }

  double lo = 0.0;
  double hi = opt.max_breath;
  while (hi - lo > opt.x_tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (detail::gas_curve(mid, p) > threshold)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

enum class OutcomeMethod { Standard, ModelTheta, ModelAsymptoticFrc };

inline const char* to_string(OutcomeMethod m) {
  switch (m) {
    case OutcomeMethod::Standard: return "standard";
    case OutcomeMethod::ModelTheta: return "model_theta";
    case OutcomeMethod::ModelAsymptoticFrc: return "model_asymptotic_frc";
  }
  return "?";
}

struct MbwOutcomes {
  double theta = 0.0;
  double cev = 0.0;
  double frc = 0.0;
  double lci = 0.0;
  OutcomeMethod method = OutcomeMethod::Standard;
};

/// Both model-based definitions. They share theta and CEV; `asymptotic` uses
/// FRC = beta3 and is the preferred LCI.
struct ModelOutcomes {
  MbwOutcomes theta_based;
  MbwOutcomes asymptotic;
};

/// LCI = v(k40) / (r(k40) / (1 - c(k40))). Absent when the test is incomplete.
inline std::optional<MbwOutcomes> outcomes_standard(
    const BreathSeries& series, double threshold = kDefaultThreshold) {
  const auto k40 = end_test_breath_standard(series, threshold);
  if (!k40) return std::nullopt;
  const double c = series.gas()[*k40];
  if (!(c < 1.0))
    throw DivisionDomainError("gas at the end-test breath must be below 1");
  MbwOutcomes out;
  out.method = OutcomeMethod::Standard;
  out.theta = static_cast<double>(*k40);
  out.cev = series.cevgm()[*k40];
  out.frc = series.cevtg()[*k40] / (1.0 - c);
  out.lci = out.cev / out.frc;
  return out;
}

namespace detail {

inline ModelOutcomes outcomes_at_theta(const MbwParams& p, double theta) {
  ModelOutcomes out;
  const double cev = p.beta5 * theta;
  const double f = detail::gas_curve(theta, p);
  const double h = detail::cevtg_curve(theta, p);

  out.theta_based.method = OutcomeMethod::ModelTheta;
  out.theta_based.theta = theta;
  out.theta_based.cev = cev;
  out.theta_based.frc = h / (1.0 - f);
  out.theta_based.lci = cev / out.theta_based.frc;

  out.asymptotic.method = OutcomeMethod::ModelAsymptoticFrc;
  out.asymptotic.theta = theta;
  out.asymptotic.cev = cev;
  out.asymptotic.frc = p.beta3;
  out.asymptotic.lci = cev / p.beta3;
  return out;
}

}  // namespace detail

inline ModelOutcomes outcomes_model(const MbwParams& p,
                                    double threshold = kDefaultThreshold,
                                    const ThetaOptions& opt = {}) {
  return detail::outcomes_at_theta(p, end_test_breath_model(p, threshold, opt));
}

/// Like `outcomes_model`, but widens the bracket (doubling) instead of
/// failing when the crossing lies beyond `opt.max_breath`. f decays to zero,
/// so a crossing always exists for in-domain parameters.
inline ModelOutcomes outcomes_model_unbounded(const MbwParams& p,
                                              double threshold = kDefaultThreshold,
                                              ThetaOptions opt = {}) {
  validate_curve(p);
  while (!(detail::gas_curve(opt.max_breath, p) <= threshold) &&
         opt.max_breath < 1e12)
    opt.max_breath *= 2.0;
  return outcomes_model(p, threshold, opt);
}

}  // namespace mbw
