#pragma once

// Shortened tests: truncate a washout at an earlier GAS threshold, refit, and
// compare against the fit to the complete test.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mbw/core.hpp"
#include "mbw/diagnostics.hpp"
#include "mbw/inference.hpp"
#include "mbw/parallel.hpp"

namespace mbw {

/// Breaths kept when truncating at `threshold`: through the first breath that
/// starts a run of three at or below it, or all breaths if there is none.
inline std::size_t retained_breaths(std::span<const double> gas, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ParameterDomainError("threshold must lie in (0, 1)");
  const auto k = first_sustained_at_or_below(gas, threshold);
  return k ? *k + 1 : gas.size();
}

/// The truncated series, or nothing when fewer than 3 breaths would remain.
inline std::optional<BreathSeries> truncate_at_threshold(const BreathSeries& series,
                                                         double threshold) {
  const std::size_t n = retained_breaths(series.gas(), threshold);
  if (n < 3) return std::nullopt;
  if (n == series.size()) return series;
  return series.prefix(n - 1);
}

inline std::vector<double> default_truncation_thresholds() {
  return {1.0 / 3, 1.0 / 4, 1.0 / 5, 1.0 / 10, 1.0 / 20, 1.0 / 30};
}

/// Posterior summaries of one fit that the study compares.
struct FitDigest {
  double lci_median = 0, lci_lo = 0, lci_hi = 0;
  double frc_median = 0, frc_lo = 0, frc_hi = 0;
  double max_rhat = 0;
  bool converged = true;
};

inline FitDigest digest(const PosteriorSamples& s) {
  const SummaryTable t = summarize(s);
  const auto& lci = t.at("lci_star").stats;
  const auto& frc = t.at("frc_star").stats;
  FitDigest d;
  d.lci_median = lci.median;
  d.lci_lo = lci.quantiles[0];
  d.lci_hi = lci.quantiles[2];
  d.frc_median = frc.median;
  d.frc_lo = frc.quantiles[0];
  d.frc_hi = frc.quantiles[2];
  d.max_rhat = t.max_parameter_rhat();
  d.converged = t.converged(diag::kBatchRhatThreshold);
  return d;
}

struct TestTruncationResult {
  std::string test_id;
  std::size_t complete_breaths = 0;
  std::size_t retained = 0;
  enum class Status { Fitted, Unfittable, Failed } status = Status::Fitted;
  std::string failure;
  FitDigest fit;
  /// Percentages relative to the complete-data posterior median.
  double lci_pe = 0, frc_pe = 0, lci_ci_width = 0, frc_ci_width = 0;
};

inline const char* to_string(TestTruncationResult::Status s) {
  switch (s) {
    case TestTruncationResult::Status::Fitted: return "fitted";
    case TestTruncationResult::Status::Unfittable: return "unfittable";
    case TestTruncationResult::Status::Failed: return "failed";
  }
  return "?";
}

struct PercentileSummary {
  double median = std::numeric_limits<double>::quiet_NaN();
  double p025 = std::numeric_limits<double>::quiet_NaN();
  double p975 = std::numeric_limits<double>::quiet_NaN();
};

inline PercentileSummary percentiles(std::vector<double> x) {
  PercentileSummary p;
  if (x.empty()) return p;
  std::sort(x.begin(), x.end());
  p.median = diag::quantile_sorted(x, 0.5);
  p.p025 = diag::quantile_sorted(x, 0.025);
  p.p975 = diag::quantile_sorted(x, 0.975);
  return p;
}

struct TruncationReport {
  /// Absent for the complete-data reference.
  std::optional<double> threshold;
  std::vector<TestTruncationResult> tests;  // sorted by test id

  std::size_t n_fitted = 0, n_unfittable = 0, n_failed = 0;
  PercentileSummary lci_pe, frc_pe, lci_ci_width, frc_ci_width;
  /// Mean over tests of 1 - retained / complete length.
  double breaths_saved = 0;
  /// Share of fitted tests with every parameter R-hat at or below 1.25.
  double proportion_converged = 0;

  std::string label() const;
};

/// "complete" or the threshold as 1/n.
inline std::string threshold_label(std::optional<double> t) {
  if (!t) return "complete";
  const double inv = 1.0 / *t;
  if (std::abs(inv - std::round(inv)) < 1e-9)
    return "1/" + std::to_string(static_cast<long>(std::lround(inv)));
  return std::to_string(*t);
}

inline std::string TruncationReport::label() const { return threshold_label(threshold); }

struct LabelledSeries {
  std::string test_id;
  BreathSeries series;
};

struct TruncationStudyOptions {
  double outcome_threshold = kDefaultThreshold;
  /// Worker threads across fits; 0 uses default_thread_count().
  std::size_t threads = 0;
};

namespace detail {

inline void aggregate(TruncationReport& r) {
  std::vector<double> lpe, fpe, lw, fw;
  std::size_t converged = 0;
  double saved = 0;
  for (const auto& t : r.tests) {
    saved += 1.0 - static_cast<double>(t.retained) / static_cast<double>(t.complete_breaths);
    switch (t.status) {
      case TestTruncationResult::Status::Fitted:
        ++r.n_fitted;
        converged += t.fit.converged ? 1 : 0;
        lpe.push_back(t.lci_pe);
        fpe.push_back(t.frc_pe);
        lw.push_back(t.lci_ci_width);
        fw.push_back(t.frc_ci_width);
        break;
      case TestTruncationResult::Status::Unfittable: ++r.n_unfittable; break;
      case TestTruncationResult::Status::Failed: ++r.n_failed; break;
    }
  }
  r.breaths_saved = r.tests.empty() ? 0.0 : saved / static_cast<double>(r.tests.size());
  r.proportion_converged =
      r.n_fitted ? static_cast<double>(converged) / static_cast<double>(r.n_fitted) : 0.0;
  r.lci_pe = percentiles(lpe);
  r.frc_pe = percentiles(fpe);
  r.lci_ci_width = percentiles(lw);
  r.frc_ci_width = percentiles(fw);
}

}  // namespace detail

/// Fits every test completely and at each threshold. The first report is the
/// complete-data reference (PE identically zero); the rest follow
/// `thresholds` in order. Fits that throw are recorded as failed and left out
/// of the aggregates.
inline std::vector<TruncationReport> run_truncation_study(
    std::vector<LabelledSeries> tests, const std::vector<double>& thresholds,
    const PriorSpec& prior, SamplerConfig cfg, const TruncationStudyOptions& opt = {}) {
  std::sort(tests.begin(), tests.end(),
            [](const auto& a, const auto& b) { return a.test_id < b.test_id; });
  const std::size_t n = tests.size();
  const std::size_t n_levels = thresholds.size() + 1;
  const std::size_t threads = opt.threads ? opt.threads : default_thread_count();
  cfg.threads = 1;

  std::vector<TruncationReport> reports(n_levels);
  for (std::size_t l = 0; l < n_levels; ++l) {
    if (l > 0) reports[l].threshold = thresholds[l - 1];
    reports[l].tests.resize(n);
  }
  InferenceOptions inf;
  inf.threshold = opt.outcome_threshold;

  auto fit_one = [&](std::size_t level, std::size_t i) {
    TestTruncationResult& r = reports[level].tests[i];
    const BreathSeries& full = tests[i].series;
    r.test_id = tests[i].test_id;
    r.complete_breaths = full.size();
    std::optional<BreathSeries> s = full;
    if (level > 0) {
      r.retained = retained_breaths(full.gas(), thresholds[level - 1]);
      s = truncate_at_threshold(full, thresholds[level - 1]);
    } else {
      r.retained = full.size();
    }
    if (!s) {
      r.status = TestTruncationResult::Status::Unfittable;
      return;
    }
    try {
      r.fit = digest(sample_posterior(*s, prior, cfg, inf));
    } catch (const Error& e) {
      r.status = TestTruncationResult::Status::Failed;
      r.failure = e.what();
    }
  };

  // Complete fits first: every truncated result is scored against them.
  parallel_for(n, threads, [&](std::size_t i) { fit_one(0, i); });
  parallel_for(n * thresholds.size(), threads, [&](std::size_t j) {
    const std::size_t level = 1 + j / n, i = j % n;
    const TestTruncationResult& ref = reports[0].tests[i];
    if (ref.status != TestTruncationResult::Status::Fitted) {
      TestTruncationResult& r = reports[level].tests[i];
      r.test_id = tests[i].test_id;
      r.complete_breaths = tests[i].series.size();
      r.retained = retained_breaths(tests[i].series.gas(), thresholds[level - 1]);
      r.status = TestTruncationResult::Status::Failed;
      r.failure = "complete-data fit unavailable";
      return;
    }
    // Identical data to the complete fit; reuse it so PE is exactly zero.
    if (retained_breaths(tests[i].series.gas(), thresholds[level - 1]) ==
        tests[i].series.size()) {
      reports[level].tests[i] = ref;
      return;
    }
    fit_one(level, i);
  });

  for (std::size_t l = 0; l < n_levels; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      TestTruncationResult& r = reports[l].tests[i];
      if (r.status != TestTruncationResult::Status::Fitted) continue;
      const FitDigest& ref = reports[0].tests[i].fit;
      r.lci_pe = l == 0 ? 0.0 : (r.fit.lci_median - ref.lci_median) / ref.lci_median * 100.0;
      r.frc_pe = l == 0 ? 0.0 : (r.fit.frc_median - ref.frc_median) / ref.frc_median * 100.0;
      r.lci_ci_width = (r.fit.lci_hi - r.fit.lci_lo) / ref.lci_median * 100.0;
      r.frc_ci_width = (r.fit.frc_hi - r.fit.frc_lo) / ref.frc_median * 100.0;
    }
    detail::aggregate(reports[l]);
  }
  return reports;
}

}  // namespace mbw
