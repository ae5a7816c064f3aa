#include <gtest/gtest.h>

#include <cmath>

#include "mbw/synthgen.hpp"
#include "mbw/truncation.hpp"

using namespace mbw;

namespace {

BreathSeries make_series(std::vector<double> gas) {
  std::vector<double> v(gas.size()), r(gas.size());
  for (std::size_t i = 0; i < gas.size(); ++i) {
    v[i] = 30.0 * static_cast<double>(i);
    r[i] = 100.0 * (1 - std::exp(-0.2 * static_cast<double>(i)));
  }
  return BreathSeries(std::move(gas), std::move(v), std::move(r));
}

SamplerConfig quick_config() {
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_warmup = 300;
  cfg.n_samples = 300;
  cfg.seed = 17;
  return cfg;
}

std::vector<LabelledSeries> cohort(std::size_t n, std::uint64_t seed) {
  CohortSpec spec;
  spec.n_tests = n;
  spec.seed = seed;
  std::vector<LabelledSeries> out;
  for (const auto& t : generate_cohort(spec)) out.push_back({t.test_id, t.series});
  return out;
}

}  // namespace

TEST(Truncation, RetainsThroughFirstSustainedBreath) {
  const std::vector<double> gas = {1, .5, .2, .08, .07, .06, .01};
  EXPECT_EQ(retained_breaths(gas, 0.1), 4u);
  const auto t = truncate_at_threshold(make_series(gas), 0.1);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->size(), 4u);
  EXPECT_EQ(t->gas()[3], 0.08);
}

TEST(Truncation, NoCrossingKeepsEverything) {
  const std::vector<double> gas = {1, .5, .3, .2};
  EXPECT_EQ(retained_breaths(gas, 0.1), 4u);
  const auto s = make_series(gas);
  EXPECT_TRUE(*truncate_at_threshold(s, 0.1) == s);
}

TEST(Truncation, DegeneratePrefixEnforcesMinimumLength) {
  // Breath 1 already starts a qualifying run: two breaths kept, too few to fit.
  const std::vector<double> gas = {1, .3, .2, .1, .05};
  EXPECT_EQ(retained_breaths(gas, 0.5), 2u);
  EXPECT_FALSE(truncate_at_threshold(make_series(gas), 0.5));
  EXPECT_THROW(retained_breaths(gas, 1.5), ParameterDomainError);
}

TEST(Truncation, ThresholdLabels) {
  EXPECT_EQ(threshold_label(std::nullopt), "complete");
  EXPECT_EQ(threshold_label(0.1), "1/10");
  EXPECT_EQ(threshold_label(1.0 / 3), "1/3");
}

TEST(Truncation, PercentilesUseType7) {
  const auto p = percentiles({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(p.median, 2.5);
  EXPECT_DOUBLE_EQ(p.p025, 1.075);
  EXPECT_DOUBLE_EQ(p.p975, 3.925);
  EXPECT_TRUE(std::isnan(percentiles({}).median));
}

TEST(Truncation, StudyStructureAndCompleteReference) {
  const auto tests = cohort(4, 31);
  const auto reports = run_truncation_study(tests, {0.2, 0.1}, PriorSpec::diffuse(),
                                            quick_config());
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_FALSE(reports[0].threshold);
  EXPECT_EQ(reports[1].label(), "1/5");
  EXPECT_EQ(reports[0].breaths_saved, 0.0);
  for (const auto& r : reports[0].tests) {
    EXPECT_EQ(r.status, TestTruncationResult::Status::Fitted);
    EXPECT_EQ(r.lci_pe, 0.0);
    EXPECT_EQ(r.frc_pe, 0.0);
  }
  for (std::size_t l = 1; l < 3; ++l)
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& r = reports[l].tests[i];
      EXPECT_EQ(r.test_id, reports[0].tests[i].test_id);
      EXPECT_LT(r.retained, r.complete_breaths);
      EXPECT_NEAR(r.lci_pe,
                  (r.fit.lci_median / reports[0].tests[i].fit.lci_median - 1) * 100, 1e-9);
    }
  EXPECT_GT(reports[1].breaths_saved, reports[2].breaths_saved);
  for (std::size_t i = 1; i < 4; ++i)
    EXPECT_LT(reports[0].tests[i - 1].test_id, reports[0].tests[i].test_id);
}

TEST(Truncation, EndTestThresholdApproximatesCompleteFit) {
  const auto tests = cohort(10, 5);
  const auto reports = run_truncation_study(tests, {kDefaultThreshold}, PriorSpec::diffuse(),
                                            quick_config());
  std::vector<double> abs_pe;
  for (const auto& r : reports[1].tests) {
    ASSERT_EQ(r.status, TestTruncationResult::Status::Fitted);
    EXPECT_EQ(r.retained + 2, r.complete_breaths);
    abs_pe.push_back(std::abs(r.lci_pe));
  }
  EXPECT_LT(percentiles(abs_pe).median, 2.0);
}

TEST(Truncation, DeterministicUnderThreads) {
  const auto tests = cohort(3, 12);
  TruncationStudyOptions one, three;
  one.threads = 1;
  three.threads = 3;
  const auto a = run_truncation_study(tests, {0.1}, PriorSpec::diffuse(), quick_config(), one);
  const auto b = run_truncation_study(tests, {0.1}, PriorSpec::diffuse(), quick_config(), three);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < 3; ++i)
      EXPECT_EQ(a[l].tests[i].fit.lci_median, b[l].tests[i].fit.lci_median);
}
