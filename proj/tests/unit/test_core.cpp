#include <gtest/gtest.h>

#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <random>

#include "mbw/core.hpp"

using namespace mbw;

namespace {

MbwParams table1_medians() {
  MbwParams p;
  p.beta0 = 0.68;
  p.beta1 = 0.129;
  p.beta2 = 0.53;
  p.beta3 = 124.3;
  p.beta4 = 0.137;
  p.beta5 = 29.96;
  return p;
}

MbwParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.02, 0.98);
  std::uniform_real_distribution<double> rate(0.02, 1.5);
  MbwParams p;
  p.beta0 = u01(rng);
  p.beta1 = rate(rng);
  p.beta2 = p.beta1 + rate(rng);
  p.beta3 = std::uniform_real_distribution<double>(20, 400)(rng);
  p.beta4 = rate(rng);
  p.beta5 = std::uniform_real_distribution<double>(5, 80)(rng);
  return p;
}

// Independent root oracle: TOMS 748 on the closed-form curve written out here.
double theta_oracle(const MbwParams& p, double t) {
  auto f = [&](double k) {
    return p.beta0 * std::exp(-p.beta1 * k) + (1 - p.beta0) * std::exp(-p.beta2 * k) - t;
  };
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(
      f, 0.0, 200.0, boost::math::tools::eps_tolerance<double>(52), iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace

TEST(GasCurve, IsExactlyOneAtZero) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(gas_curve(0.0, random_params(rng)), 1.0);
}

TEST(GasCurve, DecaysToZero) {
  EXPECT_LT(gas_curve(1000.0, table1_medians()), 1e-10);
}

TEST(GasCurve, RejectsInvalidParameters) {
  MbwParams p = table1_medians();
  p.beta2 = 0.1;  // below beta1
  EXPECT_THROW(gas_curve(1.0, p), ParameterDomainError);
  p = table1_medians();
  p.beta0 = 1.0;
  EXPECT_THROW(gas_curve(1.0, p), ParameterDomainError);
  p = table1_medians();
  p.beta4 = -0.1;
  EXPECT_THROW(cevtg_curve(1.0, p), ParameterDomainError);
  p = table1_medians();
  p.sigma_r = 0.0;  // noise scales do not enter the mean curves
  EXPECT_NO_THROW(cevtg_curve(1.0, p));
}

TEST(Curves, MonotoneOverRandomParameters) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const MbwParams p = random_params(rng);
    double g = gas_curve(0, p), v = cevgm_curve(0, p), r = cevtg_curve(0, p);
    for (int j = 1; j <= 100; ++j) {
      const double k = 0.3 * j;
      const double g2 = gas_curve(k, p), v2 = cevgm_curve(k, p), r2 = cevtg_curve(k, p);
      ASSERT_LT(g2, g);
      ASSERT_GT(v2, v);
      // cevtg saturates at beta3 in double precision for large beta4 * k.
      if (p.beta3 - r > 1e-12 * p.beta3) {
        ASSERT_GT(r2, r);
      }
      ASSERT_GE(r2, r);
      g = g2, v = v2, r = r2;
    }
  }
}

TEST(Curves, PointValues) {
  const MbwParams p = table1_medians();
  EXPECT_EQ(cevgm_curve(0, p), 0.0);
  EXPECT_DOUBLE_EQ(cevgm_curve(1, p), 29.96);
  EXPECT_NEAR(cevgm_curve(25.6, p), 766.976, 1e-9);
  EXPECT_EQ(cevtg_curve(0, p), 0.0);
  EXPECT_NEAR(cevtg_curve(1e4, p), 124.3, 1e-12);
  // 124.3 * (1 - exp(-0.685)) evaluated in extended precision.
  const long double ref = 124.3L * (1.0L - std::exp(-0.685L));
  EXPECT_NEAR(cevtg_curve(5, p), static_cast<double>(ref), 1e-12);
  EXPECT_NEAR(gas_curve(25.6, p), 0.025, 5e-5);
}

TEST(LogIncrements, ConstantAndUnit) {
  const std::vector<double> a = {0, 30, 60};
  const auto r = log_increments(a);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0], std::log(30.0));
  EXPECT_DOUBLE_EQ(r[1], std::log(30.0));
  const std::vector<double> b = {0, 1};
  EXPECT_EQ(log_increments(b), std::vector<double>{0.0});
}

TEST(LogIncrements, ReportsOffendingIndex) {
  const std::vector<double> a = {0, 1, 2, 2, 3};
  try {
    log_increments(a);
    FAIL();
  } catch (const MonotonicityError& e) {
    EXPECT_EQ(e.index(), 2u);
  }
}

TEST(LogIncrements, RoundTrip) {
  std::mt19937_64 rng(5);
  std::vector<double> x = {0};
  for (int i = 0; i < 50; ++i)
    x.push_back(x.back() + std::uniform_real_distribution<double>(0.1, 50)(rng));
  const auto d = log_increments(x);
  std::vector<double> back = {0};
  for (double v : d) back.push_back(back.back() + std::exp(v));
  for (std::size_t i = 1; i < x.size(); ++i) EXPECT_NEAR(back[i] / x[i], 1.0, 1e-10);
}

TEST(EndTestStandard, Examples) {
  auto series = [](std::vector<double> gas) {
    std::vector<double> v(gas.size()), r(gas.size());
    for (std::size_t i = 0; i < gas.size(); ++i) v[i] = r[i] = static_cast<double>(i);
    return BreathSeries(gas, v, r);
  };
  EXPECT_EQ(end_test_breath_standard(series({1, .5, .02, .02, .02})), 2u);
  EXPECT_EQ(end_test_breath_standard(series({1, .02, .5, .02, .02, .02})), 3u);
  EXPECT_FALSE(end_test_breath_standard(series({1, .5, .3})).has_value());
}

TEST(EndTestModel, Table1MediansNearTwentyFiveSix) {
  const MbwParams p = table1_medians();
  const double theta = end_test_breath_model(p);
  EXPECT_NEAR(theta, theta_oracle(p, 0.025), 1e-8);
  EXPECT_NEAR(theta, 25.6, 0.05);
  EXPECT_LT(std::abs(gas_curve(theta, p) - 0.025), 1e-10);
}

TEST(EndTestModel, SingleExponentialLimit) {
  MbwParams p = table1_medians();
  p.beta0 = 1 - 1e-9;
  p.beta1 = std::log(2.0);
  p.beta2 = 2.0;
  EXPECT_NEAR(end_test_breath_model(p), std::log2(40.0), 1e-7);
}

TEST(EndTestModel, MatchesOracleOverRandomParameters) {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const MbwParams p = random_params(rng);
    if (gas_curve(200, p) > 0.025) continue;
    const double theta = end_test_breath_model(p);
    EXPECT_NEAR(theta, theta_oracle(p, 0.025), 1e-8);
    EXPECT_NEAR(gas_curve(theta, p), 0.025, 1e-8);
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

TEST(EndTestModel, GridModeWithinOneStep) {
  std::mt19937_64 rng(19);
  ThetaOptions grid;
  grid.solver = ThetaSolver::Grid;
  for (int i = 0; i < 200; ++i) {
    const MbwParams p = random_params(rng);
    if (gas_curve(200, p) > 0.025) continue;
    const double a = end_test_breath_model(p);
    const double b = end_test_breath_model(p, 0.025, grid);
    EXPECT_GE(b, a - 1e-9);
    EXPECT_LT(b - a, 0.01 + 1e-9);
  }
}

TEST(EndTestModel, NoCrossing) {
  MbwParams p = table1_medians();
  p.beta1 = 1e-4;
  p.beta0 = 0.9;
  EXPECT_THROW(end_test_breath_model(p), NoCrossingError);
  EXPECT_NO_THROW(outcomes_model_unbounded(p));
}

TEST(OutcomesStandard, HandExample) {
  // The end-test breath is k = 2 (first of three at or below 1/40), so
  // CEV = v(2) = 200 and FRC = r(2) / (1 - 0.02) = 70 / 0.98.
  const BreathSeries s({1, .5, .02, .02, .02}, {0, 100, 200, 300, 400},
                       {0, 50, 70, 80, 85});
  const auto o = outcomes_standard(s);
  ASSERT_TRUE(o.has_value());
  EXPECT_DOUBLE_EQ(o->cev, 200.0);
  EXPECT_DOUBLE_EQ(o->frc, 70.0 / 0.98);
  EXPECT_DOUBLE_EQ(o->lci, 200.0 / (70.0 / 0.98));
  EXPECT_EQ(o->method, OutcomeMethod::Standard);
}

TEST(OutcomesStandard, IncompleteIsAbsent) {
  const BreathSeries s({1, .5, .3, .2}, {0, 1, 2, 3}, {0, 1, 2, 3});
  EXPECT_FALSE(outcomes_standard(s).has_value());
}

TEST(OutcomesModel, Table1Medians) {
  const MbwParams p = table1_medians();
  const ModelOutcomes o = outcomes_model(p);
  EXPECT_NEAR(o.asymptotic.lci, 767.17 / 124.3, 2e-3);
  EXPECT_EQ(o.asymptotic.frc, p.beta3);
  EXPECT_EQ(o.asymptotic.method, OutcomeMethod::ModelAsymptoticFrc);
  EXPECT_EQ(o.theta_based.method, OutcomeMethod::ModelTheta);
  const double theta = o.theta_based.theta;
  EXPECT_NEAR(o.theta_based.frc, cevtg_curve(theta, p) / (1 - 0.025), 1e-9);
}

TEST(OutcomesModel, LciTimesFrcIsCev) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 500; ++i) {
    const MbwParams p = random_params(rng);
    const ModelOutcomes o = outcomes_model_unbounded(p);
    for (const auto& m : {o.asymptotic, o.theta_based})
      EXPECT_NEAR(m.lci * m.frc / m.cev, 1.0, 1e-12);
    EXPECT_EQ(o.asymptotic.frc, p.beta3);
    EXPECT_DOUBLE_EQ(o.theta_based.frc,
                     cevtg_curve(o.theta_based.theta, p) /
                         (1 - gas_curve(o.theta_based.theta, p)));
  }
}

TEST(BreathSeriesValidation, RejectsBadInput) {
  EXPECT_THROW(BreathSeries({1, .5}, {0, 1}, {0, 1}), DataError);
  EXPECT_THROW(BreathSeries({1, 0, .2}, {0, 1, 2}, {0, 1, 2}), DataError);
  EXPECT_THROW(BreathSeries({1, .5, .2}, {1, 2, 3}, {0, 1, 2}), DataError);
  try {
    BreathSeries({1, .5, .2, .1}, {0, 1, 2, 3}, {0, 1, 1, 3}, "t9");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::MonotonicityViolation);
    EXPECT_EQ(e.breath(), 2);
    EXPECT_EQ(e.test_id(), "t9");
  }
}
