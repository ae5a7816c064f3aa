#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mbw/diagnostics.hpp"

using namespace mbw::diag;

namespace {

Chains iid_normal(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Chains c(m, std::vector<double>(n));
  for (auto& ch : c)
    for (auto& x : ch) x = z(rng);
  return c;
}

std::vector<double> ar1(int n, double phi, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::vector<double> x(n);
  x[0] = z(rng) / std::sqrt(1 - phi * phi);
  for (int i = 1; i < n; ++i) x[i] = phi * x[i - 1] + z(rng);
  return x;
}

}  // namespace

TEST(Summary, ConstantChain) {
  const Chains c(4, std::vector<double>(100, 2.5));
  const Summary s = summarize(c);
  EXPECT_EQ(s.median, 2.5);
  EXPECT_EQ(s.sd, 0.0);
  EXPECT_TRUE(std::isnan(s.rhat));
  EXPECT_FALSE(s.rhat_defined);
  EXPECT_TRUE(std::isnan(s.ess));
}

TEST(Rhat, IdenticalConstantsAreUndefined) {
  EXPECT_TRUE(std::isnan(rhat(Chains(2, std::vector<double>(50, 0.1)))));
}

TEST(Summary, IidNormal) {
  const Summary s = summarize(iid_normal(4, 1000, 1));
  EXPECT_GE(s.rhat, 0.99);
  EXPECT_LE(s.rhat, 1.01);
  EXPECT_GT(s.ess, 3000);
  EXPECT_NEAR(s.mean, 0.0, 0.1);
  EXPECT_NEAR(s.sd, 1.0, 0.05);
}

TEST(Rhat, ApproachesOneForLongIidChains) {
  EXPECT_NEAR(rhat(iid_normal(4, 10000, 2)), 1.0, 0.01);
}

TEST(Rhat, DetectsShiftedChain) {
  Chains c = iid_normal(4, 1000, 3);
  for (auto& x : c[0]) x += 3.0;
  EXPECT_GT(rhat(c), 1.25);
}

TEST(Quantile, RampTypeSeven) {
  std::vector<double> ramp(4000);
  for (int i = 0; i < 4000; ++i) ramp[i] = i + 1;
  EXPECT_NEAR(quantile(ramp, 0.025), 100.975, 1e-9);
  EXPECT_NEAR(quantile(ramp, 0.5), 2000.5, 1e-9);
  EXPECT_NEAR(quantile(ramp, 0.975), 3900.025, 1e-9);
}

TEST(Ess, AntitheticChainExceedsDrawCount) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  Chains c(1, std::vector<double>(1000));
  for (int i = 0; i < 1000; ++i) c[0][i] = (i % 2 ? -1.0 : 1.0) + 0.1 * z(rng);
  EXPECT_GT(ess(c), 1000.0);
}

TEST(Ess, Ar1MatchesTheory) {
  std::mt19937_64 rng(5);
  const double phi = 0.5;
  Chains c;
  for (int i = 0; i < 4; ++i) c.push_back(ar1(5000, phi, rng));
  const double theory = 20000.0 * (1 - phi) / (1 + phi);
  EXPECT_NEAR(ess(c) / theory, 1.0, 0.15);
}

TEST(SufficientEss, FiveTimesTwiceChains) { EXPECT_EQ(sufficient_ess(4), 40.0); }

TEST(Pacf, WhiteNoiseWithinBand) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  int inside = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> x(200);
    for (auto& v : x) v = z(rng);
    if (std::abs(pacf(x, 3)[0]) < 2 / std::sqrt(200.0)) ++inside;
  }
  EXPECT_GE(inside, 930);
}

TEST(Pacf, Ar1RecoversCoefficient) {
  std::mt19937_64 rng(7);
  const auto x = ar1(2000, 0.8, rng);
  const auto p = pacf(x, 3);
  EXPECT_NEAR(p[0], 0.8, 0.1);
  EXPECT_NEAR(p[1], 0.0, 0.1);
}

TEST(Pacf, ConstantIsUndefined) {
  const std::vector<double> x(50, 1.0);
  for (double v : pacf(x, 2)) EXPECT_TRUE(std::isnan(v));
}
