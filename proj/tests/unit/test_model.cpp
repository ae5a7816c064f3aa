#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "mbw/model.hpp"
#include "mbw/simulate.hpp"

using namespace mbw;

namespace {

MbwParams table1_medians() {
  MbwParams p;
  p.beta0 = 0.68, p.beta1 = 0.129, p.beta2 = 0.53;
  p.beta3 = 124.3, p.beta4 = 0.137, p.beta5 = 29.96;
  p.sigma_c = 0.1, p.sigma_v = 0.08, p.sigma_r = 0.08;
  return p;
}

BreathSeries synthetic(std::uint64_t seed, std::size_t n = 30) {
  Rng rng = make_stream(seed, 0);
  return simulate_series(table1_medians(), n, rng, PredictiveVariant::Derivative, true)
      .to_series();
}

PriorSpec table1_prior() {
  Vector6 mu;
  mu << 0.68, 0.129, 0.53, 124.3, 0.137, 29.96;
  Vector6 sd;
  sd << 0.15, 0.023, 0.2, 18.27, 0.024, 6.38;
  Matrix6 s = sd.cwiseAbs2().asDiagonal();
  s(1, 5) = s(5, 1) = 0.5 * sd[1] * sd[5];
  return PriorSpec::informative(mu, s);
}

// Direct transcription of the observation densities.
double reference_log_likelihood(const BreathSeries& s, const MbwParams& p) {
  const double pi = 3.14159265358979323846;
  double lp = 0;
  const auto gas = s.gas();
  for (std::size_t k = 0; k < gas.size(); ++k) {
    const double f = p.beta0 * std::exp(-p.beta1 * k) + (1 - p.beta0) * std::exp(-p.beta2 * k);
    const double z = (std::log(gas[k]) - std::log(f)) / p.sigma_c;
    lp += -std::log(gas[k] * p.sigma_c * std::sqrt(2 * pi)) - 0.5 * z * z;
  }
  const auto v = s.cevgm();
  const auto r = s.cevtg();
  for (std::size_t m = 0; m + 1 < gas.size(); ++m) {
    const double zv = (std::log(v[m + 1] - v[m]) - std::log(p.beta5)) / p.sigma_v;
    const double mr = std::log(p.beta3) + std::log(1 - std::exp(-p.beta4)) - p.beta4 * m;
    const double zr = (std::log(r[m + 1] - r[m]) - mr) / p.sigma_r;
    lp += -std::log(p.sigma_v * std::sqrt(2 * pi)) - 0.5 * zv * zv;
    lp += -std::log(p.sigma_r * std::sqrt(2 * pi)) - 0.5 * zr * zr;
  }
  return lp;
}

double log_target(const PosteriorTarget& t, const std::array<double, 9>& u) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(u.data(), 9), g;
  return t(x, g);
}

}  // namespace

TEST(LogLikelihood, MatchesDirectDensities) {
  const BreathSeries s = synthetic(1);
  MbwParams p = table1_medians();
  p.beta1 = 0.11;
  p.sigma_c = 0.2;
  EXPECT_NEAR(log_likelihood(PreparedSeries(s), p), reference_log_likelihood(s, p), 1e-9);
}

TEST(LogPosterior, OutOfDomainIsMinusInfinity) {
  const BreathSeries s = synthetic(2);
  MbwParams p = table1_medians();
  p.beta2 = p.beta1;
  EXPECT_EQ(log_posterior(s, p, PriorSpec::diffuse()),
            -std::numeric_limits<double>::infinity());
  p = table1_medians();
  p.sigma_v = -1;
  EXPECT_EQ(log_posterior(s, p, PriorSpec::diffuse()),
            -std::numeric_limits<double>::infinity());
}

TEST(LogPosterior, PureFunction) {
  const BreathSeries s = synthetic(3);
  const MbwParams p = table1_medians();
  const double a = log_posterior(s, p, PriorSpec::diffuse());
  const double b = log_posterior(s, p, PriorSpec::diffuse());
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
}

TEST(LogPosterior, DiffusePriorFamilies) {
  const MbwParams p = table1_medians();
  const double pi = 3.14159265358979323846;
  auto normal = [&](double x, double sd) {
    return -0.5 * std::log(2 * pi) - std::log(sd) - 0.5 * x * x / (sd * sd);
  };
  auto half_cauchy = [&](double x) {
    return std::log(2.0 / (pi * 2.5 * (1 + (x / 2.5) * (x / 2.5))));
  };
  // Beta(2, 2) density is 6 x (1 - x).
  const double expected = std::log(6 * p.beta0 * (1 - p.beta0)) + normal(p.beta1, 1) +
                          normal(p.beta2, 1) + normal(p.beta3, 1000) +
                          normal(p.beta4, 1) + normal(p.beta5, 100) +
                          half_cauchy(p.sigma_c) + half_cauchy(p.sigma_v) +
                          half_cauchy(p.sigma_r);
  EXPECT_NEAR(log_prior(p, PriorSpec::diffuse()), expected, 1e-10);
}

TEST(PriorSpec, RejectsNonPositiveDefinite) {
  Vector6 mu = Vector6::Ones();
  Matrix6 s = Matrix6::Identity();
  s(0, 1) = s(1, 0) = 1.5;
  EXPECT_THROW(PriorSpec::informative(mu, s), ParameterDomainError);
  s = Matrix6::Identity();
  s(0, 1) = 0.3;
  EXPECT_THROW(PriorSpec::informative(mu, s), ParameterDomainError);
  EXPECT_NO_THROW(table1_prior());
}

TEST(Gradient, MatchesFiniteDifferences) {
  const BreathSeries s = synthetic(4);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  int point = 0;
  for (const PriorSpec& prior : {PriorSpec::diffuse(), table1_prior()}) {
    const PosteriorTarget target(s, prior);
    for (int i = 0; i < 50; ++i, ++point) {
      MbwParams p = table1_medians();
      p.beta0 = (i % 10 == 0) ? 0.01 : (i % 10 == 1) ? 0.99 : 0.68 + 0.3 * jitter(rng);
      p.beta1 *= std::exp(jitter(rng));
      p.beta2 = p.beta1 + 0.4 * std::exp(jitter(rng));
      p.beta3 *= std::exp(jitter(rng));
      p.beta4 *= std::exp(jitter(rng));
      p.beta5 *= std::exp(jitter(rng));
      p.sigma_c *= std::exp(jitter(rng));
      p.sigma_v *= std::exp(jitter(rng));
      p.sigma_r *= std::exp(jitter(rng));
      const Grad9 g = log_posterior_gradient(s, p, prior);
      const auto u = transform::to_unconstrained(p);
      const double h = 1e-6;
      for (int j = 0; j < 9; ++j) {
        auto up = u, dn = u;
        up[j] += h;
        dn[j] -= h;
        const double fd = (log_target(target, up) - log_target(target, dn)) / (2 * h);
        const double scale = std::max(1.0, std::abs(fd));
        EXPECT_LT(std::abs(g[j] - fd) / scale, 1e-4)
            << "point " << point << " coordinate " << j;
      }
    }
  }
}

TEST(Gradient, InformativePriorModeIsStationary) {
  const BreathSeries s = synthetic(5);
  const PriorSpec prior = table1_prior();
  MbwParams p = table1_medians();
  const Grad9 g = log_posterior_gradient_natural(s, p, prior, false);
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(g[j], 0.0, 1e-8);
}

TEST(Transform, RoundTrip) {
  MbwParams p = table1_medians();
  const auto u = transform::to_unconstrained(p);
  const MbwParams q = transform::from_unconstrained(u.data());
  const auto a = p.to_array(), b = q.to_array();
  for (int j = 0; j < 9; ++j) EXPECT_NEAR(a[j], b[j], 1e-12 * std::abs(a[j]));
}

TEST(PosteriorTarget, InitialPointsAreFinite) {
  const BreathSeries s = synthetic(6);
  for (const PriorSpec& prior : {PriorSpec::diffuse(), table1_prior()}) {
    const PosteriorTarget target(s, prior);
    Rng rng = make_stream(1, 2);
    for (int i = 0; i < 50; ++i) {
      const Eigen::VectorXd x = target.initial_point(rng);
      ASSERT_TRUE(x.allFinite());
      Eigen::VectorXd g;
      EXPECT_TRUE(std::isfinite(target(x, g)));
    }
  }
}
