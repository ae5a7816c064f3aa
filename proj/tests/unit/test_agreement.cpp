#include <gtest/gtest.h>

#include <cmath>

#include "mbw/agreement.hpp"

using namespace mbw;

namespace {

mcmc::SamplerConfig quick(std::uint64_t seed) {
  mcmc::SamplerConfig cfg;
  cfg.n_warmup = 500;
  cfg.n_samples = 500;
  cfg.seed = seed;
  return cfg;
}

void check_gradient(const AgreementTarget& target, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  const Eigen::VectorXd x = target.initial_point(rng);
  Eigen::VectorXd g, scratch;
  ASSERT_TRUE(std::isfinite(target(x, g)));
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, b = x;
    a[k] += 1e-6;
    b[k] -= 1e-6;
    const double fd = (target(a, scratch) - target(b, scratch)) / 2e-6;
    EXPECT_LT(std::abs(fd - g[k]) / std::max(1.0, std::abs(fd)), 1e-4) << "coordinate " << k;
  }
}

}  // namespace

TEST(Agreement, UnbalancedDataRejected) {
  auto rows = simulate_agreement(AgreementTruth{}, 4, 2, 1);
  rows.pop_back();
  EXPECT_THROW(AgreementData{rows}, StructuralError);
  rows = simulate_agreement(AgreementTruth{}, 4, 2, 1);
  rows[0].method = 3;
  EXPECT_THROW(AgreementData{rows}, StructuralError);
}

TEST(Agreement, DataIndexing) {
  const AgreementData d(simulate_agreement(AgreementTruth{}, 5, 3, 2));
  EXPECT_EQ(d.size(), 30u);
  EXPECT_EQ(d.n_participants(), 5u);
  EXPECT_EQ(d.n_pairs(), 15u);
}

TEST(Agreement, GradientsMatchFiniteDifferences) {
  const AgreementData d(simulate_agreement(AgreementTruth{}, 6, 3, 4));
  for (auto v : {AgreementVariant::Exchangeable, AgreementVariant::Linked, AgreementVariant::Full})
    check_gradient(AgreementTarget(d, v), 3);
}

TEST(Agreement, ReplicatePermutationAffectsOnlyLinkedModel) {
  const auto rows = simulate_agreement(AgreementTruth{}, 6, 3, 5);
  auto permuted = rows;
  // Rotate method-2 replicate labels within each participant.
  for (auto& r : permuted)
    if (r.method == 2) r.replicate = std::to_string(std::stoi(r.replicate) % 3 + 1);
  const AgreementData a(rows), b(permuted);
  Eigen::VectorXd g;
  for (auto v : {AgreementVariant::Exchangeable, AgreementVariant::Linked}) {
    const AgreementTarget ta(a, v), tb(b, v);
    Rng rng = make_stream(1, 1);
    const Eigen::VectorXd x = ta.initial_point(rng);
    const double la = ta(x, g), lb = tb(x, g);
    if (v == AgreementVariant::Exchangeable)
      EXPECT_NEAR(la, lb, 1e-9 * std::abs(la));
    else
      EXPECT_GT(std::abs(la - lb), 1e-6);
  }
}

TEST(Agreement, IdenticalMethodsCentreDifferenceAtZero) {
  auto rows = simulate_agreement(AgreementTruth{}, 100, 3, 6);
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) rows[i + 1].y = rows[i].y;
  // Exactly identical values leave sigma1 and sigma2 at the boundary; a
  // centred antisymmetric jitter keeps the fit proper with mean difference 0.
  Rng rng = make_stream(6, 1);
  std::vector<double> e(rows.size() / 2);
  double mean = 0;
  for (auto& v : e) mean += (v = 0.05 * std_normal(rng));
  mean /= static_cast<double>(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    rows[2 * i].y += e[i] - mean;
    rows[2 * i + 1].y -= e[i] - mean;
  }
  const auto fit = fit_agreement(AgreementData(rows), AgreementVariant::Exchangeable, quick(2));
  const auto& d = fit.at("alpha_diff").stats;
  const double mcse = d.sd / std::sqrt(d.ess);
  EXPECT_LT(std::abs(d.mean), 4 * mcse);
  EXPECT_LT(d.quantiles[0], 0.0);
  EXPECT_GT(d.quantiles[2], 0.0);
}

TEST(Agreement, ZeroInteractionConcentratesTau) {
  AgreementTruth t;
  t.tau = 0;
  const auto fit =
      fit_agreement(AgreementData(simulate_agreement(t, 200, 3, 7)), AgreementVariant::Exchangeable,
                    quick(3));
  EXPECT_LT(fit.at("tau").stats.median, fit.at("gamma").stats.median / 10);
  EXPECT_LT(fit.max_rhat(), 1.05);
}

TEST(Agreement, ExchangeableRecoversGeneratingValues) {
  const AgreementTruth t;
  const auto fit = fit_agreement(AgreementData(simulate_agreement(t, 300, 3, 8)),
                                 AgreementVariant::Exchangeable, quick(4));
  int covered = 0;
  for (auto [name, value] : {std::pair<const char*, double>{"alpha1", t.alpha1},
                             {"alpha2", t.alpha2}, {"gamma", t.gamma}, {"tau", t.tau},
                             {"sigma1", t.sigma1}, {"sigma2", t.sigma2}}) {
    const auto& s = fit.at(name).stats;
    covered += s.quantiles[0] <= value && value <= s.quantiles[2];
  }
  EXPECT_GE(covered, 5);
  EXPECT_EQ(fit.names.back(), "sigma_ratio");
}
