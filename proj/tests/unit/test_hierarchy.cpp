#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mbw/hierarchy.hpp"
#include "mbw/synthgen.hpp"

using namespace mbw;

namespace {

/// LKJ(eta) on a k x k correlation matrix, sampled through the Cholesky
/// transform with forward-mode gradients.
struct LkjTarget {
  std::size_t k;
  double eta;

  std::size_t dim() const { return corr_free_dim(k); }

  double operator()(const Eigen::VectorXd& y, Eigen::VectorXd& grad) const {
    const std::size_t d = dim();
    grad.resize(static_cast<Eigen::Index>(d));
    double value = 0;
    for (std::size_t a = 0; a < d; ++a) {
      std::vector<Dual> yd(d);
      for (std::size_t i = 0; i < d; ++i) yd[i] = Dual(y[static_cast<Eigen::Index>(i)], i == a);
      std::vector<Dual> l;
      const Dual lj = cholesky_corr_constrain(yd.data(), k, l);
      const Dual lp = lj + lkj_corr_cholesky_lpdf(l, k, eta);
      value = lp.v;
      grad[static_cast<Eigen::Index>(a)] = lp.d;
    }
    return value;
  }

  Eigen::VectorXd initial_point(Rng& rng) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(dim()));
    for (auto& v : y) v = uniform01(rng) - 0.5;
    return y;
  }
};

/// Draws of correlation (i, j) from an LKJ sampler run.
std::vector<double> lkj_draws(std::size_t k, std::size_t i, std::size_t j, std::uint64_t seed) {
  const LkjTarget target{k, 2.0};
  SamplerConfig cfg;
  cfg.n_samples = 5000;
  cfg.seed = seed;
  std::vector<double> out;
  for (const auto& ch : mcmc::run_chains(target, cfg))
    for (Eigen::Index r = 0; r < ch.draws.rows(); ++r) {
      std::vector<double> y(ch.draws.cols());
      for (Eigen::Index c = 0; c < ch.draws.cols(); ++c) y[c] = ch.draws(r, c);
      std::vector<double> l;
      cholesky_corr_constrain(y.data(), k, l);
      double rij = 0;
      for (std::size_t m = 0; m < k; ++m) rij += l[i * k + m] * l[j * k + m];
      out.push_back(rij);
    }
  return out;
}

std::vector<BreathSeries> synthetic_tests(std::size_t n, std::uint64_t seed) {
  CohortSpec spec;
  spec.n_tests = n;
  spec.seed = seed;
  std::vector<BreathSeries> out;
  for (const auto& t : generate_cohort(spec)) out.push_back(t.series);
  return out;
}

struct Item {
  std::string id;
  std::string participant_id;
};

}  // namespace

TEST(Corr, ConstrainProducesUnitRowsAndRoundTrips) {
  Rng rng = make_stream(5, 0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> y(corr_free_dim(6));
    for (auto& v : y) v = 3 * (uniform01(rng) - 0.5);
    std::vector<double> l;
    cholesky_corr_constrain(y.data(), 6, l);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += l[i * 6 + j] * l[i * 6 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const auto back = cholesky_corr_free(l, 6);
    for (std::size_t m = 0; m < y.size(); ++m) EXPECT_NEAR(back[m], y[m], 1e-9);
  }
}

TEST(Corr, LogJacobianMatchesFiniteDifferenceDeterminant) {
  // For k = 3 the map y -> (l21, l31, l32) is square, so |J| is a determinant.
  // The LKJ Cholesky density accounts for the step from L to the correlations.
  const std::vector<double> y = {0.3, -0.7, 0.4};
  auto corr = [](const std::vector<double>& v) {
    std::vector<double> l;
    cholesky_corr_constrain(v.data(), 3, l);
    return Eigen::Vector3d(l[3], l[6], l[7]);
  };
  Eigen::Matrix3d jac;
  for (int a = 0; a < 3; ++a) {
    auto p = y, m = y;
    p[a] += 1e-6;
    m[a] -= 1e-6;
    jac.col(a) = (corr(p) - corr(m)) / 2e-6;
  }
  std::vector<double> l;
  const double lj = cholesky_corr_constrain(y.data(), 3, l);
  EXPECT_NEAR(lj, std::log(std::abs(jac.determinant())), 1e-6);
}

TEST(Corr, Lkj2x2MatchesBetaDensity) {
  // For k = 2, (r + 1) / 2 ~ Beta(eta, eta); CDF of Beta(2, 2) is 3x^2 - 2x^3.
  const auto r = lkj_draws(2, 1, 0, 3);
  const int bins = 10;
  std::vector<double> counts(bins, 0);
  for (double v : r) counts[std::min(bins - 1, static_cast<int>((v + 1) / 2 * bins))] += 1;
  for (int b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins, hi = lo + 1.0 / bins;
    const double expected = (3 * hi * hi - 2 * hi * hi * hi) - (3 * lo * lo - 2 * lo * lo * lo);
    EXPECT_NEAR(counts[b] / static_cast<double>(r.size()), expected, 0.015) << "bin " << b;
  }
}

TEST(Corr, Lkj6x6MarginalVariance) {
  // Marginal of each correlation: (r + 1) / 2 ~ Beta(eta - 1 + k/2, same), so
  // Var r = 1 / (2 eta + k - 1) = 1/9 at eta = 2, k = 6.
  for (auto [i, j] : {std::pair<std::size_t, std::size_t>{1, 0}, {5, 4}, {5, 0}}) {
    const auto r = lkj_draws(6, i, j, 11 + i);
    double m = 0, v = 0;
    for (double x : r) m += x;
    m /= static_cast<double>(r.size());
    for (double x : r) v += (x - m) * (x - m);
    v /= static_cast<double>(r.size() - 1);
    EXPECT_NEAR(m, 0.0, 0.03);
    EXPECT_NEAR(v, 1.0 / 9.0, 0.012);
  }
}

TEST(Hierarchy, SingleTestLikelihoodMatchesIndividualModel) {
  const auto tests = synthetic_tests(1, 2);
  HierParams hp;
  hp.beta_hyper = table1_mu();
  hp.sd_w = table1_sd();
  hp.z = Eigen::MatrixXd::Zero(6, 1);
  hp.sigma = {0.1, 0.08, 0.08};
  MbwParams p;
  p.set_betas(std::span<const double>(table1_mu().data(), 6));
  p.sigma_c = 0.1;
  p.sigma_v = p.sigma_r = 0.08;
  const std::vector<PreparedSeries> prepared(tests.begin(), tests.end());
  EXPECT_EQ(hier_log_likelihood(prepared, hp), log_likelihood(prepared[0], p));
}

TEST(Hierarchy, EffectsAreNonCentred) {
  HierParams hp;
  hp.sd_w << 1, 2, 3, 4, 5, 6;
  Rng rng = make_stream(1, 3);
  Matrix6 a;
  for (int i = 0; i < 36; ++i) a(i / 6, i % 6) = std_normal(rng);
  const Matrix6 corr = nearest_correlation(a * a.transpose() / 6 + Matrix6::Identity());
  hp.corr_chol = corr.llt().matrixL();
  hp.z = Eigen::MatrixXd::Random(6, 2);
  const Vector6 w = hp.sd_w.asDiagonal() * hp.corr_chol * hp.z.col(1);
  EXPECT_LT((hp.effect(1) - w).norm(), 1e-12);
}

TEST(Hierarchy, GradientMatchesFiniteDifferences) {
  const auto tests = synthetic_tests(3, 4);
  for (bool identity : {false, true}) {
    HierOptions opt;
    opt.identity_correlation = identity;
    const HierTarget target(tests, opt);
    Rng rng = make_stream(8, identity);
    for (int rep = 0; rep < 3; ++rep) {
      const Eigen::VectorXd u = target.initial_point(rng);
      Eigen::VectorXd g, scratch;
      ASSERT_TRUE(std::isfinite(target(u, g)));
      for (Eigen::Index k = 0; k < u.size(); ++k) {
        Eigen::VectorXd a = u, b = u;
        a[k] += 1e-6;
        b[k] -= 1e-6;
        const double fd = (target(a, scratch) - target(b, scratch)) / 2e-6;
        EXPECT_LT(std::abs(fd - g[k]) / std::max(1.0, std::abs(fd)), 1e-4) << "coordinate " << k;
      }
    }
  }
}

TEST(Hierarchy, EncodeDecodeRoundTrip) {
  const auto tests = synthetic_tests(2, 6);
  const HierTarget target(tests);
  Rng rng = make_stream(2, 2);
  const Eigen::VectorXd u = target.initial_point(rng);
  const Eigen::VectorXd back = target.encode(target.decode(u));
  EXPECT_LT((back - u).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Hierarchy, IdenticalTestsShrinkRandomEffects) {
  const auto one = synthetic_tests(1, 10)[0];
  const std::vector<BreathSeries> tests(10, one);
  SamplerConfig cfg = hier_sampler_config();
  cfg.n_chains = 2;
  cfg.n_warmup = 400;
  cfg.n_samples = 400;
  cfg.seed = 5;
  HierOptions opt;
  opt.store_effects = false;
  const HierSamples h = fit_hierarchical(tests, cfg, opt);

  SamplerConfig single;
  single.n_warmup = single.n_samples = 500;
  const auto table = summarize(sample_posterior(one, PriorSpec::diffuse(), single));
  // beta1, beta3, beta4 and beta5 are well determined by one test.
  for (int j : {1, 3, 4, 5})
    EXPECT_LT(h.column_median(HierSamples::kSdOffset + j),
              table.at(MbwParams::kNames[j]).stats.sd)
        << MbwParams::kNames[j];
}

TEST(PriorExtraction, AssembleDecomposeIsIdempotent) {
  const ExtractedPrior e = assemble_prior(table1_mu(), table1_sd(), table1_correlation());
  EXPECT_FALSE(e.projected);
  const ExtractedPrior d = decompose_prior(e.prior);
  EXPECT_EQ(d.mu, table1_mu());
  EXPECT_LT((d.sd - table1_sd()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((d.corr - table1_correlation()).cwiseAbs().maxCoeff(), 1e-12);
  const ExtractedPrior again = assemble_prior(d.mu, d.sd, d.corr);
  EXPECT_LT((again.prior.sigma() - e.prior.sigma()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PriorExtraction, IdentityCorrelationGivesDiagonalSigma) {
  const ExtractedPrior e = assemble_prior(table1_mu(), table1_sd(), Matrix6::Identity());
  const Vector6 var = table1_sd().cwiseProduct(table1_sd());
  EXPECT_EQ(Matrix6(e.prior.sigma()), Matrix6(var.asDiagonal()));
}

TEST(PriorExtraction, NonPositiveDefiniteMedianIsProjected) {
  const ExtractedPrior e = assemble_prior(table1_mu(), table1_sd(), table1_correlation_raw());
  EXPECT_TRUE(e.projected);
  EXPECT_EQ(Eigen::LLT<Matrix6>(e.prior.sigma()).info(), Eigen::Success);
  for (int j = 0; j < 6; ++j)
    EXPECT_DOUBLE_EQ(e.prior.sigma()(j, j), table1_sd()[j] * table1_sd()[j]);
}

TEST(Holdout, HalfSplitSizes) {
  std::vector<Item> items;
  for (int i = 0; i < 414; ++i) items.push_back({std::to_string(i), "p" + std::to_string(i)});
  const auto [train, valid] = holdout_split(items, 0.5, 7);
  EXPECT_EQ(train.size(), 207u);
  EXPECT_EQ(valid.size(), 207u);
  std::set<std::string> ids;
  for (const auto& r : train) ids.insert(r.id);
  for (const auto& r : valid) EXPECT_TRUE(ids.insert(r.id).second);
  EXPECT_EQ(ids.size(), 414u);
  const auto again = holdout_split(items, 0.5, 7);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(again.first[i].id, train[i].id);
  const auto other = holdout_split(items, 0.5, 8);
  bool differs = false;
  for (std::size_t i = 0; i < train.size(); ++i) differs |= other.first[i].id != train[i].id;
  EXPECT_TRUE(differs);
}

TEST(Holdout, KeepsFirstTestPerParticipant) {
  const std::vector<Item> items = {{"a1", "a"}, {"b1", "b"}, {"a2", "a"}, {"c1", "c"}};
  const auto [train, valid] = holdout_split(items, 1.0, 1);
  EXPECT_EQ(train.size(), 3u);
  EXPECT_TRUE(valid.empty());
  for (const auto& r : train) EXPECT_NE(r.id, "a2");
  EXPECT_THROW(holdout_split(items, 1.5, 1), ParameterDomainError);
}
