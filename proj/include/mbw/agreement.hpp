#pragma once

// Bayesian variance-components model for comparing two measurement methods
// on replicated tests:
//   y[m,p,r] = alpha[m] + u[p] + a[p,r] + c[m,p] + e[m,p,r]
// with u ~ N(0, gamma), a ~ N(0, omega), c ~ N(0, tau), e ~ N(0, sigma[m])
// (all second arguments standard deviations).

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mbw/diagnostics.hpp"
#include "mbw/distributions.hpp"
#include "mbw/error.hpp"
#include "mbw/sampler.hpp"

namespace mbw {

enum class AgreementVariant {
  /// No a[p,r]; method-specific residual SDs.
  Exchangeable,
  /// a[p,r] included; one residual SD shared by both methods.
  Linked,
  /// a[p,r] and method-specific residuals. Weakly identified; experimental.
  Full,
};

inline const char* to_string(AgreementVariant v) {
  switch (v) {
    case AgreementVariant::Exchangeable: return "exchangeable";
    case AgreementVariant::Linked: return "linked";
    case AgreementVariant::Full: return "full";
  }
  return "?";
}

struct AgreementRow {
  int method = 1;  // 1 or 2
  std::string participant;
  std::string replicate;
  double y = 0;
};

/// Indexed, validated agreement data. Every (participant, replicate) pair
/// must have exactly one value for each of the two methods.
class AgreementData {
 public:
  explicit AgreementData(const std::vector<AgreementRow>& rows) {
    std::map<std::string, int> pid;
    std::map<std::pair<std::string, std::string>, int> rid;
    for (const auto& r : rows) {
      if (r.method != 1 && r.method != 2)
        throw StructuralError("method must be 1 or 2, got " + std::to_string(r.method));
      if (!std::isfinite(r.y)) throw StructuralError("non-finite outcome value");
      pid.emplace(r.participant, 0);
      rid.emplace(std::make_pair(r.participant, r.replicate), 0);
    }
    int i = 0;
    for (auto& [k, v] : pid) {
      v = i++;
      participant_names_.push_back(k);
    }
    i = 0;
    for (auto& [k, v] : rid) {
      v = i++;
      pair_participant_.push_back(pid.at(k.first));
    }
    std::vector<std::array<int, 2>> seen(rid.size(), {0, 0});
    for (const auto& r : rows) {
      const int pr = rid.at({r.participant, r.replicate});
      ++seen[pr][r.method - 1];
      y_.push_back(r.y);
      method_.push_back(r.method - 1);
      participant_.push_back(pid.at(r.participant));
      pair_.push_back(pr);
    }
    for (std::size_t k = 0; k < seen.size(); ++k)
      if (seen[k][0] != 1 || seen[k][1] != 1)
        throw StructuralError("unbalanced data: every participant/replicate needs exactly "
                              "one value per method");
  }

  std::size_t size() const { return y_.size(); }
  std::size_t n_participants() const { return participant_names_.size(); }
  std::size_t n_pairs() const { return pair_participant_.size(); }
  const std::vector<double>& y() const { return y_; }
  const std::vector<int>& method() const { return method_; }
  const std::vector<int>& participant() const { return participant_; }
  const std::vector<int>& pair() const { return pair_; }

 private:
  std::vector<double> y_;
  std::vector<int> method_, participant_, pair_;
  std::vector<std::string> participant_names_;
  std::vector<int> pair_participant_;
};

inline constexpr double kAlphaPriorSd = 1e4;

/// Unconstrained layout: alpha1, alpha2, log gamma, log tau, [log omega],
/// log sigma1, [log sigma2], u_raw (P), [a_raw (pairs)], c_raw (2P, method-major).
class AgreementTarget {
 public:
  AgreementTarget(const AgreementData& data, AgreementVariant variant,
                  bool include_likelihood = true)
      : data_(data), variant_(variant), use_data_(include_likelihood) {
    has_a_ = variant != AgreementVariant::Exchangeable;
    two_sigma_ = variant != AgreementVariant::Linked;
    std::size_t k = 4;
    i_omega_ = has_a_ ? k++ : npos;
    i_sigma1_ = k++;
    i_sigma2_ = two_sigma_ ? k++ : i_sigma1_;
    i_u_ = k;
    k += data.n_participants();
    i_a_ = k;
    if (has_a_) k += data.n_pairs();
    i_c_ = k;
    k += 2 * data.n_participants();
    dim_ = k;
  }

  std::size_t dim() const { return dim_; }
  AgreementVariant variant() const { return variant_; }
  bool has_omega() const { return has_a_; }
  bool method_specific_sigma() const { return two_sigma_; }
  std::size_t omega_index() const { return i_omega_; }
  std::size_t sigma1_index() const { return i_sigma1_; }
  std::size_t sigma2_index() const { return i_sigma2_; }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    g.setZero(dim_);
    const std::size_t np = data_.n_participants();
    const double gamma = std::exp(x[2]), tau = std::exp(x[3]);
    const double omega = has_a_ ? std::exp(x[i_omega_]) : 0.0;
    const double sig[2] = {std::exp(x[i_sigma1_]), std::exp(x[i_sigma2_])};
    double lp = 0;
    double g_gamma = 0, g_tau = 0, g_omega = 0, g_sig[2] = {0, 0};
    if (use_data_) {
      double ss[2] = {0, 0};
      double cnt[2] = {0, 0};
      const auto& y = data_.y();
      for (std::size_t n = 0; n < y.size(); ++n) {
        const int m = data_.method()[n];
        const int p = data_.participant()[n];
        const std::size_t ic = i_c_ + static_cast<std::size_t>(m) * np + p;
        double mu = x[m] + gamma * x[i_u_ + p] + tau * x[ic];
        if (has_a_) mu += omega * x[i_a_ + data_.pair()[n]];
        const double r = y[n] - mu;
        const double w = r / (sig[m] * sig[m]);
        ss[m] += r * r;
        cnt[m] += 1;
        g[m] += w;
        g[i_u_ + p] += gamma * w;
        g_gamma += x[i_u_ + p] * w;
        g[ic] += tau * w;
        g_tau += x[ic] * w;
        if (has_a_) {
          g[i_a_ + data_.pair()[n]] += omega * w;
          g_omega += x[i_a_ + data_.pair()[n]] * w;
        }
      }
      for (int m = 0; m < 2; ++m) {
        lp += -cnt[m] * (dist::kHalfLog2Pi + std::log(sig[m])) -
              0.5 * ss[m] / (sig[m] * sig[m]);
        g_sig[m] += ss[m] / (sig[m] * sig[m] * sig[m]) - cnt[m] / sig[m];
      }
    }
    // Priors on the raw effects.
    for (std::size_t k = i_u_; k < dim_; ++k) {
      lp -= 0.5 * x[k] * x[k] + dist::kHalfLog2Pi;
      g[k] -= x[k];
    }
    for (int m = 0; m < 2; ++m) {
      lp += dist::normal_lpdf(x[m], 0, kAlphaPriorSd);
      g[m] += dist::normal_dx(x[m], 0, kAlphaPriorSd);
    }
    auto scale = [&](std::size_t i, double value, double g_nat) {
      g_nat += dist::half_cauchy_dx(value, 2.5);
      lp += dist::half_cauchy_lpdf(value, 2.5) + x[i];
      g[i] = g_nat * value + 1.0;
    };
    scale(2, gamma, g_gamma);
    scale(3, tau, g_tau);
    if (has_a_) scale(i_omega_, omega, g_omega);
    if (two_sigma_) {
      scale(i_sigma1_, sig[0], g_sig[0]);
      scale(i_sigma2_, sig[1], g_sig[1]);
    } else {
      scale(i_sigma1_, sig[0], g_sig[0] + g_sig[1]);
    }
    if (!std::isfinite(lp)) {
      g.setZero(dim_);
      return -std::numeric_limits<double>::infinity();
    }
    return lp;
  }

  Eigen::VectorXd initial_point(Rng& rng) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim_);
    const auto& y = data_.y();
    double mean[2] = {0, 0}, cnt[2] = {0, 0}, var = 0;
    for (std::size_t n = 0; n < y.size(); ++n) {
      mean[data_.method()[n]] += y[n];
      cnt[data_.method()[n]] += 1;
    }
    for (int m = 0; m < 2; ++m) mean[m] = cnt[m] > 0 ? mean[m] / cnt[m] : 0.0;
    for (std::size_t n = 0; n < y.size(); ++n) {
      const double d = y[n] - mean[data_.method()[n]];
      var += d * d;
    }
    const double sd = y.size() > 1 ? std::sqrt(var / (y.size() - 1.0)) : 1.0;
    const double log_half_sd = std::log(std::max(sd, 1e-3) / 2);
    auto u = [&](double w) { return w * (2 * uniform01(rng) - 1); };
    for (int m = 0; m < 2; ++m) x[m] = mean[m] + u(0.1 * std::max(sd, 1e-3));
    for (std::size_t k = 2; k < i_u_; ++k) x[k] = log_half_sd + u(1.0);
    for (std::size_t k = i_u_; k < dim_; ++k) x[k] = u(0.5);
    return x;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  const AgreementData& data_;
  AgreementVariant variant_;
  bool use_data_ = true;
  bool has_a_ = false, two_sigma_ = true;
  std::size_t i_omega_ = npos, i_sigma1_ = 0, i_sigma2_ = 0, i_u_ = 0, i_a_ = 0, i_c_ = 0;
  std::size_t dim_ = 0;
};

struct VarCompRow {
  std::string name;
  diag::Summary stats;
};

struct VarCompFit {
  AgreementVariant variant = AgreementVariant::Exchangeable;
  /// Per quantity, per chain draws: alpha1, alpha2, gamma, tau, [omega],
  /// sigma1 and sigma2 (or sigma), alpha_diff, [sigma_ratio].
  std::vector<std::string> names;
  std::vector<diag::Chains> draws;
  std::vector<VarCompRow> rows;
  std::vector<int> divergences;

  const VarCompRow& at(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw Error("no agreement quantity named " + name);
  }
  const diag::Chains& chains(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return draws[i];
    throw Error("no agreement quantity named " + name);
  }
  double max_rhat() const {
    double m = 0;
    for (const auto& r : rows)
      if (r.stats.rhat_defined) m = std::max(m, r.stats.rhat);
    return m;
  }
};

inline VarCompFit fit_agreement(const AgreementData& data, AgreementVariant variant,
                                const mcmc::SamplerConfig& cfg,
                                bool include_likelihood = true) {
  const AgreementTarget target(data, variant, include_likelihood);
  const auto chains = mcmc::run_chains(target, cfg);

  VarCompFit fit;
  fit.variant = variant;
  const bool two_sigma = target.method_specific_sigma();
  fit.names = {"alpha1", "alpha2", "gamma", "tau"};
  if (target.has_omega()) fit.names.push_back("omega");
  if (two_sigma) {
    fit.names.push_back("sigma1");
    fit.names.push_back("sigma2");
  } else {
    fit.names.push_back("sigma");
  }
  fit.names.push_back("alpha_diff");
  if (two_sigma) fit.names.push_back("sigma_ratio");
  fit.draws.assign(fit.names.size(), diag::Chains(chains.size()));

  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& d = chains[c].draws;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      std::vector<double> v = {d(i, 0), d(i, 1), std::exp(d(i, 2)), std::exp(d(i, 3))};
      if (target.has_omega()) v.push_back(std::exp(d(i, static_cast<Eigen::Index>(target.omega_index()))));
      const double s1 = std::exp(d(i, static_cast<Eigen::Index>(target.sigma1_index())));
      const double s2 = std::exp(d(i, static_cast<Eigen::Index>(target.sigma2_index())));
      v.push_back(s1);
      if (two_sigma) v.push_back(s2);
      v.push_back(d(i, 0) - d(i, 1));
      if (two_sigma) v.push_back(s1 / s2);
      for (std::size_t q = 0; q < v.size(); ++q) fit.draws[q][c].push_back(v[q]);
    }
    fit.divergences.push_back(chains[c].divergences);
  }
  for (std::size_t q = 0; q < fit.names.size(); ++q)
    fit.rows.push_back({fit.names[q], diag::summarize(fit.draws[q])});
  return fit;
}

inline VarCompFit fit_agreement_exchangeable(const AgreementData& data,
                                             const mcmc::SamplerConfig& cfg) {
  return fit_agreement(data, AgreementVariant::Exchangeable, cfg);
}

inline VarCompFit fit_agreement_linked(const AgreementData& data,
                                       const mcmc::SamplerConfig& cfg) {
  return fit_agreement(data, AgreementVariant::Linked, cfg);
}

/// Generating values for simulated agreement data (SDs throughout).
struct AgreementTruth {
  double alpha1 = 6.10, alpha2 = 6.08;
  double gamma = 0.3, tau = 0.01, omega = 0.0;
  double sigma1 = 0.35, sigma2 = 0.39;
};

/// Balanced data: every participant has `replicates` physical tests, each
/// measured by both methods.
inline std::vector<AgreementRow> simulate_agreement(const AgreementTruth& t,
                                                    std::size_t participants,
                                                    std::size_t replicates,
                                                    std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  std::vector<AgreementRow> rows;
  for (std::size_t p = 0; p < participants; ++p) {
    const double u = t.gamma * std_normal(rng);
    const double c1 = t.tau * std_normal(rng), c2 = t.tau * std_normal(rng);
    for (std::size_t r = 0; r < replicates; ++r) {
      const double a = t.omega * std_normal(rng);
      const std::string pid = "p" + std::to_string(p + 1), rid = std::to_string(r + 1);
      rows.push_back({1, pid, rid, t.alpha1 + u + a + c1 + t.sigma1 * std_normal(rng)});
      rows.push_back({2, pid, rid, t.alpha2 + u + a + c2 + t.sigma2 * std_normal(rng)});
    }
  }
  return rows;
}

}  // namespace mbw
