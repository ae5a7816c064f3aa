#pragma once

// Gradient-based MCMC over a generic differentiable log density.
//
// The default engine is a multinomial No-U-Turn sampler with the generalised
// U-turn criterion, Nesterov dual-averaging step-size adaptation and windowed
// diagonal metric adaptation (fast/slow/fast warmup phases). An adaptive
// random-walk Metropolis engine is available as a gradient-free fallback.
//
// A Target is any type with
//   std::size_t dim() const;
//   double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;
//   Eigen::VectorXd initial_point(Rng& rng) const;
// The call operator returns the log density (including any change-of-variables
// term) and writes its gradient; it must return -inf rather than throw.

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mbw/distributions.hpp"
#include "mbw/error.hpp"
#include "mbw/parallel.hpp"
#include "mbw/random.hpp"

namespace mbw::mcmc {

template <class T>
concept Target = requires(const T& t, const Eigen::VectorXd& x,
                          Eigen::VectorXd& g, Rng& rng) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t(x, g) } -> std::convertible_to<double>;
  { t.initial_point(rng) } -> std::convertible_to<Eigen::VectorXd>;
};

enum class Engine { Nuts, RandomWalk };

struct SamplerConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_samples = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  Engine engine = Engine::Nuts;
  int init_attempts = 100;
  /// Worker threads for chain-level parallelism; 0 uses default_thread_count().
  std::size_t threads = 0;
  /// Extra iterations multiplier used only by the random-walk engine.
  int rw_thin = 1;
};

struct ChainOutput {
  Eigen::MatrixXd draws;  ///< n_samples x dim
  Eigen::VectorXd log_density;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int divergences = 0;
  double mean_accept = 0.0;
  long leapfrogs = 0;
  int max_depth_hits = 0;
};

inline constexpr double kMaxDeltaH = 1000.0;

namespace detail {

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

class DualAveraging {
 public:
  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0;
    x_bar_ = 0;
  }
  void set_delta(double d) { delta_ = d; }

  void learn(double& epsilon, double accept) {
    ++counter_;
    accept = accept > 1 ? 1 : accept;
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    epsilon = std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  double counter_ = 0, s_bar_ = 0, x_bar_ = 0, mu_ = 0, delta_ = 0.8;
  static constexpr double gamma_ = 0.05, kappa_ = 0.75, t0_ = 10;
};

/// Windowed variance estimation; windows double in length between a fixed
/// initial and terminal buffer.
class WindowedVariance {
 public:
  WindowedVariance(int n_warmup, std::size_t dim) : n_warmup_(n_warmup) {
    int init = 75, term = 50, base = 25;
    if (init + base + term > n_warmup) {
      init = static_cast<int>(0.15 * n_warmup);
      term = static_cast<int>(0.1 * n_warmup);
      base = n_warmup - (init + term);
    }
    init_buffer_ = init;
    term_buffer_ = term;
    base_window_ = base;
    window_size_ = base;
    next_window_ = init + base - 1;
    reset(dim);
  }

  bool enabled() const { return n_warmup_ >= 20; }

  /// Returns true when a window closed and `var` was updated.
  bool learn(Eigen::VectorXd& var, const Eigen::VectorXd& q) {
    if (!enabled()) return false;
    if (in_window()) add(q);
    if (counter_ == next_window_ && counter_ != n_warmup_) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      var = m2_ / (n - 1.0);
      var = (n / (n + 5.0)) * var +
            1e-3 * (5.0 / (n + 5.0)) * Eigen::VectorXd::Ones(var.size());
      reset(var.size());
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ &&
           counter_ != n_warmup_;
  }
  void compute_next_window() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_)
        next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }
  void reset(std::size_t dim) {
    n_ = 0;
    mean_ = Eigen::VectorXd::Zero(dim);
    m2_ = Eigen::VectorXd::Zero(dim);
  }
  void add(const Eigen::VectorXd& q) {
    ++n_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  int n_warmup_;
  int init_buffer_ = 0, term_buffer_ = 0, base_window_ = 0;
  int window_size_ = 0, next_window_ = 0, counter_ = 0;
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

template <Target T>
Eigen::VectorXd initialize(const T& target, Rng& rng, int attempts,
                           Eigen::VectorXd& grad, double& lp) {
  const std::size_t d = target.dim();
  grad.resize(d);
  for (int a = 0; a < attempts; ++a) {
    Eigen::VectorXd x = target.initial_point(rng);
    lp = target(x, grad);
    if (std::isfinite(lp) && grad.allFinite()) return x;
  }
  throw InitializationError("could not find a starting point with finite log "
                            "density after " + std::to_string(attempts) +
                            " attempts");
}

template <Target T>
class NutsChain {
 public:
  NutsChain(const T& target, Rng& rng, int max_depth)
      : target_(target), rng_(rng), max_depth_(max_depth) {
    inv_metric_ = Eigen::VectorXd::Ones(target.dim());
  }

  void set_state(const Eigen::VectorXd& q, const Eigen::VectorXd& grad, double lp) {
    z_.q = q;
    z_.grad = grad;
    z_.log_density = lp;
    z_.p = Eigen::VectorXd::Zero(q.size());
  }

  const detail::PhasePoint& state() const { return z_; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }
  double& step_size() { return epsilon_; }

  struct Transition {
    double accept = 0;
    int depth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
  };

  /// Step-size heuristic: double or halve until a single leapfrog step's
  /// acceptance crosses 0.8.
  void init_step_size() {
    const PhasePoint start = z_;
    if (epsilon_ == 0 || epsilon_ > 1e7 || std::isnan(epsilon_)) return;
    sample_momentum();
    double h0 = hamiltonian(z_);
    leapfrog(z_, epsilon_);
    double h = hamiltonian(z_);
    if (std::isnan(h)) h = INFINITY;
    const int direction = (h0 - h) > std::log(0.8) ? 1 : -1;
    for (int iter = 0; iter < 200; ++iter) {
      z_ = start;
      sample_momentum();
      h0 = hamiltonian(z_);
      leapfrog(z_, epsilon_);
      h = hamiltonian(z_);
      if (std::isnan(h)) h = INFINITY;
      const double dh = h0 - h;
      if (direction == 1 && !(dh > std::log(0.8))) break;
      if (direction == -1 && !(dh < std::log(0.8))) break;
      epsilon_ = direction == 1 ? 2 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7 || epsilon_ < 1e-300) break;
    }
    z_ = start;
  }

  Transition transition() {
    Transition out;
    sample_momentum();
    const double h0 = hamiltonian(z_);

    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    Eigen::VectorXd p_sharp = inv_metric_.cwiseProduct(z_.p);
    Eigen::VectorXd p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp;
    Eigen::VectorXd p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp;
    Eigen::VectorXd p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp;
    Eigen::VectorXd p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp;
    Eigen::VectorXd rho = z_.p;

    double log_sum_weight = 0.0;
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    divergent_ = false;
    int depth = 0;

    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(rho.size());
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(rho.size());
      bool valid = false;
      double log_sum_weight_subtree = -INFINITY;

      if (uniform01(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd,
                           rho_fwd, p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog,
                           log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck,
                           rho_bck, p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog,
                           log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform01(rng_) <
                 std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = dist::log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_ext = rho_bck + p_fwd_bck;
      persist &= criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
      rho_ext = rho_fwd + p_bck_fwd;
      persist &= criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
      if (!persist) break;
    }

    out.depth = depth;
    out.n_leapfrog = n_leapfrog;
    out.divergent = divergent_;
    out.accept = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    z_ = z_sample;
    return out;
  }

 private:
  double hamiltonian(const PhasePoint& z) const {
    if (!std::isfinite(z.log_density)) return INFINITY;
    return -z.log_density + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
  }

  void sample_momentum() {
    for (Eigen::Index i = 0; i < z_.p.size(); ++i)
      z_.p[i] = std_normal(rng_) / std::sqrt(inv_metric_[i]);
  }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    z.log_density = target_(z.q, z.grad);
    if (!std::isfinite(z.log_density) || !z.grad.allFinite()) {
      z.log_density = -INFINITY;
      return;
    }
    z.p += 0.5 * eps * z.grad;
  }

  static bool criterion(const Eigen::VectorXd& p_sharp_minus,
                        const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho,
                  Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double h0,
                  double sign, int& n_leapfrog, double& log_sum_weight,
                  double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(z_, sign * epsilon_);
      ++n_leapfrog;
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = INFINITY;
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = dist::log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = inv_metric_.cwiseProduct(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    const Eigen::Index d = z_.p.size();
    double log_sum_weight_init = -INFINITY;
    Eigen::VectorXd p_init_end(d), p_sharp_init_end(d);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(d);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init,
                    p_beg, p_init_end, h0, sign, n_leapfrog, log_sum_weight_init,
                    sum_metro_prob))
      return false;

    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = -INFINITY;
    Eigen::VectorXd p_final_beg(d), p_sharp_final_beg(d);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(d);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end,
                    rho_final, p_final_beg, p_end, h0, sign, n_leapfrog,
                    log_sum_weight_final, sum_metro_prob))
      return false;

    const double log_sum_weight_subtree =
        dist::log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = dist::log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform01(rng_) <
               std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_ext = rho_init + p_final_beg;
    persist &= criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
    rho_ext = rho_final + p_init_end;
    persist &= criterion(p_sharp_init_end, p_sharp_end, rho_ext);
    return persist;
  }

  const T& target_;
  Rng& rng_;
  int max_depth_;
  double epsilon_ = 1.0;
  bool divergent_ = false;
  Eigen::VectorXd inv_metric_;
  PhasePoint z_;
};

template <Target T>
ChainOutput run_nuts_chain(const T& target, const SamplerConfig& cfg, Rng& rng) {
  const std::size_t d = target.dim();
  Eigen::VectorXd grad(d);
  double lp = 0;
  const Eigen::VectorXd x0 = initialize(target, rng, cfg.init_attempts, grad, lp);

  NutsChain<T> chain(target, rng, cfg.max_tree_depth);
  chain.set_state(x0, grad, lp);
  chain.init_step_size();

  DualAveraging step_adapt;
  step_adapt.set_delta(cfg.target_accept);
  step_adapt.set_mu(std::log(10 * chain.step_size()));
  step_adapt.restart();
  WindowedVariance var_adapt(cfg.n_warmup, d);

  for (int it = 0; it < cfg.n_warmup; ++it) {
    const auto t = chain.transition();
    step_adapt.learn(chain.step_size(), t.accept);
    if (var_adapt.learn(chain.inv_metric(), chain.state().q)) {
      chain.init_step_size();
      step_adapt.set_mu(std::log(10 * chain.step_size()));
      step_adapt.restart();
    }
  }
  if (cfg.n_warmup > 0) chain.step_size() = step_adapt.final_step();

  ChainOutput out;
  out.draws.resize(cfg.n_samples, static_cast<Eigen::Index>(d));
  out.log_density.resize(cfg.n_samples);
  double accept_sum = 0;
  for (int it = 0; it < cfg.n_samples; ++it) {
    const auto t = chain.transition();
    out.draws.row(it) = chain.state().q.transpose();
    out.log_density[it] = chain.state().log_density;
    out.divergences += t.divergent ? 1 : 0;
    out.leapfrogs += t.n_leapfrog;
    out.max_depth_hits += t.depth >= cfg.max_tree_depth ? 1 : 0;
    accept_sum += t.accept;
  }
  out.mean_accept = cfg.n_samples > 0 ? accept_sum / cfg.n_samples : 0.0;
  out.step_size = chain.step_size();
  out.inv_metric = chain.inv_metric();
  return out;
}

/// Random-walk Metropolis with diagonal proposal covariance learned during
/// warmup and a Robbins-Monro scale targeting 0.234 acceptance.
template <Target T>
ChainOutput run_rw_chain(const T& target, const SamplerConfig& cfg, Rng& rng) {
  const std::size_t d = target.dim();
  Eigen::VectorXd grad(d);
  double lp = 0;
  Eigen::VectorXd x = initialize(target, rng, cfg.init_attempts, grad, lp);
  Eigen::VectorXd sd = Eigen::VectorXd::Ones(d);
  double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
  const int thin = std::max(1, cfg.rw_thin);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), m2 = Eigen::VectorXd::Zero(d);
  long n_window = 0;
  const int warm = cfg.n_warmup * thin;
  const int window_start = warm / 5;
  const int window_end = warm - warm / 10;

  auto step = [&](bool adapt, int iter) {
    Eigen::VectorXd y = x;
    const double scale = std::exp(log_scale);
    for (std::size_t i = 0; i < d; ++i) y[i] += scale * sd[i] * std_normal(rng);
    const double lp_new = target(y, grad);
    double accept = 0;
    if (std::isfinite(lp_new)) accept = std::min(1.0, std::exp(lp_new - lp));
    if (uniform01(rng) < accept) {
      x = y;
      lp = lp_new;
    }
    if (adapt) {
      log_scale += (accept - 0.234) / std::pow(iter + 1.0, 0.6);
      if (iter >= window_start && iter < window_end) {
        ++n_window;
        const Eigen::VectorXd delta = x - mean;
        mean += delta / static_cast<double>(n_window);
        m2 += delta.cwiseProduct(x - mean);
      }
      if (iter + 1 == window_end && n_window > 10) {
        sd = (m2 / (n_window - 1.0)).cwiseSqrt().cwiseMax(1e-8);
        log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
      }
    }
    return accept;
  };

  for (int it = 0; it < warm; ++it) step(true, it);

  ChainOutput out;
  out.draws.resize(cfg.n_samples, static_cast<Eigen::Index>(d));
  out.log_density.resize(cfg.n_samples);
  double accept_sum = 0;
  for (int it = 0; it < cfg.n_samples; ++it) {
    for (int t = 0; t < thin; ++t) accept_sum += step(false, 0) / thin;
    out.draws.row(it) = x.transpose();
    out.log_density[it] = lp;
  }
  out.mean_accept = cfg.n_samples > 0 ? accept_sum / cfg.n_samples : 0.0;
  out.step_size = std::exp(log_scale);
  out.inv_metric = sd.cwiseAbs2();
  return out;
}

}  // namespace detail

/// Runs `cfg.n_chains` chains; chain c draws from make_stream(cfg.seed, c)
/// regardless of how chains are scheduled across threads.
template <Target T>
std::vector<ChainOutput> run_chains(const T& target, const SamplerConfig& cfg) {
  std::vector<ChainOutput> chains(cfg.n_chains);
  const std::size_t threads = cfg.threads ? cfg.threads : default_thread_count();
  parallel_for(static_cast<std::size_t>(cfg.n_chains), threads, [&](std::size_t c) {
    Rng rng = make_stream(cfg.seed, c);
    chains[c] = cfg.engine == Engine::Nuts ? detail::run_nuts_chain(target, cfg, rng)
                                           : detail::run_rw_chain(target, cfg, rng);
  });
  return chains;
}

inline int total_divergences(const std::vector<ChainOutput>& chains) {
  int n = 0;
  for (const auto& c : chains) n += c.divergences;
  return n;
}

}  // namespace mbw::mcmc
