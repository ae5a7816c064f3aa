#pragma once

// Cholesky factors of correlation matrices from unconstrained reals, and the
// LKJ density on them. Written generically so forward-mode duals can
// differentiate through the transform.

#include <cmath>
#include <cstddef>
#include <vector>

namespace mbw {

/// Value plus one directional derivative.
struct Dual {
  double v = 0, d = 0;
  Dual() = default;
  Dual(double value, double deriv = 0) : v(value), d(deriv) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator*(double a, Dual b) { return {a * b.v, a * b.d}; }
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d / (2 * s)};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual log1p(Dual a) { return {std::log1p(a.v), a.d / (1 + a.v)}; }
inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1 - t * t)};
}

namespace detail {

/// log(1 - tanh(y)^2) without cancellation for large |y|.
inline double log_sech2(double y) {
  const double a = std::abs(y);
  return std::log(4.0) - 2 * a - 2 * std::log1p(std::exp(-2 * a));
}
inline Dual log_sech2(Dual y) { return {log_sech2(y.v), -2 * std::tanh(y.v) * y.d}; }

}  // namespace detail

inline std::size_t corr_free_dim(std::size_t k) { return k * (k - 1) / 2; }

/// Fills `l` (k x k, row-major, lower triangular with unit-norm rows) from
/// k(k-1)/2 reals via canonical partial correlations tanh(y). Returns the log
/// absolute Jacobian of the map.
template <class T>
T cholesky_corr_constrain(const T* y, std::size_t k, std::vector<T>& l) {
  using std::log1p;
  using std::sqrt;
  using std::tanh;
  l.assign(k * k, T(0.0));
  T log_jac(0.0);
  std::size_t idx = 0;
  l[0] = T(1.0);
  for (std::size_t i = 1; i < k; ++i) {
    log_jac += detail::log_sech2(y[idx]);
    T z = tanh(y[idx++]);
    l[i * k] = z;
    T sum_sq = z * z;
    for (std::size_t j = 1; j < i; ++j) {
      log_jac += detail::log_sech2(y[idx]);
      z = tanh(y[idx++]);
      log_jac += 0.5 * log1p(T(0.0) - sum_sq);
      const T lij = z * sqrt(T(1.0) - sum_sq);
      l[i * k + j] = lij;
      sum_sq += lij * lij;
    }
    l[i * k + i] = sqrt(T(1.0) - sum_sq);
  }
  return log_jac;
}

/// Unnormalised LKJ(eta) log density of the correlation matrix L L^T,
/// expressed on its Cholesky factor.
template <class T>
T lkj_corr_cholesky_lpdf(const std::vector<T>& l, std::size_t k, double eta) {
  using std::log;
  T lp(0.0);
  for (std::size_t i = 1; i < k; ++i) {
    const double c = static_cast<double>(k) - static_cast<double>(i) - 1.0 + 2.0 * eta - 2.0;
    lp += c * log(l[i * k + i]);
  }
  return lp;
}

/// Unconstrained reals reproducing a given Cholesky factor (inverse of
/// cholesky_corr_constrain).
inline std::vector<double> cholesky_corr_free(const std::vector<double>& l, std::size_t k) {
  std::vector<double> y;
  for (std::size_t i = 1; i < k; ++i) {
    double sum_sq = 0;
    for (std::size_t j = 0; j < i; ++j) {
      const double lij = l[i * k + j];
      const double z = j == 0 ? lij : lij / std::sqrt(1 - sum_sq);
      y.push_back(std::atanh(z));
      sum_sq += lij * lij;
    }
  }
  return y;
}

}  // namespace mbw
