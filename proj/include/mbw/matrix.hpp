#pragma once

#include <Eigen/Dense>
#include <algorithm>

namespace mbw {

/// Symmetric matrix with eigenvalues clamped from below at `floor`.
/// `clamped` reports whether any eigenvalue was raised.
inline Eigen::MatrixXd clamp_eigenvalues(const Eigen::MatrixXd& a, double floor,
                                         bool* clamped = nullptr) {
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  const bool any = (ev.array() < floor).any();
  if (clamped) *clamped = any;
  if (!any) return sym;
  ev = ev.cwiseMax(floor);
  const Eigen::MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

/// Eigenvalue-clamped correlation matrix rescaled back to a unit diagonal.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& r, double floor = 1e-10,
                                           bool* projected = nullptr) {
  bool clamped = false;
  Eigen::MatrixXd c = clamp_eigenvalues(r, floor, &clamped);
  if (projected) *projected = clamped;
  if (!clamped) return c;
  const Eigen::VectorXd d = c.diagonal().cwiseSqrt().cwiseInverse();
  c = d.asDiagonal() * c * d.asDiagonal();
  c.diagonal().setOnes();
  return c;
}

/// diag(sd) * corr * diag(sd)
inline Eigen::MatrixXd covariance_from(const Eigen::VectorXd& sd, const Eigen::MatrixXd& corr) {
  return sd.asDiagonal() * corr * sd.asDiagonal();
}

}  // namespace mbw
