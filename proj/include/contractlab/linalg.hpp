#pragma once

#include <Eigen/Dense>

#include "contractlab/common.hpp"

namespace contractlab {

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-tol_eig, 0) are clipped to zero; anything lower is a misconfiguration.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m,
                                double tol_sym = 1e-10,
                                double tol_eig = 1e-10) {
  if (m.rows() != m.cols()) throw LinAlgError("sqrt_psd: matrix not square");
  const double scale = 1.0 + m.norm();
  if ((m - m.transpose()).norm() > tol_sym * scale)
    throw LinAlgError("sqrt_psd: matrix not symmetric within tolerance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success)
    throw LinAlgError("sqrt_psd: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol_eig * scale)
      throw LinAlgError("sqrt_psd: eigenvalue " + std::to_string(ev[i]) +
                        " below tolerance");
    ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// sigma^* (sigma sigma^*)^{-1}: the pseudo-inverse used by the gradient
// estimator weight. Also reports the condition number of sigma sigma^*.
inline Eigen::MatrixXd sigma_hat_inverse(const Eigen::MatrixXd& sigma,
                                         double* cond_out = nullptr) {
  const Eigen::MatrixXd a = sigma * sigma.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success)
    throw LinAlgError("sigma_hat_inverse: eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0)
    throw LinAlgError("sigma_hat_inverse: sigma sigma^* is singular");
  if (cond_out) *cond_out = ev.maxCoeff() / ev.minCoeff();
  Eigen::VectorXd inv = ev;
  for (int i = 0; i < inv.size(); ++i) inv[i] = 1.0 / inv[i];
  const Eigen::MatrixXd ainv =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return sigma.transpose() * ainv;
}

}  // namespace contractlab
