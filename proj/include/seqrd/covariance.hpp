#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "seqrd/errors.hpp"

namespace seqrd {

using CovMatrix = Eigen::MatrixXd;

// Relative symmetry tolerance for covariance inputs.
inline constexpr double kSymTol = 1e-12;
// Eigenvalues >= -kPsdTol * lambda_max count as nonnegative, so boundary
// distortion tuples stay inside their regions.
inline constexpr double kPsdTol = 1e-10;

inline bool is_symmetric(const CovMatrix& s, double rtol = kSymTol) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  return (s - s.transpose()).cwiseAbs().maxCoeff() <= rtol * scale;
}

inline double min_eigenvalue(const CovMatrix& s) {
  Eigen::SelfAdjointEigenSolver<CovMatrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const CovMatrix& s) {
  Eigen::SelfAdjointEigenSolver<CovMatrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// Numerical PSD test: smallest eigenvalue down to -kPsdTol * largest passes.
inline bool is_psd(const CovMatrix& s) {
  Eigen::SelfAdjointEigenSolver<CovMatrix> es(s, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double lam_max = std::max(0.0, ev.maxCoeff());
  return ev.minCoeff() >= -kPsdTol * std::max(lam_max, 1e-300);
}

inline void check_covariance(const CovMatrix& s, const std::string& who) {
  if (s.rows() != s.cols()) {
    throw invalid_spec_error(who + ": covariance must be square");
  }
  if (!is_symmetric(s)) {
    throw invalid_spec_error(who + ": covariance not symmetric");
  }
  if (!is_psd(s)) {
    throw invalid_spec_error(who + ": covariance not positive semidefinite");
  }
}

// Cholesky factor with a symmetric-eigendecomposition fallback so that
// near-singular covariances (eigenvalues within kPsdTol * lambda_max of zero)
// still yield a usable sampling factor L with L L^T ~= s.
inline Eigen::MatrixXd sampling_factor(const CovMatrix& s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) {
    return llt.matrixL();
  }
  Eigen::SelfAdjointEigenSolver<CovMatrix> es(s);
  Eigen::VectorXd ev = es.eigenvalues();
  const double floor = kPsdTol * std::max(ev.maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    ev(i) = ev(i) > floor ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace seqrd
