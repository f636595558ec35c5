#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "seqrd/covariance.hpp"
#include "seqrd/errors.hpp"

namespace seqrd {

using DistortionTuple = std::vector<double>;

enum class SourceKind { gauss_markov_1, gauss_markov_k, binary_markov };

// A stationary order-k source is described by one coefficient vector plus one
// innovation variance; per-frame variances are implied by stationarity.
struct SourceSpec {
  SourceKind kind = SourceKind::gauss_markov_1;
  int frames = 0;
  std::vector<double> variances;        // first-order Gaussian, size T
  std::vector<double> correlations;     // first-order Gaussian, size T-1
  std::vector<double> ar_coefficients;  // order-k Gaussian
  double innovation_variance = 1.0;     // order-k Gaussian
  std::vector<double> crossovers;       // binary, size T-1
};

inline SourceSpec make_gauss_markov_1(std::vector<double> variances,
                                      std::vector<double> correlations) {
  SourceSpec s;
  s.kind = SourceKind::gauss_markov_1;
  s.frames = static_cast<int>(variances.size());
  s.variances = std::move(variances);
  s.correlations = std::move(correlations);
  return s;
}

inline SourceSpec make_gauss_markov_k(int frames, std::vector<double> coefficients,
                                      double innovation_variance) {
  SourceSpec s;
  s.kind = SourceKind::gauss_markov_k;
  s.frames = frames;
  s.ar_coefficients = std::move(coefficients);
  s.innovation_variance = innovation_variance;
  return s;
}

inline SourceSpec make_binary_markov_spec(std::vector<double> crossovers) {
  SourceSpec s;
  s.kind = SourceKind::binary_markov;
  s.frames = static_cast<int>(crossovers.size()) + 1;
  s.crossovers = std::move(crossovers);
  return s;
}

inline int markov_order(const SourceSpec& spec) {
  switch (spec.kind) {
    case SourceKind::gauss_markov_1:
    case SourceKind::binary_markov:
      return 1;
    case SourceKind::gauss_markov_k:
      return static_cast<int>(spec.ar_coefficients.size());
  }
  return 1;
}

inline void validate_spec(const SourceSpec& spec) {
  if (spec.frames < 2) {
    throw invalid_spec_error("SourceSpec: frame count must be >= 2");
  }
  const size_t t = static_cast<size_t>(spec.frames);
  switch (spec.kind) {
    case SourceKind::gauss_markov_1:
      if (spec.variances.size() != t) {
        throw invalid_spec_error("SourceSpec: need one variance per frame");
      }
      if (spec.correlations.size() != t - 1) {
        throw invalid_spec_error("SourceSpec: need T-1 correlations");
      }
      for (double v : spec.variances) {
        if (!(v > 0.0)) throw invalid_spec_error("SourceSpec: variances must be positive");
      }
      for (double r : spec.correlations) {
        if (!(std::abs(r) <= 1.0)) {
          throw invalid_spec_error("SourceSpec: correlations must lie in [-1, 1]");
        }
      }
      break;
    case SourceKind::gauss_markov_k:
      if (spec.ar_coefficients.empty()) {
        throw invalid_spec_error("SourceSpec: order-k source needs coefficients");
      }
      if (!(spec.innovation_variance > 0.0)) {
        throw invalid_spec_error("SourceSpec: innovation variance must be positive");
      }
      break;
    case SourceKind::binary_markov:
      if (spec.crossovers.size() != t - 1) {
        throw invalid_spec_error("SourceSpec: need T-1 crossover probabilities");
      }
      for (double p : spec.crossovers) {
        if (!(p >= 0.0 && p <= 0.5)) {
          throw invalid_spec_error("SourceSpec: crossovers must lie in [0, 0.5]");
        }
      }
      break;
  }
}

namespace detail {

// Stationary autocovariances gamma_0..gamma_{n-1} of the AR(k) recursion
// X_t = sum_i a_i X_{t-i} + W: solve the Yule-Walker system for gamma_0..k,
// then extend by gamma_m = sum_i a_i gamma_{m-i}.
inline std::vector<double> ar_autocovariances(const std::vector<double>& a, double s2,
                                              int n) {
  const int k = static_cast<int>(a.size());
  // stationarity: companion-matrix spectral radius < 1
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) comp(0, i) = a[static_cast<size_t>(i)];
  for (int i = 1; i < k; ++i) comp(i, i - 1) = 1.0;
  const double rho = Eigen::EigenSolver<Eigen::MatrixXd>(comp, false)
                         .eigenvalues()
                         .cwiseAbs()
                         .maxCoeff();
  if (!(rho < 1.0 - 1e-12)) {
    throw invalid_spec_error("SourceSpec: regression is not stationary (spectral radius " +
                             std::to_string(rho) + ")");
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k + 1, k + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
  m(0, 0) = 1.0;
  for (int i = 1; i <= k; ++i) m(0, i) -= a[static_cast<size_t>(i - 1)];
  rhs(0) = s2;
  for (int r = 1; r <= k; ++r) {
    m(r, r) += 1.0;
    for (int i = 1; i <= k; ++i) m(r, std::abs(r - i)) -= a[static_cast<size_t>(i - 1)];
  }
  Eigen::VectorXd g = m.fullPivLu().solve(rhs);
  std::vector<double> gamma(static_cast<size_t>(std::max(n, k + 1)));
  for (int i = 0; i <= k; ++i) gamma[static_cast<size_t>(i)] = g(i);
  for (int mlag = k + 1; mlag < n; ++mlag) {
    double v = 0.0;
    for (int i = 1; i <= k; ++i) v += a[static_cast<size_t>(i - 1)] * gamma[static_cast<size_t>(mlag - i)];
    gamma[static_cast<size_t>(mlag)] = v;
  }
  gamma.resize(static_cast<size_t>(n));
  return gamma;
}

}  // namespace detail

// Sigma_X for Gaussian kinds. First order: entry (i, j) = sigma_i sigma_j
// prod_{m=i..j-1} rho_m; order-k: Toeplitz from the stationary recursion.
inline CovMatrix build_covariance(const SourceSpec& spec) {
  validate_spec(spec);
  const int t = spec.frames;
  CovMatrix s(t, t);
  switch (spec.kind) {
    case SourceKind::gauss_markov_1: {
      std::vector<double> sd(static_cast<size_t>(t));
      for (int i = 0; i < t; ++i) sd[static_cast<size_t>(i)] = std::sqrt(spec.variances[static_cast<size_t>(i)]);
      for (int i = 0; i < t; ++i) {
        for (int j = i; j < t; ++j) {
          double r = 1.0;
          for (int m = i; m < j; ++m) r *= spec.correlations[static_cast<size_t>(m)];
          s(i, j) = s(j, i) = sd[static_cast<size_t>(i)] * sd[static_cast<size_t>(j)] * r;
        }
      }
      break;
    }
    case SourceKind::gauss_markov_k: {
      const auto gamma =
          detail::ar_autocovariances(spec.ar_coefficients, spec.innovation_variance, t);
      for (int i = 0; i < t; ++i) {
        for (int j = 0; j < t; ++j) s(i, j) = gamma[static_cast<size_t>(std::abs(i - j))];
      }
      break;
    }
    case SourceKind::binary_markov:
      throw invalid_spec_error("build_covariance: source is not Gaussian");
  }
  check_covariance(s, "build_covariance");
  return s;
}

// Innovation variances (sigma_W1^2 = sigma_1^2, then the prediction-error
// recursion sigma_Wj^2 = rho_{j-1}^2 (sigma_j^2/sigma_{j-1}^2) D_{j-1}
// + (1 - rho_{j-1}^2) sigma_j^2).
inline std::vector<double> sigma_w(const SourceSpec& spec, const DistortionTuple& d) {
  validate_spec(spec);
  if (spec.kind != SourceKind::gauss_markov_1) {
    throw invalid_spec_error("sigma_w: first-order Gaussian sources only");
  }
  if (d.size() != static_cast<size_t>(spec.frames)) {
    throw invalid_spec_error("sigma_w: distortion tuple length mismatch");
  }
  std::vector<double> w(d.size());
  w[0] = spec.variances[0];
  for (size_t j = 1; j < d.size(); ++j) {
    const double rho = spec.correlations[j - 1];
    const double ratio = spec.variances[j] / spec.variances[j - 1];
    w[j] = rho * rho * ratio * d[j - 1] + (1.0 - rho * rho) * spec.variances[j];
  }
  return w;
}

inline bool in_region_cc(const SourceSpec& spec, const DistortionTuple& d) {
  const auto w = sigma_w(spec, d);
  for (size_t j = 0; j < d.size(); ++j) {
    if (d[j] < 0.0) return false;
    if (d[j] > w[j] * (1.0 + 1e-12)) return false;
  }
  return true;
}

inline bool in_region_jc(const CovMatrix& sigma, const DistortionTuple& d) {
  if (sigma.rows() != static_cast<Eigen::Index>(d.size())) {
    throw invalid_spec_error("in_region_jc: dimension mismatch");
  }
  CovMatrix m = sigma;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    if (d[static_cast<size_t>(j)] < 0.0) return false;
    m(j, j) -= d[static_cast<size_t>(j)];
  }
  const double lam_max = std::max(max_eigenvalue(sigma), 0.0);
  return min_eigenvalue(m) >= -kPsdTol * std::max(lam_max, 1e-300);
}

// Largest c such that every D in [0, c]^T is admissible for the joint-coding
// closed form: the smallest eigenvalue of Sigma.
inline double jc_hypercube_bound(const CovMatrix& sigma) {
  check_covariance(sigma, "jc_hypercube_bound");
  return std::max(min_eigenvalue(sigma), 0.0);
}

enum class SystemTag { CC, CNC, NCC, NCNC, JC };

// k1 = encoder delay, k2 = decoder delay; CC uses neither, CNC uses k2,
// NCC uses k1, JC is maximal delay by definition.
struct SystemKind {
  SystemTag tag = SystemTag::CC;
  int k1 = 0;
  int k2 = 0;
};

inline SystemKind kind_cc() { return {SystemTag::CC, 0, 0}; }
inline SystemKind kind_cnc(int k) { return {SystemTag::CNC, 0, k}; }
inline SystemKind kind_ncc(int k) { return {SystemTag::NCC, k, 0}; }
inline SystemKind kind_ncnc(int k1, int k2) { return {SystemTag::NCNC, k1, k2}; }
inline SystemKind kind_jc() { return {SystemTag::JC, 0, 0}; }

inline std::string to_string(const SystemKind& kind) {
  switch (kind.tag) {
    case SystemTag::CC:
      return "CC";
    case SystemTag::CNC:
      return "CNC" + std::to_string(kind.k2);
    case SystemTag::NCC:
      return "NCC" + std::to_string(kind.k1);
    case SystemTag::NCNC:
      return "NCNC" + std::to_string(kind.k1) + "_" + std::to_string(kind.k2);
    case SystemTag::JC:
      return "JC";
  }
  return "?";
}

// Delay of the equivalent decoder-delayed system whose chain-constraint list
// this kind shares; JC has none (empty list).
inline int equivalent_delay(const SystemKind& kind, int frames) {
  switch (kind.tag) {
    case SystemTag::CC:
      return 0;
    case SystemTag::CNC:
      return kind.k2;
    case SystemTag::NCC:
      return kind.k1;
    case SystemTag::NCNC:
      return kind.k1 + kind.k2;
    case SystemTag::JC:
      return frames - 1;
  }
  return 0;
}

inline void validate_kind(const SystemKind& kind, int frames) {
  if (kind.k1 < 0 || kind.k2 < 0) {
    throw invalid_spec_error("SystemKind: delays must be nonnegative");
  }
  if (kind.k1 >= frames || kind.k2 >= frames) {
    throw invalid_spec_error("SystemKind: delays must be smaller than the frame count");
  }
}

// Conditional-independence requirement "left independent of right given given",
// over variable ids 0..T-1 for X_1..X_T and T..2T-1 for Xhat_1..Xhat_T.
struct ChainConstraint {
  std::vector<int> left;
  std::vector<int> right;
  std::vector<int> given;
};

inline int x_id(int frame_1based) { return frame_1based - 1; }
inline int xhat_id(int frame_1based, int frames) { return frames + frame_1based - 1; }

// Constraint list of the delay-k decoder-delayed system:
//   Xhat_j independent of X_{j+k+1..T} given (X_{1..j+k}, Xhat_{1..j-1}),
// for j = 1..T-k-1.  Encoder-delayed and doubly delayed systems share the
// list of their sum-rate-equivalent decoder-delayed system.
inline std::vector<ChainConstraint> markov_constraints(const SystemKind& kind, int frames) {
  validate_kind(kind, frames);
  const int k = equivalent_delay(kind, frames);
  std::vector<ChainConstraint> out;
  for (int j = 1; j + k + 1 <= frames; ++j) {
    ChainConstraint c;
    c.left.push_back(xhat_id(j, frames));
    for (int i = j + k + 1; i <= frames; ++i) c.right.push_back(x_id(i));
    for (int i = 1; i <= j + k; ++i) c.given.push_back(x_id(i));
    for (int i = 1; i < j; ++i) c.given.push_back(xhat_id(i, frames));
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace seqrd
