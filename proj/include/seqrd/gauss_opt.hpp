#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "seqrd/covariance.hpp"
#include "seqrd/errors.hpp"
#include "seqrd/source_model.hpp"

namespace seqrd {

struct SolverOptions {
  double penalty_init = 100.0;
  double penalty_growth = 10.0;
  int penalty_rounds = 6;
  int max_inner_iterations = 3000;
  double tol_chain = 1e-6;  // on covariances normalized by trace(Sigma)/T
  double tol_mse = 1e-8;
  double l_diag_floor = 1e-9;
  std::uint64_t seed = 0;
  int multistart = 1;
};

struct OptProblem {
  CovMatrix sigma_x;
  DistortionTuple d;
  std::vector<ChainConstraint> constraints;
  SolverOptions options;
};

struct RDResult {
  double rate_bits = 0.0;
  CovMatrix joint;  // 2T x 2T covariance of (X, Xhat)
  DistortionTuple mse_achieved;
  std::vector<double> chain_residuals;  // normalized, one per constraint
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct LbfgsOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
};

// Two-loop L-BFGS with Armijo backtracking; `fg` fills the gradient and
// returns the objective.
template <class Fg>
LbfgsOutcome lbfgs_minimize(Fg&& fg, Eigen::VectorXd x, int max_iters) {
  constexpr int kHistory = 8;
  constexpr double kArmijo = 1e-4;
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd g(x.size()), g_new(x.size());
  double f = fg(x, g);
  int it = 0;
  int flat_count = 0;
  for (; it < max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      const auto iu = static_cast<size_t>(i);
      alpha[iu] = rho_hist[iu] * s_hist[iu].dot(q);
      q -= alpha[iu] * y_hist[iu];
    }
    if (!s_hist.empty()) {
      const auto& sb = s_hist.back();
      const auto& yb = y_hist.back();
      q *= sb.dot(yb) / yb.dot(yb);
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd d = -q;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(g.norm(), 1e-12)) : 1.0;
    double f_new = f;
    Eigen::VectorXd x_new = x;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * d;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
      if (step < 1e-20) break;
    }
    if (!accepted) break;
    const Eigen::VectorXd s_vec = x_new - x;
    const Eigen::VectorXd y_vec = g_new - g;
    const double sy = s_vec.dot(y_vec);
    if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
      s_hist.push_back(s_vec);
      y_hist.push_back(y_vec);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double df = f - f_new;
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (df <= 1e-18 * std::max(1.0, std::abs(f))) {
      if (++flat_count >= 2) {
        ++it;
        break;
      }
    } else {
      flat_count = 0;
    }
  }
  return {std::move(x), f, it};
}

inline Eigen::Index tri_size(Eigen::Index t) { return t * (t + 1) / 2; }

inline Eigen::VectorXd pack_cl(const CovMatrix& cm, const CovMatrix& l) {
  const Eigen::Index t = cm.rows();
  Eigen::VectorXd x(t * t + tri_size(t));
  Eigen::Index p = 0;
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) x(p++) = cm(i, j);
  }
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) x(p++) = l(i, j);
  }
  return x;
}

inline void unpack_cl(const Eigen::VectorXd& x, Eigen::Index t, CovMatrix& cm, CovMatrix& l) {
  cm.resize(t, t);
  l = CovMatrix::Zero(t, t);
  Eigen::Index p = 0;
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) cm(i, j) = x(p++);
  }
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = x(p++);
  }
}

inline void floor_diag(CovMatrix& l, double eps) {
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (std::abs(l(i, i)) < eps) l(i, i) = (l(i, i) >= 0.0) ? eps : -eps;
  }
}

inline CovMatrix submatrix(const CovMatrix& s, const std::vector<int>& rows,
                           const std::vector<int>& cols) {
  CovMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s(rows[i], cols[j]);
    }
  }
  return out;
}

inline void add_block(CovMatrix& e, const std::vector<int>& rows, const std::vector<int>& cols,
                      const CovMatrix& delta) {
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < cols.size(); ++j) {
      e(rows[i], cols[j]) += delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
}

struct PenaltyEval {
  double f = 0.0;
  double worst_chain = 0.0;
};

// Objective 1/2 (ln det Shat - ln det L L^T) plus quadratic penalties on MSE
// overshoot and on conditional cross-covariance residuals.  The gradient of
// every penalty is accumulated as E = dPenalty/dS at the exact read positions
// of the joint covariance, then pushed through Shat = C^T Q C + L L^T via
//   gC += E_tr + E_bl^T + Q C (E_br + E_br^T),  gL += (E_br + E_br^T) L.
inline PenaltyEval penalty_fg(const Eigen::VectorXd& x, const CovMatrix& sig_x,
                              const CovMatrix& q, const DistortionTuple& d,
                              const std::vector<ChainConstraint>& chains, double mu,
                              double eps_floor, Eigen::VectorXd* grad) {
  const Eigen::Index t = sig_x.rows();
  CovMatrix cm, l;
  unpack_cl(x, t, cm, l);
  floor_diag(l, eps_floor);
  const CovMatrix m = cm.transpose() * q * cm;
  const CovMatrix g_mat = l * l.transpose();
  const CovMatrix shat = m + g_mat;

  Eigen::LLT<CovMatrix> llt(shat);
  double ld1 = 0.0;
  if (llt.info() == Eigen::Success) {
    const CovMatrix lfac = llt.matrixL();
    for (Eigen::Index i = 0; i < t; ++i) ld1 += 2.0 * std::log(lfac(i, i));
  } else {
    Eigen::SelfAdjointEigenSolver<CovMatrix> es(shat);
    for (Eigen::Index i = 0; i < t; ++i) ld1 += std::log(std::max(es.eigenvalues()(i), 1e-300));
  }
  double ld2 = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) ld2 += 2.0 * std::log(std::abs(l(i, i)));

  PenaltyEval out;
  out.f = 0.5 * (ld1 - ld2);

  CovMatrix p;
  if (llt.info() == Eigen::Success) {
    p = llt.solve(CovMatrix::Identity(t, t));
  } else {
    p = shat.completeOrthogonalDecomposition().pseudoInverse();
  }
  CovMatrix g_c = q * cm * p;
  // (L L^T)^{-1} L = L^{-T}
  CovMatrix l_inv_t = l.triangularView<Eigen::Lower>()
                          .transpose()
                          .solve(CovMatrix::Identity(t, t));
  CovMatrix g_l = p * l - l_inv_t;

  CovMatrix e = CovMatrix::Zero(2 * t, 2 * t);
  for (Eigen::Index j = 0; j < t; ++j) {
    const double mse = sig_x(j, j) - 2.0 * cm(j, j) + shat(j, j);
    const double viol = std::max(0.0, mse - d[static_cast<size_t>(j)]);
    if (viol > 0.0) {
      out.f += mu * viol * viol;
      const double coef = 2.0 * mu * viol;
      e(j, t + j) += -2.0 * coef;
      e(t + j, t + j) += coef;
    }
  }

  CovMatrix s(2 * t, 2 * t);
  s.topLeftCorner(t, t) = sig_x;
  s.topRightCorner(t, t) = cm;
  s.bottomLeftCorner(t, t) = cm.transpose();
  s.bottomRightCorner(t, t) = shat;

  for (const auto& ch : chains) {
    const CovMatrix s_ab = submatrix(s, ch.left, ch.right);
    CovMatrix r;
    if (!ch.given.empty()) {
      const CovMatrix s_ac = submatrix(s, ch.left, ch.given);
      const CovMatrix s_cc = submatrix(s, ch.given, ch.given);
      const CovMatrix s_cb = submatrix(s, ch.given, ch.right);
      Eigen::LLT<CovMatrix> llt_c(s_cc);
      CovMatrix w, u;
      if (llt_c.info() == Eigen::Success) {
        w = llt_c.solve(s_cb);
        u = llt_c.solve(s_ac.transpose());
      } else {
        const auto pinv = s_cc.completeOrthogonalDecomposition();
        w = pinv.solve(s_cb);
        u = pinv.solve(s_ac.transpose());
      }
      r = s_ab - s_ac * w;
      add_block(e, ch.left, ch.right, 2.0 * mu * r);
      add_block(e, ch.left, ch.given, -2.0 * mu * r * w.transpose());
      add_block(e, ch.given, ch.right, -2.0 * mu * u * r);
      add_block(e, ch.given, ch.given, 2.0 * mu * u * r * w.transpose());
    } else {
      r = s_ab;
      add_block(e, ch.left, ch.right, 2.0 * mu * r);
    }
    out.f += mu * r.squaredNorm();
    if (r.size() > 0) {
      out.worst_chain = std::max(out.worst_chain, r.cwiseAbs().maxCoeff());
    }
  }

  if (grad != nullptr) {
    const CovMatrix e_tr = e.topRightCorner(t, t);
    const CovMatrix e_bl = e.bottomLeftCorner(t, t);
    const CovMatrix e_br = e.bottomRightCorner(t, t);
    const CovMatrix b_sym = e_br + e_br.transpose();
    g_c += e_tr + e_bl.transpose() + q * cm * b_sym;
    g_l += b_sym * l;
    Eigen::Index pidx = 0;
    grad->resize(x.size());
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < t; ++j) (*grad)(pidx++) = g_c(i, j);
    }
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) (*grad)(pidx++) = g_l(i, j);
    }
  }
  return out;
}

// MSE-feasible starting point: the joint test channel when admissible, else
// per-frame scaling Xhat_j = a_j X_j + noise with a_j = (sigma_j^2 - D_j)/sigma_j^2.
inline void init_cm_shat(const CovMatrix& sig_x, const DistortionTuple& d, CovMatrix& cm,
                         CovMatrix& shat) {
  const Eigen::Index t = sig_x.rows();
  if (in_region_jc(sig_x, d)) {
    shat = sig_x;
    for (Eigen::Index j = 0; j < t; ++j) shat(j, j) -= d[static_cast<size_t>(j)];
    cm = shat;
    return;
  }
  Eigen::VectorXd a(t);
  for (Eigen::Index j = 0; j < t; ++j) {
    a(j) = std::max(0.0, (sig_x(j, j) - d[static_cast<size_t>(j)]) / sig_x(j, j));
  }
  cm = sig_x * a.asDiagonal();
  shat = a.asDiagonal() * sig_x * a.asDiagonal();
  for (Eigen::Index j = 0; j < t; ++j) shat(j, j) += a(j) * d[static_cast<size_t>(j)];
}

inline Eigen::VectorXd initial_point(const CovMatrix& sig_x, const CovMatrix& q,
                                     const DistortionTuple& d) {
  const Eigen::Index t = sig_x.rows();
  CovMatrix cm, shat;
  init_cm_shat(sig_x, d, cm, shat);
  CovMatrix r0 = shat - cm.transpose() * q * cm;
  r0 = 0.5 * (r0 + r0.transpose());
  Eigen::SelfAdjointEigenSolver<CovMatrix> es(r0);
  const double scale = sig_x.trace() / static_cast<double>(t);
  Eigen::VectorXd w = es.eigenvalues().cwiseMax(1e-8 * scale);
  const CovMatrix r_psd =
      es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
  Eigen::LLT<CovMatrix> llt(r_psd);
  CovMatrix l0 = llt.matrixL();
  return pack_cl(cm, l0);
}

}  // namespace detail

// Joint covariance of the test channel X = Xhat + Z when D is admissible for
// it, otherwise the per-frame scaling fallback; always PSD and MSE-feasible.
inline CovMatrix feasible_init(const CovMatrix& sigma_x, const DistortionTuple& d) {
  check_covariance(sigma_x, "feasible_init");
  if (sigma_x.rows() != static_cast<Eigen::Index>(d.size())) {
    throw invalid_spec_error("feasible_init: dimension mismatch");
  }
  const Eigen::Index t = sigma_x.rows();
  CovMatrix cm, shat;
  detail::init_cm_shat(sigma_x, d, cm, shat);
  CovMatrix s(2 * t, 2 * t);
  s.topLeftCorner(t, t) = sigma_x;
  s.topRightCorner(t, t) = cm;
  s.bottomLeftCorner(t, t) = cm.transpose();
  s.bottomRightCorner(t, t) = shat;
  return s;
}

// Minimizes I(X; Xhat) over jointly Gaussian reproductions subject to
// per-frame MSE caps and zero conditional cross-covariance for each chain
// constraint.  Returns a feasible point, so the rate is an upper bound.
inline RDResult min_sum_rate(const OptProblem& problem) {
  const CovMatrix& sig_x = problem.sigma_x;
  check_covariance(sig_x, "min_sum_rate");
  const Eigen::Index t = sig_x.rows();
  if (static_cast<size_t>(t) != problem.d.size()) {
    throw invalid_spec_error("min_sum_rate: distortion tuple length mismatch");
  }
  for (double dj : problem.d) {
    if (!(dj > 0.0)) {
      throw infeasible_error("min_sum_rate: distortion targets must be positive");
    }
  }
  const double lam_max = max_eigenvalue(sig_x);
  if (min_eigenvalue(sig_x) < 1e-12 * std::max(lam_max, 1e-300)) {
    throw invalid_spec_error("min_sum_rate: singular source covariance, perturb it first");
  }
  for (const auto& ch : problem.constraints) {
    for (int v : ch.left) {
      if (v < 0 || v >= 2 * t) throw invalid_spec_error("min_sum_rate: constraint index range");
    }
    for (int v : ch.right) {
      if (v < 0 || v >= 2 * t) throw invalid_spec_error("min_sum_rate: constraint index range");
    }
    for (int v : ch.given) {
      if (v < 0 || v >= 2 * t) throw invalid_spec_error("min_sum_rate: constraint index range");
    }
  }

  const SolverOptions& opt = problem.options;
  const CovMatrix q = Eigen::LLT<CovMatrix>(sig_x).solve(CovMatrix::Identity(t, t));
  const Eigen::VectorXd x_base = detail::initial_point(sig_x, q, problem.d);
  const double scale = sig_x.trace() / static_cast<double>(t);

  RDResult best;
  double best_score = std::numeric_limits<double>::infinity();
  std::mt19937_64 gen(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  const int starts = std::max(1, opt.multistart);
  for (int start = 0; start < starts; ++start) {
    Eigen::VectorXd x = x_base;
    if (start > 0) {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        x(i) += 0.05 * std::sqrt(scale) * noise(gen);
      }
    }
    double mu = opt.penalty_init;
    int total_iters = 0;
    for (int round = 0; round < opt.penalty_rounds; ++round) {
      auto fg = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& g) {
        return detail::penalty_fg(xv, sig_x, q, problem.d, problem.constraints, mu,
                                  opt.l_diag_floor, &g)
            .f;
      };
      auto res = detail::lbfgs_minimize(fg, x, opt.max_inner_iterations);
      x = std::move(res.x);
      total_iters += res.iterations;
      mu *= opt.penalty_growth;
    }

    CovMatrix cm, l;
    detail::unpack_cl(x, t, cm, l);
    detail::floor_diag(l, opt.l_diag_floor);
    const CovMatrix m = cm.transpose() * q * cm;
    CovMatrix g_mat = l * l.transpose();
    CovMatrix shat = m + g_mat;
    Eigen::VectorXd mse(t);
    for (Eigen::Index j = 0; j < t; ++j) {
      mse(j) = sig_x(j, j) - 2.0 * cm(j, j) + shat(j, j);
    }
    // push any MSE overshoot into the conditional noise if room remains
    CovMatrix g2 = g_mat;
    for (Eigen::Index j = 0; j < t; ++j) {
      g2(j, j) -= std::max(0.0, mse(j) - problem.d[static_cast<size_t>(j)]);
    }
    if (min_eigenvalue(g2) > 0.0) {
      g_mat = g2;
      shat = m + g_mat;
      for (Eigen::Index j = 0; j < t; ++j) {
        mse(j) = sig_x(j, j) - 2.0 * cm(j, j) + shat(j, j);
      }
    }

    RDResult out;
    out.joint.resize(2 * t, 2 * t);
    out.joint.topLeftCorner(t, t) = sig_x;
    out.joint.topRightCorner(t, t) = cm;
    out.joint.bottomLeftCorner(t, t) = cm.transpose();
    out.joint.bottomRightCorner(t, t) = shat;
    out.mse_achieved.assign(static_cast<size_t>(t), 0.0);
    for (Eigen::Index j = 0; j < t; ++j) out.mse_achieved[static_cast<size_t>(j)] = mse(j);

    Eigen::SelfAdjointEigenSolver<CovMatrix> es_s(shat), es_g(g_mat);
    double ld_s = 0.0, ld_g = 0.0;
    for (Eigen::Index i = 0; i < t; ++i) {
      ld_s += std::log(std::max(es_s.eigenvalues()(i), 1e-300));
      ld_g += std::log(std::max(es_g.eigenvalues()(i), 1e-300));
    }
    out.rate_bits = std::max(0.5 * (ld_s - ld_g) / std::log(2.0), 0.0);
    out.iterations = total_iters;

    double worst_chain = 0.0;
    out.chain_residuals.clear();
    for (const auto& ch : problem.constraints) {
      const CovMatrix s_ab = detail::submatrix(out.joint, ch.left, ch.right);
      CovMatrix r = s_ab;
      if (!ch.given.empty()) {
        const CovMatrix s_ac = detail::submatrix(out.joint, ch.left, ch.given);
        const CovMatrix s_cc = detail::submatrix(out.joint, ch.given, ch.given);
        const CovMatrix s_cb = detail::submatrix(out.joint, ch.given, ch.right);
        r = s_ab - s_ac * s_cc.completeOrthogonalDecomposition().solve(s_cb);
      }
      const double res = r.size() > 0 ? r.cwiseAbs().maxCoeff() / scale : 0.0;
      out.chain_residuals.push_back(res);
      worst_chain = std::max(worst_chain, res);
    }
    double worst_mse = 0.0;
    for (Eigen::Index j = 0; j < t; ++j) {
      worst_mse = std::max(worst_mse, mse(j) - problem.d[static_cast<size_t>(j)]);
    }
    out.converged = worst_chain <= opt.tol_chain && worst_mse <= opt.tol_mse;

    const double penalty_score = out.converged ? 0.0 : 1e6 * (worst_chain + worst_mse);
    const double score = out.rate_bits + penalty_score;
    if (score < best_score) {
      best_score = score;
      best = std::move(out);
    }
  }
  return best;
}

struct CorollaryReport {
  double rate_constrained = 0.0;
  double rate_unconstrained = 0.0;
  double gap_bits = 0.0;
  bool in_cc_region = false;
  bool in_jc_region = false;
  RDResult constrained;
  RDResult unconstrained;
};

// Solves the same instance with and without the architecture's chain
// constraints; the gap quantifies how much the delay structure costs.
inline CorollaryReport verify_corollary(const SourceSpec& spec, const DistortionTuple& d,
                                        const SystemKind& kind,
                                        const SolverOptions& options = {}) {
  const CovMatrix sigma = build_covariance(spec);
  CorollaryReport rep;
  rep.in_jc_region = in_region_jc(sigma, d);
  rep.in_cc_region =
      spec.kind == SourceKind::gauss_markov_1 ? in_region_cc(spec, d) : false;

  OptProblem with;
  with.sigma_x = sigma;
  with.d = d;
  with.constraints = markov_constraints(kind, spec.frames);
  with.options = options;
  rep.constrained = min_sum_rate(with);

  OptProblem without = with;
  without.constraints.clear();
  rep.unconstrained = min_sum_rate(without);

  rep.rate_constrained = rep.constrained.rate_bits;
  rep.rate_unconstrained = rep.unconstrained.rate_bits;
  rep.gap_bits = rep.rate_constrained - rep.rate_unconstrained;
  return rep;
}

}  // namespace seqrd
