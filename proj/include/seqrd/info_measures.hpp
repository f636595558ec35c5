#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqrd/covariance.hpp"
#include "seqrd/errors.hpp"

namespace seqrd {

// Ordered list of joint-coordinate indices naming one block of variables.
using VarPartition = std::vector<int>;

// Dense joint distribution; probabilities stored row-major with the last
// variable's symbol varying fastest.
struct JointPmf {
  std::vector<int> sizes;
  std::vector<double> probs;

  int arity() const { return static_cast<int>(sizes.size()); }

  size_t state_count() const {
    size_t n = 1;
    for (int s : sizes) n *= static_cast<size_t>(s);
    return n;
  }
};

inline void validate_pmf(const JointPmf& p) {
  if (p.sizes.empty()) throw invalid_spec_error("JointPmf: no variables");
  for (int s : p.sizes) {
    if (s < 1) throw invalid_spec_error("JointPmf: alphabet sizes must be positive");
  }
  if (p.probs.size() != p.state_count()) {
    throw invalid_spec_error("JointPmf: probability array shape mismatch");
  }
  double total = 0.0;
  for (double v : p.probs) {
    if (v < 0.0) throw invalid_spec_error("JointPmf: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12 * std::max(1.0, std::abs(total))) {
    throw invalid_spec_error("JointPmf: probabilities sum to " + std::to_string(total));
  }
}

namespace detail {

inline std::vector<size_t> pmf_strides(const JointPmf& p) {
  const int n = p.arity();
  std::vector<size_t> stride(static_cast<size_t>(n));
  size_t s = 1;
  for (int v = n - 1; v >= 0; --v) {
    stride[static_cast<size_t>(v)] = s;
    s *= static_cast<size_t>(p.sizes[static_cast<size_t>(v)]);
  }
  return stride;
}

inline void check_vars(const JointPmf& p, const VarPartition& vars) {
  for (int v : vars) {
    if (v < 0 || v >= p.arity()) throw invalid_spec_error("variable index out of range");
  }
}

// Marginal over `vars` as a dense vector, packed in the listed order with the
// last listed variable fastest.  Empty list gives the scalar marginal {1}.
inline std::vector<double> subset_marginal(const JointPmf& p, const VarPartition& vars) {
  check_vars(p, vars);
  const auto stride = pmf_strides(p);
  size_t out_n = 1;
  for (int v : vars) out_n *= static_cast<size_t>(p.sizes[static_cast<size_t>(v)]);
  std::vector<double> out(out_n, 0.0);
  for (size_t f = 0; f < p.probs.size(); ++f) {
    const double pv = p.probs[f];
    if (pv == 0.0) continue;
    size_t idx = 0;
    for (int v : vars) {
      const auto sv = static_cast<size_t>(v);
      const int sym = static_cast<int>(f / stride[sv]) % p.sizes[sv];
      idx = idx * static_cast<size_t>(p.sizes[sv]) + static_cast<size_t>(sym);
    }
    out[idx] += pv;
  }
  return out;
}

inline double entropy_of(const std::vector<double>& dist) {
  double h = 0.0;
  for (double v : dist) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return h;
}

inline double subset_entropy(const JointPmf& p, const VarPartition& vars) {
  return entropy_of(subset_marginal(p, vars));
}

inline void check_disjoint(const std::vector<const VarPartition*>& parts) {
  std::vector<int> seen;
  for (const auto* part : parts) {
    for (int v : *part) {
      for (int s : seen) {
        if (s == v) throw invalid_spec_error("variable blocks must be disjoint");
      }
      seen.push_back(v);
    }
  }
}

inline VarPartition concat(const VarPartition& a, const VarPartition& b) {
  VarPartition out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Differences of entropies can dip a few ulps below zero.
inline double clamp_nonneg(double v) { return (v < 0.0 && v >= -1e-12) ? 0.0 : v; }

}  // namespace detail

inline double entropy(const JointPmf& p) {
  validate_pmf(p);
  return detail::entropy_of(p.probs);
}

inline double conditional_mi(const JointPmf& p, const VarPartition& a,
                             const VarPartition& b, const VarPartition& c) {
  validate_pmf(p);
  detail::check_disjoint({&a, &b, &c});
  const double h_ac = detail::subset_entropy(p, detail::concat(a, c));
  const double h_bc = detail::subset_entropy(p, detail::concat(b, c));
  const double h_abc = detail::subset_entropy(p, detail::concat(detail::concat(a, b), c));
  const double h_c = detail::subset_entropy(p, c);
  return detail::clamp_nonneg(h_ac + h_bc - h_abc - h_c);
}

// I(A^N -> B^N) = sum_n I(A^n; B_n | B^{n-1}).
inline double directed_information(const JointPmf& p, const VarPartition& a,
                                   const VarPartition& b) {
  validate_pmf(p);
  if (a.size() != b.size()) {
    throw invalid_spec_error("directed_information: sequences must have equal length");
  }
  detail::check_disjoint({&a, &b});
  double total = 0.0;
  for (size_t n = 1; n <= a.size(); ++n) {
    const VarPartition a_past(a.begin(), a.begin() + static_cast<long>(n));
    const VarPartition b_now{b[n - 1]};
    const VarPartition b_past(b.begin(), b.begin() + static_cast<long>(n - 1));
    total += conditional_mi(p, a_past, b_now, b_past);
  }
  return detail::clamp_nonneg(total);
}

// I_k(A^N -> B^N) = I(A^N; B^N) - I(0^k B^{N-k} -> A^N).  The padded sequence
// prefixes B with k copies of a constant symbol; conditioning on a constant is
// vacuous, so the subtracted term reduces to
//   sum_{n=k+1}^N I(B^{n-k}; A_n | A^{n-1}).
inline double k_directed_information(const JointPmf& p, const VarPartition& a,
                                     const VarPartition& b, int k) {
  validate_pmf(p);
  if (a.size() != b.size()) {
    throw invalid_spec_error("k_directed_information: sequences must have equal length");
  }
  const int n_len = static_cast<int>(a.size());
  if (k < 0 || k > n_len) {
    throw invalid_spec_error("k_directed_information: shift out of range");
  }
  detail::check_disjoint({&a, &b});
  const double mi = conditional_mi(p, a, b, {});
  double reverse = 0.0;
  for (int n = k + 1; n <= n_len; ++n) {
    const VarPartition b_shifted(b.begin(), b.begin() + (n - k));
    const VarPartition a_now{a[static_cast<size_t>(n - 1)]};
    const VarPartition a_past(a.begin(), a.begin() + (n - 1));
    reverse += conditional_mi(p, b_shifted, a_now, a_past);
  }
  return detail::clamp_nonneg(mi - reverse);
}

// |I(X;Xhat) - I_{k+1}(X -> Xhat) - I(0^{k+1} Xhat^{T-k-1} -> X)| for a pmf
// over (X_1..X_T, Xhat_1..Xhat_T); zero for every distribution.
inline double kdirect_identity_residual(const JointPmf& p, int k) {
  validate_pmf(p);
  if (p.arity() % 2 != 0) {
    throw invalid_spec_error("kdirect_identity_residual: need an (X, Xhat) pair layout");
  }
  const int t = p.arity() / 2;
  if (k < 0 || t < k + 1) {
    throw invalid_spec_error("kdirect_identity_residual: shift out of range");
  }
  VarPartition x(static_cast<size_t>(t)), xhat(static_cast<size_t>(t));
  for (int j = 0; j < t; ++j) {
    x[static_cast<size_t>(j)] = j;
    xhat[static_cast<size_t>(j)] = t + j;
  }
  const double mi = conditional_mi(p, x, xhat, {});
  const double forward = k_directed_information(p, x, xhat, k + 1);
  double reverse = 0.0;
  for (int n = k + 2; n <= t; ++n) {
    const VarPartition xh_shifted(xhat.begin(), xhat.begin() + (n - k - 1));
    const VarPartition x_now{x[static_cast<size_t>(n - 1)]};
    const VarPartition x_past(x.begin(), x.begin() + (n - 1));
    reverse += conditional_mi(p, xh_shifted, x_now, x_past);
  }
  return std::abs(mi - (forward + reverse));
}

// 1/2 log2(det S_AA det S_BB / det S).  A singular B block is handled by
// projecting B onto the range of S_BB (eigenvalues above 1e-10 of the largest);
// a singular A block is rejected.
inline double gaussian_mi(const CovMatrix& s, const VarPartition& a, const VarPartition& b) {
  detail::check_disjoint({&a, &b});
  for (int v : detail::concat(a, b)) {
    if (v < 0 || v >= s.rows()) throw invalid_spec_error("gaussian_mi: index out of range");
  }
  const auto na = static_cast<Eigen::Index>(a.size());
  const auto nb = static_cast<Eigen::Index>(b.size());
  if (na == 0 || nb == 0) return 0.0;
  CovMatrix s_aa(na, na), s_bb(nb, nb), s_ab(na, nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < na; ++j) s_aa(i, j) = s(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
    for (Eigen::Index j = 0; j < nb; ++j) s_ab(i, j) = s(a[static_cast<size_t>(i)], b[static_cast<size_t>(j)]);
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    for (Eigen::Index j = 0; j < nb; ++j) s_bb(i, j) = s(b[static_cast<size_t>(i)], b[static_cast<size_t>(j)]);
  }

  Eigen::SelfAdjointEigenSolver<CovMatrix> es_b(s_bb);
  const double lam_max = es_b.eigenvalues().maxCoeff();
  if (!(lam_max > 0.0)) return 0.0;  // B is deterministic
  const double cut = 1e-10 * lam_max;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < nb; ++i) {
    if (es_b.eigenvalues()(i) > cut) keep.push_back(i);
  }
  const auto nr = static_cast<Eigen::Index>(keep.size());
  CovMatrix v(nb, nr);
  for (Eigen::Index i = 0; i < nr; ++i) v.col(i) = es_b.eigenvectors().col(keep[static_cast<size_t>(i)]);
  const CovMatrix b_red = v.transpose() * s_bb * v;
  const CovMatrix ab_red = s_ab * v;

  CovMatrix joint(na + nr, na + nr);
  joint.topLeftCorner(na, na) = s_aa;
  joint.topRightCorner(na, nr) = ab_red;
  joint.bottomLeftCorner(nr, na) = ab_red.transpose();
  joint.bottomRightCorner(nr, nr) = b_red;

  const double ld_a = std::log(s_aa.determinant());
  if (!std::isfinite(ld_a)) {
    throw invalid_spec_error("gaussian_mi: singular source block");
  }
  const double det_a = s_aa.determinant();
  const double det_b = b_red.determinant();
  const double det_j = joint.determinant();
  if (!(det_a > 0.0)) throw invalid_spec_error("gaussian_mi: singular source block");
  if (!(det_j > 0.0) || !(det_b > 0.0)) {
    // joint still rank-deficient after reduction: fall back to eigen floors
    Eigen::SelfAdjointEigenSolver<CovMatrix> es_j(joint);
    Eigen::SelfAdjointEigenSolver<CovMatrix> es_r(b_red);
    const double floor_j = 1e-300;
    double lj = 0.0, lb = 0.0;
    for (Eigen::Index i = 0; i < es_j.eigenvalues().size(); ++i) {
      lj += std::log(std::max(es_j.eigenvalues()(i), floor_j));
    }
    for (Eigen::Index i = 0; i < es_r.eigenvalues().size(); ++i) {
      lb += std::log(std::max(es_r.eigenvalues()(i), floor_j));
    }
    return detail::clamp_nonneg((std::log(det_a) + lb - lj) / (2.0 * std::log(2.0)));
  }
  return detail::clamp_nonneg((std::log(det_a) + std::log(det_b) - std::log(det_j)) /
                              (2.0 * std::log(2.0)));
}

// Text round-trip: header "N s_1 .. s_N", then one row-major line per outcome
// ("sym_1 .. sym_N probability").
inline void write_pmf(std::ostream& os, const JointPmf& p) {
  validate_pmf(p);
  os << p.arity();
  for (int s : p.sizes) os << ' ' << s;
  os << '\n';
  const auto stride = detail::pmf_strides(p);
  char buf[64];
  for (size_t f = 0; f < p.probs.size(); ++f) {
    for (int v = 0; v < p.arity(); ++v) {
      const auto sv = static_cast<size_t>(v);
      os << static_cast<int>(f / stride[sv]) % p.sizes[sv] << ' ';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", p.probs[f]);
    os << buf << '\n';
  }
}

inline JointPmf read_pmf(std::istream& is) {
  int arity = 0;
  if (!(is >> arity) || arity < 1) throw invalid_spec_error("pmf table: bad header");
  JointPmf p;
  p.sizes.resize(static_cast<size_t>(arity));
  for (int& s : p.sizes) {
    if (!(is >> s)) throw invalid_spec_error("pmf table: bad header");
  }
  p.probs.assign(p.state_count(), 0.0);
  const auto stride = detail::pmf_strides(p);
  std::vector<int> syms(static_cast<size_t>(arity));
  for (size_t row = 0; row < p.probs.size(); ++row) {
    size_t f = 0;
    for (int v = 0; v < arity; ++v) {
      if (!(is >> syms[static_cast<size_t>(v)])) {
        throw invalid_spec_error("pmf table: truncated row");
      }
      const int sym = syms[static_cast<size_t>(v)];
      if (sym < 0 || sym >= p.sizes[static_cast<size_t>(v)]) {
        throw invalid_spec_error("pmf table: symbol out of range");
      }
      f += static_cast<size_t>(sym) * stride[static_cast<size_t>(v)];
    }
    double prob = 0.0;
    if (!(is >> prob)) throw invalid_spec_error("pmf table: missing probability");
    p.probs[f] = prob;
  }
  validate_pmf(p);
  return p;
}

}  // namespace seqrd
