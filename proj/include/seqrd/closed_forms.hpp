#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "seqrd/covariance.hpp"
#include "seqrd/errors.hpp"
#include "seqrd/source_model.hpp"

namespace seqrd {

using RateTuple = std::vector<double>;

struct StageRates {
  std::vector<double> rates;                 // bits per frame
  std::vector<double> innovation_variances;  // sigma_Wj^2 per stage
  double sum = 0.0;
};

inline double log2_ratio(double num, double den) { return 0.5 * std::log2(num / den); }

// Sum of the stagewise terms 1/2 log2(sigma_Wj^2 / D_j); valid only when every
// frame distortion fits under its innovation variance.
inline double cc_sum_rate_gm(const SourceSpec& spec, const DistortionTuple& d) {
  if (!in_region_cc(spec, d)) {
    throw out_of_region_error("cc_sum_rate_gm: distortion tuple outside the causal region");
  }
  const auto w = sigma_w(spec, d);
  double total = 0.0;
  for (size_t j = 0; j < d.size(); ++j) {
    if (!(d[j] > 0.0)) {
      throw out_of_region_error("cc_sum_rate_gm: distortions must be positive");
    }
    total += log2_ratio(w[j], d[j]);
  }
  // boundary tuples may land a hair past 1:1 ratios; rates are nonnegative
  return std::max(total, 0.0);
}

inline StageRates dpcm_stage_rates(const SourceSpec& spec, const DistortionTuple& d) {
  if (!in_region_cc(spec, d)) {
    throw out_of_region_error("dpcm_stage_rates: distortion tuple outside the causal region");
  }
  StageRates out;
  out.innovation_variances = sigma_w(spec, d);
  out.rates.resize(d.size());
  for (size_t j = 0; j < d.size(); ++j) {
    if (!(d[j] > 0.0)) {
      throw out_of_region_error("dpcm_stage_rates: distortions must be positive");
    }
    out.rates[j] = std::max(log2_ratio(out.innovation_variances[j], d[j]), 0.0);
  }
  out.sum = std::accumulate(out.rates.begin(), out.rates.end(), 0.0);
  return out;
}

inline double jc_rate_gm(const CovMatrix& sigma, const DistortionTuple& d) {
  if (!in_region_jc(sigma, d)) {
    throw out_of_region_error("jc_rate_gm: Sigma - diag(D) is not PSD");
  }
  double log_prod = 0.0;
  for (double dj : d) {
    if (!(dj > 0.0)) throw out_of_region_error("jc_rate_gm: distortions must be positive");
    log_prod += std::log2(dj);
  }
  const double det = sigma.determinant();
  if (!(det > 0.0)) {
    throw out_of_region_error("jc_rate_gm: singular source covariance");
  }
  return std::max(0.5 * std::log2(det) - 0.5 * log_prod, 0.0);
}

// Stagewise equivalent of jc_rate_gm for first-order sources:
// 1/2 log2(sigma_1^2/D_1) + sum_j 1/2 log2(sigma_j^2 (1 - rho_{j-1}^2) / D_j).
inline StageRates jc_stage_rates_gm(const SourceSpec& spec, const DistortionTuple& d) {
  validate_spec(spec);
  if (spec.kind != SourceKind::gauss_markov_1) {
    throw invalid_spec_error("jc_stage_rates_gm: first-order Gaussian sources only");
  }
  if (!in_region_jc(build_covariance(spec), d)) {
    throw out_of_region_error("jc_stage_rates_gm: Sigma - diag(D) is not PSD");
  }
  StageRates out;
  out.rates.resize(d.size());
  out.innovation_variances.resize(d.size());
  out.innovation_variances[0] = spec.variances[0];
  for (size_t j = 1; j < d.size(); ++j) {
    const double rho = spec.correlations[j - 1];
    out.innovation_variances[j] = spec.variances[j] * (1.0 - rho * rho);
  }
  for (size_t j = 0; j < d.size(); ++j) {
    if (!(d[j] > 0.0)) {
      throw out_of_region_error("jc_stage_rates_gm: distortions must be positive");
    }
    out.rates[j] = log2_ratio(out.innovation_variances[j], d[j]);
  }
  out.sum = std::accumulate(out.rates.begin(), out.rates.end(), 0.0);
  return out;
}

// Decoder delay k covers the source memory: the delayed system meets the joint
// bound, so its sum-rate is the joint closed form.
inline double cnc_sum_rate_gm(const SourceSpec& spec, const DistortionTuple& d, int k) {
  validate_spec(spec);
  if (k < 0) throw invalid_spec_error("cnc_sum_rate_gm: delay must be nonnegative");
  const CovMatrix sigma = build_covariance(spec);
  if (markov_order(spec) > k && k < spec.frames - 1) {
    throw no_closed_form_error("cnc_sum_rate_gm: delay below the source order");
  }
  if (!in_region_jc(sigma, d)) {
    throw no_closed_form_error("cnc_sum_rate_gm: distortion tuple outside the joint region");
  }
  return jc_rate_gm(sigma, d);
}

// Gap between the delay-1 decoder system and the joint bound for the singular
// three-frame source with X1 = X2 (unit variances, corr(X2, X3) = rho): both
// reduce to two-stage problems on (X1, X3).
inline double counter_example_gap(double rho, double d, double d3) {
  if (!(std::abs(rho) <= 1.0)) {
    throw invalid_spec_error("counter_example_gap: correlation must lie in [-1, 1]");
  }
  if (!(d > 0.0 && d3 > 0.0)) {
    throw out_of_region_error("counter_example_gap: distortions must be positive");
  }
  const double sw2 = rho * rho * d + (1.0 - rho * rho);
  if (d > 1.0 || d3 > sw2 * (1.0 + 1e-12)) {
    throw out_of_region_error("counter_example_gap: outside the two-stage causal region");
  }
  if (d3 > 1.0 || (1.0 - d) * (1.0 - d3) < rho * rho * (1.0 - 1e-12)) {
    throw out_of_region_error("counter_example_gap: outside the two-stage joint region");
  }
  const double cc2 = log2_ratio(1.0, d) + log2_ratio(sw2, d3);
  const double det2 = 1.0 - rho * rho;
  const double jc2 = 0.5 * std::log2(det2) - 0.5 * std::log2(d) - 0.5 * std::log2(d3);
  return cc2 - jc2;
}

namespace detail {

// Delay of `kind` read as a decoder-delayed system; CC counts as delay 0.
inline std::optional<int> as_decoder_delay(const SystemKind& kind) {
  if (kind.tag == SystemTag::CC) return 0;
  if (kind.tag == SystemTag::CNC) return kind.k2;
  return std::nullopt;
}

// (encoder, decoder) delays of `kind` read as a doubly delayed system.
inline std::optional<std::pair<int, int>> as_double_delay(const SystemKind& kind) {
  if (kind.tag == SystemTag::CC) return std::make_pair(0, 0);
  if (kind.tag == SystemTag::NCC) return std::make_pair(kind.k1, 0);
  if (kind.tag == SystemTag::NCNC) return std::make_pair(kind.k1, kind.k2);
  return std::nullopt;
}

}  // namespace detail

// Structural rate reshuffles between delay placements with equal total delay:
//   decoder delay k -> encoder/decoder split (k1, k2), k1 + k2 = k:
//     (R_1 + ... + R_{k1+1}, R_{k1+2..T}, 0^{k1})
//   encoder/decoder split (k1, k2) -> decoder delay k1 + k2:
//     (0^{k1}, R_{1..T-k1-1}, R_{T-k1} + ... + R_T)
// Sum of rates is preserved exactly.
inline RateTuple transform_rates(const SystemKind& kind_from, const SystemKind& kind_to,
                                 const RateTuple& r) {
  const int t = static_cast<int>(r.size());
  if (t < 2) throw invalid_spec_error("transform_rates: need at least two frames");
  validate_kind(kind_from, t);
  validate_kind(kind_to, t);

  if (const auto k = detail::as_decoder_delay(kind_from)) {
    const auto split = detail::as_double_delay(kind_to);
    if (!split || split->first + split->second != *k) {
      throw invalid_spec_error("transform_rates: unsupported architecture pair");
    }
    const int k1 = split->first;
    RateTuple out;
    out.reserve(r.size());
    double head = 0.0;
    for (int j = 0; j <= k1; ++j) head += r[static_cast<size_t>(j)];
    out.push_back(head);
    for (int j = k1 + 1; j < t; ++j) out.push_back(r[static_cast<size_t>(j)]);
    for (int j = 0; j < k1; ++j) out.push_back(0.0);
    return out;
  }
  if (const auto split = detail::as_double_delay(kind_from)) {
    const auto k = detail::as_decoder_delay(kind_to);
    if (!k || *k != split->first + split->second) {
      throw invalid_spec_error("transform_rates: unsupported architecture pair");
    }
    const int k1 = split->first;
    RateTuple out;
    out.reserve(r.size());
    for (int j = 0; j < k1; ++j) out.push_back(0.0);
    for (int j = 0; j < t - k1 - 1; ++j) out.push_back(r[static_cast<size_t>(j)]);
    double tail = 0.0;
    for (int j = t - k1 - 1; j < t; ++j) tail += r[static_cast<size_t>(j)];
    out.push_back(tail);
    return out;
  }
  throw invalid_spec_error("transform_rates: unsupported architecture pair");
}

}  // namespace seqrd
