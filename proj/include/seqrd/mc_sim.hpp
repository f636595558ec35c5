#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "seqrd/closed_forms.hpp"
#include "seqrd/covariance.hpp"
#include "seqrd/errors.hpp"
#include "seqrd/info_measures.hpp"
#include "seqrd/source_model.hpp"

namespace seqrd {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// (seed, stream_id) fully determines the sequence; replications and channels
// draw from distinct streams so aggregation order cannot matter.
inline std::mt19937_64 seeded_rng_stream(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t state = seed ^ (0xD1B54A32D192ED03ULL * (stream_id + 1));
  const std::uint64_t a = detail::splitmix64(state);
  const std::uint64_t b = detail::splitmix64(state);
  return std::mt19937_64(a ^ (b << 1));
}

// Box-Muller on explicit 53-bit uniforms: identical draws on every platform,
// unlike std::normal_distribution.
class GaussianStream {
 public:
  explicit GaussianStream(std::mt19937_64 gen) : gen_(gen) {}

  double next() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * kInv53;  // (0, 1]
    const double u2 = static_cast<double>(gen_() >> 11) * kInv53;          // [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    cached_ = r * std::sin(th);
    has_cached_ = true;
    return r * std::cos(th);
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;
  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Strictly positive random joint distribution (normalized exponential draws);
// deterministic in the generator state.
inline JointPmf random_pmf(const std::vector<int>& sizes, std::mt19937_64& gen) {
  JointPmf p;
  p.sizes = sizes;
  p.probs.resize(p.state_count());
  double total = 0.0;
  constexpr double inv53 = 1.0 / 9007199254740992.0;
  for (double& v : p.probs) {
    const double u = (static_cast<double>(gen() >> 11) + 1.0) * inv53;
    v = -std::log(u);
    total += v;
  }
  for (double& v : p.probs) v /= total;
  return p;
}

enum class SimBackend { ideal_test_channel, uniform_scalar_quantizer };

struct SimConfig {
  SourceSpec spec;
  DistortionTuple d;
  long n = 100000;
  std::uint64_t seed = 1;
  SimBackend backend = SimBackend::ideal_test_channel;
  int replications = 1;
};

struct SimReport {
  std::string backend;
  long n = 0;
  std::uint64_t seed = 0;
  int replications = 1;
  std::vector<double> target_d;
  std::vector<double> empirical_mse;                   // averaged over replications
  std::vector<double> stage_rates;                     // bits per frame
  std::vector<double> empirical_innovation_variances;  // prediction-error power
  std::vector<double> conditional_cross_cov;           // one entry per delay-1 chain
  std::vector<std::vector<double>> per_replication_mse;
};

namespace detail {

constexpr std::uint64_t kStreamsPerReplication = 16;

inline std::vector<double> sample_frames(const CovMatrix& factor, GaussianStream& gs) {
  const Eigen::Index t = factor.rows();
  Eigen::VectorXd z(t);
  for (Eigen::Index j = 0; j < t; ++j) z(j) = gs.next();
  Eigen::VectorXd x = factor * z;
  return std::vector<double>(x.data(), x.data() + t);
}

struct QuantizerResult {
  double mse = 0.0;
  double entropy_bits = 0.0;
  double step = 0.0;
};

// Midrise uniform quantizer applied to `w`; plug-in entropy of the index
// frequencies is the reported rate.
inline QuantizerResult quantize_eval(const std::vector<double>& w, double step) {
  QuantizerResult out;
  out.step = step;
  std::map<long, long> counts;
  double sq = 0.0;
  for (double v : w) {
    const long idx = static_cast<long>(std::floor(v / step));
    const double recon = (static_cast<double>(idx) + 0.5) * step;
    sq += (v - recon) * (v - recon);
    ++counts[idx];
  }
  out.mse = sq / static_cast<double>(w.size());
  double h = 0.0;
  for (const auto& [idx, c] : counts) {
    const double f = static_cast<double>(c) / static_cast<double>(w.size());
    h -= f * std::log2(f);
  }
  out.entropy_bits = h;
  return out;
}

// Bisect the step until the empirical quantization MSE is within 1% of the
// target (monotone in the step).
inline QuantizerResult tune_quantizer(const std::vector<double>& w, double target) {
  double power = 0.0;
  for (double v : w) power += v * v;
  power /= static_cast<double>(w.size());
  double lo = 1e-8 * std::sqrt(std::max(power, 1e-300));
  double hi = 64.0 * std::sqrt(std::max(power, target));
  QuantizerResult best = quantize_eval(w, hi);
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    const QuantizerResult r = quantize_eval(w, mid);
    if (std::abs(r.mse - target) < std::abs(best.mse - target)) best = r;
    if (std::abs(r.mse - target) <= 0.01 * target) break;
    if (r.mse > target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return best;
}

}  // namespace detail

// Predict each frame from the previous reconstruction, code the innovation
// (statistically ideal forward channel, or an actual uniform quantizer), and
// reconstruct.  Frame MSE equals the innovation coding error.
inline SimReport simulate_dpcm(const SimConfig& cfg) {
  validate_spec(cfg.spec);
  if (cfg.spec.kind != SourceKind::gauss_markov_1) {
    throw invalid_spec_error("simulate_dpcm: first-order Gaussian sources only");
  }
  if (cfg.n < 1 || cfg.replications < 1) {
    throw invalid_spec_error("simulate_dpcm: need n >= 1 and replications >= 1");
  }
  const bool ideal = cfg.backend == SimBackend::ideal_test_channel;
  if (ideal && !in_region_cc(cfg.spec, cfg.d)) {
    throw out_of_region_error("simulate_dpcm: distortion tuple outside the causal region");
  }
  const int t = cfg.spec.frames;
  const size_t tu = static_cast<size_t>(t);
  const CovMatrix sigma = build_covariance(cfg.spec);
  const CovMatrix factor = sampling_factor(sigma);
  const std::vector<double> sw = sigma_w(cfg.spec, cfg.d);

  SimReport rep;
  rep.backend = ideal ? "ideal_test_channel" : "uniform_scalar_quantizer";
  rep.n = cfg.n;
  rep.seed = cfg.seed;
  rep.replications = cfg.replications;
  rep.target_d = cfg.d;
  rep.empirical_mse.assign(tu, 0.0);
  rep.empirical_innovation_variances.assign(tu, 0.0);
  rep.stage_rates.assign(tu, 0.0);

  for (int r = 0; r < cfg.replications; ++r) {
    const std::uint64_t base = static_cast<std::uint64_t>(r) * detail::kStreamsPerReplication;
    GaussianStream src(seeded_rng_stream(cfg.seed, base));
    std::vector<GaussianStream> noise;
    noise.reserve(tu);
    for (int j = 0; j < t; ++j) {
      noise.emplace_back(seeded_rng_stream(cfg.seed, base + 1 + static_cast<std::uint64_t>(j)));
    }

    // per-frame sample buffers: X and the innovation W
    std::vector<std::vector<double>> x(tu, std::vector<double>(static_cast<size_t>(cfg.n)));
    for (long i = 0; i < cfg.n; ++i) {
      const auto frames = detail::sample_frames(factor, src);
      for (int j = 0; j < t; ++j) x[static_cast<size_t>(j)][static_cast<size_t>(i)] = frames[static_cast<size_t>(j)];
    }

    std::vector<double> xhat_prev(static_cast<size_t>(cfg.n), 0.0);
    std::vector<double> mse_r(tu, 0.0);
    for (int j = 0; j < t; ++j) {
      const size_t ju = static_cast<size_t>(j);
      std::vector<double> w(static_cast<size_t>(cfg.n));
      double pred_gain = 0.0;
      if (j > 0) {
        pred_gain = cfg.spec.correlations[ju - 1] *
                    std::sqrt(cfg.spec.variances[ju] / cfg.spec.variances[ju - 1]);
      }
      double wpow = 0.0;
      for (long i = 0; i < cfg.n; ++i) {
        const size_t iu = static_cast<size_t>(i);
        const double pred = j > 0 ? pred_gain * xhat_prev[iu] : 0.0;
        w[iu] = x[ju][iu] - pred;
        wpow += w[iu] * w[iu];
      }
      rep.empirical_innovation_variances[ju] += wpow / static_cast<double>(cfg.n);

      std::vector<double> what(static_cast<size_t>(cfg.n));
      if (ideal) {
        const double a = std::max(0.0, (sw[ju] - cfg.d[ju]) / sw[ju]);
        const double noise_sd = std::sqrt(std::max(0.0, a * cfg.d[ju]));
        for (long i = 0; i < cfg.n; ++i) {
          const size_t iu = static_cast<size_t>(i);
          what[iu] = a * w[iu] + noise_sd * noise[ju].next();
        }
        rep.stage_rates[ju] = std::max(0.5 * std::log2(sw[ju] / cfg.d[ju]), 0.0);
      } else {
        const auto qr = detail::tune_quantizer(w, cfg.d[ju]);
        for (long i = 0; i < cfg.n; ++i) {
          const size_t iu = static_cast<size_t>(i);
          const long idx = static_cast<long>(std::floor(w[iu] / qr.step));
          what[iu] = (static_cast<double>(idx) + 0.5) * qr.step;
        }
        rep.stage_rates[ju] += qr.entropy_bits / static_cast<double>(cfg.replications);
      }
      double sq = 0.0;
      for (long i = 0; i < cfg.n; ++i) {
        const size_t iu = static_cast<size_t>(i);
        const double pred = j > 0 ? pred_gain * xhat_prev[iu] : 0.0;
        const double xh = pred + what[iu];
        sq += (x[ju][iu] - xh) * (x[ju][iu] - xh);
        xhat_prev[iu] = xh;
      }
      mse_r[ju] = sq / static_cast<double>(cfg.n);
    }
    rep.per_replication_mse.push_back(mse_r);
    for (int j = 0; j < t; ++j) {
      rep.empirical_mse[static_cast<size_t>(j)] += mse_r[static_cast<size_t>(j)] / cfg.replications;
    }
  }
  for (double& v : rep.empirical_innovation_variances) v /= cfg.replications;
  return rep;
}

// Samples (X, Xhat) from the joint test channel X = Xhat + Z and reports the
// empirical conditional cross-covariances behind every delay-1 chain:
// regressing the conditioning block out of both sides.
inline SimReport simulate_jc_testchannel(const CovMatrix& sigma, const DistortionTuple& d,
                                         long n, std::uint64_t seed) {
  check_covariance(sigma, "simulate_jc_testchannel");
  if (!in_region_jc(sigma, d)) {
    throw out_of_region_error("simulate_jc_testchannel: Sigma - diag(D) is not PSD");
  }
  if (n < 1) throw invalid_spec_error("simulate_jc_testchannel: need n >= 1");
  const Eigen::Index t = sigma.rows();
  const size_t tu = static_cast<size_t>(t);
  CovMatrix shat = sigma;
  for (Eigen::Index j = 0; j < t; ++j) shat(j, j) -= d[static_cast<size_t>(j)];
  shat = 0.5 * (shat + shat.transpose());
  const CovMatrix factor = sampling_factor(shat);

  GaussianStream gs_hat(seeded_rng_stream(seed, 0));
  GaussianStream gs_z(seeded_rng_stream(seed, 1));

  // empirical second moments of the stacked vector (X, Xhat)
  Eigen::MatrixXd moments = Eigen::MatrixXd::Zero(2 * t, 2 * t);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(2 * t);
  std::vector<double> mse(tu, 0.0);
  Eigen::VectorXd stacked(2 * t);
  for (long i = 0; i < n; ++i) {
    const auto xhat = detail::sample_frames(factor, gs_hat);
    for (Eigen::Index j = 0; j < t; ++j) {
      const size_t ju = static_cast<size_t>(j);
      const double z = std::sqrt(std::max(d[ju], 0.0)) * gs_z.next();
      stacked(j) = xhat[ju] + z;  // X
      stacked(t + j) = xhat[ju];
      mse[ju] += z * z;
    }
    mean += stacked;
    moments += stacked * stacked.transpose();
  }
  mean /= static_cast<double>(n);
  const CovMatrix cov =
      moments / static_cast<double>(n) - mean * mean.transpose();

  SimReport rep;
  rep.backend = "jc_test_channel";
  rep.n = n;
  rep.seed = seed;
  rep.target_d = d;
  rep.empirical_mse.resize(tu);
  for (size_t j = 0; j < tu; ++j) rep.empirical_mse[j] = mse[j] / static_cast<double>(n);
  rep.per_replication_mse.push_back(rep.empirical_mse);

  for (const auto& ch : markov_constraints(kind_cnc(1), static_cast<int>(t))) {
    const auto sub = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                          static_cast<Eigen::Index>(cols.size()));
      for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t jj = 0; jj < cols.size(); ++jj) {
          out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jj)) =
              cov(rows[i], cols[jj]);
        }
      }
      return out;
    };
    const Eigen::MatrixXd s_ab = sub(ch.left, ch.right);
    const Eigen::MatrixXd s_ac = sub(ch.left, ch.given);
    const Eigen::MatrixXd s_cc = sub(ch.given, ch.given);
    const Eigen::MatrixXd s_cb = sub(ch.given, ch.right);
    const Eigen::MatrixXd resid =
        s_ab - s_ac * s_cc.completeOrthogonalDecomposition().solve(s_cb);
    rep.conditional_cross_cov.push_back(resid.cwiseAbs().maxCoeff());
  }
  return rep;
}

namespace detail {

inline void json_array(std::ostream& os, const char* key, const std::vector<double>& v,
                       bool trailing_comma) {
  char buf[64];
  os << "  \"" << key << "\": [";
  for (size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    os << (i ? ", " : "") << buf;
  }
  os << "]" << (trailing_comma ? "," : "") << "\n";
}

}  // namespace detail

inline void write_report_json(std::ostream& os, const SimReport& rep) {
  os << "{\n";
  os << "  \"backend\": \"" << rep.backend << "\",\n";
  os << "  \"n\": " << rep.n << ",\n";
  os << "  \"seed\": " << rep.seed << ",\n";
  os << "  \"replications\": " << rep.replications << ",\n";
  detail::json_array(os, "target_d", rep.target_d, true);
  detail::json_array(os, "empirical_mse", rep.empirical_mse, true);
  detail::json_array(os, "stage_rates", rep.stage_rates, true);
  detail::json_array(os, "empirical_innovation_variances",
                     rep.empirical_innovation_variances, true);
  detail::json_array(os, "conditional_cross_cov", rep.conditional_cross_cov, false);
  os << "}\n";
}

inline void write_report_csv(std::ostream& os, const SimReport& rep) {
  os << "# schema: sim_report v1\n";
  os << "replication,frame,target_d,empirical_mse,stage_rate_bits,innovation_variance\n";
  char buf[256];
  for (size_t r = 0; r < rep.per_replication_mse.size(); ++r) {
    for (size_t j = 0; j < rep.per_replication_mse[r].size(); ++j) {
      const double target = j < rep.target_d.size() ? rep.target_d[j] : 0.0;
      const double rate = j < rep.stage_rates.size() ? rep.stage_rates[j] : 0.0;
      const double iv = j < rep.empirical_innovation_variances.size()
                            ? rep.empirical_innovation_variances[j]
                            : 0.0;
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g,%.12g,%.12g,%.12g\n", r, j + 1, target,
                    rep.per_replication_mse[r][j], rate, iv);
      os << buf;
    }
  }
}

}  // namespace seqrd
