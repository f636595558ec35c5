#pragma once

#include <random>
#include <vector>

#include "seqrd/mc_sim.hpp"
#include "seqrd/source_model.hpp"

namespace seqrd::testutil {

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  constexpr double inv53 = 1.0 / 9007199254740992.0;
  return lo + (hi - lo) * static_cast<double>(gen() >> 11) * inv53;
}

inline int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  return lo + static_cast<int>(gen() % static_cast<std::uint64_t>(hi - lo + 1));
}

// Random valid first-order Gaussian spec with moderate correlations.
inline SourceSpec random_first_order(std::mt19937_64& gen, int frames) {
  std::vector<double> var(static_cast<size_t>(frames));
  std::vector<double> rho(static_cast<size_t>(frames - 1));
  for (double& v : var) v = uniform(gen, 0.5, 2.0);
  for (double& r : rho) r = uniform(gen, -0.95, 0.95);
  return make_gauss_markov_1(var, rho);
}

// Distortion tuple drawn inside both closed-form validity regions.
inline DistortionTuple in_region_tuple(std::mt19937_64& gen, const SourceSpec& spec,
                                       const CovMatrix& sigma) {
  const double lam = jc_hypercube_bound(sigma);
  const auto t = static_cast<size_t>(spec.frames);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double scale = uniform(gen, 0.1, 0.8);
    DistortionTuple d(t);
    for (double& dj : d) dj = scale * lam * uniform(gen, 0.5, 1.0);
    if (in_region_cc(spec, d) && in_region_jc(sigma, d)) return d;
  }
  return DistortionTuple(t, 0.5 * lam);
}

}  // namespace seqrd::testutil
