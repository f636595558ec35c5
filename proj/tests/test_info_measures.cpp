#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "seqrd/info_measures.hpp"
#include "test_util.hpp"

namespace seqrd {
namespace {

using testutil::uniform;

double h2(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

// Three-frame symmetric binary chain with flip probability p, flat row-major.
JointPmf binary_chain_pmf(double p) {
  JointPmf out;
  out.sizes = {2, 2, 2};
  out.probs.resize(8);
  for (int s = 0; s < 8; ++s) {
    const int x1 = (s >> 2) & 1;
    const int x2 = (s >> 1) & 1;
    const int x3 = s & 1;
    double pr = 0.5;
    pr *= (x2 == x1) ? (1.0 - p) : p;
    pr *= (x3 == x2) ? (1.0 - p) : p;
    out.probs[static_cast<size_t>(s)] = pr;
  }
  return out;
}

// Brute-force subset entropy for all-binary pmfs; written against the flat
// layout directly so it shares no code with the library marginalization.
double brute_subset_entropy(const JointPmf& p, const std::vector<int>& vars) {
  const int m = p.arity();
  std::map<long, double> marg;
  for (size_t s = 0; s < p.probs.size(); ++s) {
    long key = 0;
    for (size_t i = 0; i < vars.size(); ++i) {
      const int bit = static_cast<int>(s >> (m - 1 - vars[i])) & 1;
      key |= static_cast<long>(bit) << i;
    }
    marg[key] += p.probs[s];
  }
  double h = 0.0;
  for (const auto& [k, q] : marg) {
    (void)k;
    if (q > 0.0) h -= q * std::log2(q);
  }
  return h;
}

double brute_cmi(const JointPmf& p, std::vector<int> a, std::vector<int> b,
                 std::vector<int> c) {
  std::vector<int> ac = a;
  ac.insert(ac.end(), c.begin(), c.end());
  std::vector<int> bc = b;
  bc.insert(bc.end(), c.begin(), c.end());
  std::vector<int> abc = a;
  abc.insert(abc.end(), b.begin(), b.end());
  abc.insert(abc.end(), c.begin(), c.end());
  return brute_subset_entropy(p, ac) + brute_subset_entropy(p, bc) -
         brute_subset_entropy(p, abc) - brute_subset_entropy(p, c);
}

TEST(EntropyTest, KnownValues) {
  JointPmf uniform8;
  uniform8.sizes = {2, 2, 2};
  uniform8.probs.assign(8, 0.125);
  EXPECT_NEAR(entropy(uniform8), 3.0, 1e-14);

  JointPmf point;
  point.sizes = {4};
  point.probs = {0.0, 1.0, 0.0, 0.0};
  EXPECT_NEAR(entropy(point), 0.0, 1e-15);

  JointPmf bern;
  bern.sizes = {2};
  bern.probs = {0.9, 0.1};
  EXPECT_NEAR(entropy(bern), 0.4689955935892812, 1e-14);

  EXPECT_NEAR(entropy(binary_chain_pmf(0.1)), 1.9379911871785624, 1e-13);
}

TEST(EntropyTest, RejectsUnnormalizedPmf) {
  JointPmf bad;
  bad.sizes = {2};
  bad.probs = {0.5, 0.4};
  EXPECT_THROW(entropy(bad), invalid_spec_error);
  bad.probs = {1.2, -0.2};
  EXPECT_THROW(entropy(bad), invalid_spec_error);
}

TEST(ConditionalMiTest, IndependentAndCopy) {
  auto gen = seeded_rng_stream(41, 0);
  JointPmf pa = random_pmf({2, 3}, gen);
  // product with an independent third variable
  JointPmf prod;
  prod.sizes = {2, 3, 2};
  prod.probs.resize(12);
  for (int i = 0; i < 6; ++i) {
    prod.probs[static_cast<size_t>(2 * i)] = pa.probs[static_cast<size_t>(i)] * 0.3;
    prod.probs[static_cast<size_t>(2 * i + 1)] = pa.probs[static_cast<size_t>(i)] * 0.7;
  }
  EXPECT_NEAR(conditional_mi(prod, {0, 1}, {2}, {}), 0.0, 1e-12);

  JointPmf copy;
  copy.sizes = {2, 2};
  copy.probs = {0.35, 0.0, 0.0, 0.65};
  EXPECT_NEAR(conditional_mi(copy, {0}, {1}, {}), h2(0.35), 1e-13);
}

TEST(ConditionalMiTest, MarkovChainPairValue) {
  const JointPmf p = binary_chain_pmf(0.1);
  // I(X1;X2) = 1 - h(0.1)
  EXPECT_NEAR(conditional_mi(p, {0}, {1}, {}), 0.5310044064107188, 1e-13);
  // Markov: X1 and X3 independent given X2
  EXPECT_NEAR(conditional_mi(p, {0}, {2}, {1}), 0.0, 1e-12);
  // but dependent unconditionally
  EXPECT_GT(conditional_mi(p, {0}, {2}, {}), 0.05);
}

TEST(ConditionalMiTest, OverlappingSetsRejected) {
  const JointPmf p = binary_chain_pmf(0.1);
  EXPECT_THROW(conditional_mi(p, {0}, {0}, {}), invalid_spec_error);
  EXPECT_THROW(conditional_mi(p, {0}, {1}, {1}), invalid_spec_error);
  EXPECT_THROW(conditional_mi(p, {0}, {7}, {}), invalid_spec_error);
}

TEST(DirectedInfoTest, IndependentStreamsCarryNothing) {
  auto gen = seeded_rng_stream(42, 0);
  const JointPmf pa = random_pmf({2, 2}, gen);
  const JointPmf pb = random_pmf({2, 2}, gen);
  JointPmf prod;
  prod.sizes = {2, 2, 2, 2};
  prod.probs.resize(16);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      prod.probs[static_cast<size_t>(4 * i + j)] =
          pa.probs[static_cast<size_t>(i)] * pb.probs[static_cast<size_t>(j)];
    }
  }
  EXPECT_NEAR(directed_information(prod, {0, 1}, {2, 3}), 0.0, 1e-12);
}

TEST(DirectedInfoTest, PerfectFeedforwardGivesSourceEntropy) {
  // B_n = A_n: vars (A1, A2, B1, B2) supported on A = B
  auto gen = seeded_rng_stream(43, 0);
  const JointPmf pa = random_pmf({2, 2}, gen);
  JointPmf p;
  p.sizes = {2, 2, 2, 2};
  p.probs.assign(16, 0.0);
  for (int i = 0; i < 4; ++i) {
    p.probs[static_cast<size_t>(4 * i + i)] = pa.probs[static_cast<size_t>(i)];
  }
  EXPECT_NEAR(directed_information(p, {0, 1}, {2, 3}), entropy(pa), 1e-12);
}

TEST(DirectedInfoTest, MatchesBruteForceTwoSteps) {
  auto gen = seeded_rng_stream(44, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const JointPmf p = random_pmf({2, 2, 2, 2}, gen);
    const double expect = brute_cmi(p, {0}, {2}, {}) + brute_cmi(p, {0, 1}, {3}, {2});
    EXPECT_NEAR(directed_information(p, {0, 1}, {2, 3}), expect, 1e-12);
  }
}

TEST(KDirectedTest, FullShiftRecoversMutualInformation) {
  auto gen = seeded_rng_stream(45, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const JointPmf p = random_pmf({2, 2, 2, 2, 2, 2}, gen);
    const double mi = conditional_mi(p, {0, 1, 2}, {3, 4, 5}, {});
    EXPECT_NEAR(k_directed_information(p, {0, 1, 2}, {3, 4, 5}, 3), mi, 1e-12);
  }
}

TEST(KDirectedTest, MatchesBruteForceShiftOne) {
  auto gen = seeded_rng_stream(46, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const JointPmf p = random_pmf({2, 2, 2, 2, 2, 2}, gen);
    const std::vector<int> a = {0, 1, 2};
    const std::vector<int> b = {3, 4, 5};
    const double mi = brute_cmi(p, a, b, {});
    const double reverse =
        brute_cmi(p, {3}, {1}, {0}) + brute_cmi(p, {3, 4}, {2}, {0, 1});
    const double expect = std::max(mi - reverse, 0.0);
    EXPECT_NEAR(k_directed_information(p, a, b, 1), expect, 1e-12);
  }
}

TEST(KDirectedTest, ShiftRangeValidated) {
  auto gen = seeded_rng_stream(47, 0);
  const JointPmf p = random_pmf({2, 2, 2, 2}, gen);
  EXPECT_THROW(k_directed_information(p, {0, 1}, {2, 3}, -1), invalid_spec_error);
  EXPECT_THROW(k_directed_information(p, {0, 1}, {2, 3}, 3), invalid_spec_error);
  EXPECT_NO_THROW(k_directed_information(p, {0, 1}, {2, 3}, 0));
}

TEST(IdentityResidualTest, ZeroOnRandomDistributions) {
  auto gen = seeded_rng_stream(48, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const JointPmf p = random_pmf({2, 2, 2, 2, 2, 2}, gen);
    for (int k = 0; k <= 2; ++k) {
      EXPECT_LE(kdirect_identity_residual(p, k), 1e-10) << "trial " << trial << " k " << k;
    }
  }
  for (int trial = 0; trial < 10; ++trial) {
    const JointPmf p = random_pmf({2, 2, 2, 2}, gen);
    for (int k = 0; k <= 1; ++k) {
      EXPECT_LE(kdirect_identity_residual(p, k), 1e-10);
    }
  }
}

TEST(IdentityResidualTest, ProductDistributionAndRange) {
  JointPmf prod;
  prod.sizes = {2, 2, 2, 2};
  prod.probs.assign(16, 1.0 / 16.0);
  EXPECT_LE(kdirect_identity_residual(prod, 0), 1e-12);
  EXPECT_LE(kdirect_identity_residual(prod, 1), 1e-12);
  EXPECT_THROW(kdirect_identity_residual(prod, 2), invalid_spec_error);
  JointPmf odd;
  odd.sizes = {2, 2, 2};
  odd.probs.assign(8, 0.125);
  EXPECT_THROW(kdirect_identity_residual(odd, 0), invalid_spec_error);
}

// Reconstruction depending only on past source frames makes the correction
// term vanish, so total and shifted directed information coincide.
TEST(IdentityResidualTest, ChainMakesCorrectionVanish) {
  const double p = 0.2;
  JointPmf chain;
  chain.sizes = {2, 2, 2, 2, 2, 2};
  chain.probs.assign(64, 0.0);
  for (int s = 0; s < 8; ++s) {
    const int x1 = (s >> 2) & 1;
    const int x2 = (s >> 1) & 1;
    const int x3 = s & 1;
    double pr = 0.5;
    pr *= (x2 == x1) ? (1.0 - p) : p;
    pr *= (x3 == x2) ? (1.0 - p) : p;
    for (int y1 = 0; y1 < 2; ++y1) {
      const double py = (y1 == x1) ? 0.9 : 0.1;
      const int idx = (s << 3) | (y1 << 2) | (x2 << 1) | x3;  // yhat2=x2, yhat3=x3
      chain.probs[static_cast<size_t>(idx)] += pr * py;
    }
  }
  // correction term for T=3, k=1 is I(Xhat1; X3 | X1, X2)
  EXPECT_NEAR(conditional_mi(chain, {3}, {2}, {0, 1}), 0.0, 1e-12);
  const double mi = conditional_mi(chain, {0, 1, 2}, {3, 4, 5}, {});
  EXPECT_NEAR(k_directed_information(chain, {0, 1, 2}, {3, 4, 5}, 2), mi, 1e-12);

  // anticipating reconstruction: Xhat1 = X3 forces a strictly positive term
  JointPmf antic;
  antic.sizes = {2, 2, 2, 2, 2, 2};
  antic.probs.assign(64, 0.0);
  for (int s = 0; s < 8; ++s) {
    const int x2 = (s >> 1) & 1;
    const int x3 = s & 1;
    const int idx = (s << 3) | (x3 << 2) | (x2 << 1) | x3;
    antic.probs[static_cast<size_t>(idx)] = binary_chain_pmf(p).probs[static_cast<size_t>(s)];
  }
  EXPECT_GT(conditional_mi(antic, {3}, {2}, {0, 1}), 0.1);
  const double mi2 = conditional_mi(antic, {0, 1, 2}, {3, 4, 5}, {});
  const double fwd2 = k_directed_information(antic, {0, 1, 2}, {3, 4, 5}, 2);
  EXPECT_GT(mi2 - fwd2, 0.1);
  EXPECT_LE(kdirect_identity_residual(antic, 1), 1e-10);
}

TEST(GaussianMiTest, BlockDiagonalIsZero) {
  CovMatrix s = CovMatrix::Identity(4, 4);
  s(0, 1) = s(1, 0) = 0.7;
  s(2, 3) = s(3, 2) = -0.4;
  EXPECT_NEAR(gaussian_mi(s, {0, 1}, {2, 3}), 0.0, 1e-12);
}

TEST(GaussianMiTest, BivariateClosedForm) {
  CovMatrix s(2, 2);
  s << 1.0, 0.6, 0.6, 1.0;
  EXPECT_NEAR(gaussian_mi(s, {0}, {1}), -0.5 * std::log2(1.0 - 0.36), 1e-13);
}

TEST(GaussianMiTest, JointCodingTestChannelRate) {
  const auto spec = make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9});
  const CovMatrix sigma = build_covariance(spec);
  const CovMatrix shat = sigma - 0.05 * CovMatrix::Identity(3, 3);
  CovMatrix joint(6, 6);
  joint.topLeftCorner(3, 3) = sigma;
  joint.topRightCorner(3, 3) = shat;
  joint.bottomLeftCorner(3, 3) = shat;
  joint.bottomRightCorner(3, 3) = shat;
  EXPECT_NEAR(gaussian_mi(joint, {0, 1, 2}, {3, 4, 5}), 4.086963465999904, 1e-9);
}

TEST(GaussianMiTest, SingularSideHandling) {
  // var 2 duplicates var 1: the B block is rank one
  CovMatrix s(3, 3);
  s << 1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 0.5, 1.0, 1.0;
  EXPECT_NEAR(gaussian_mi(s, {0}, {1, 2}), -0.5 * std::log2(1.0 - 0.25), 1e-10);
  EXPECT_THROW(gaussian_mi(s, {1, 2}, {0}), invalid_spec_error);
  EXPECT_THROW(gaussian_mi(s, {0}, {5}), invalid_spec_error);
}

TEST(GaussianMiTest, AgreesWithDiscretization) {
  const double rho = 0.5;
  CovMatrix s(2, 2);
  s << 1.0, rho, rho, 1.0;
  const int n = 64;
  const double lo = -5.0, hi = 5.0;
  const double step = (hi - lo) / n;
  JointPmf grid;
  grid.sizes = {n, n};
  grid.probs.resize(static_cast<size_t>(n) * n);
  double total = 0.0;
  const double det = 1.0 - rho * rho;
  for (int i = 0; i < n; ++i) {
    const double x = lo + (i + 0.5) * step;
    for (int j = 0; j < n; ++j) {
      const double y = lo + (j + 0.5) * step;
      const double q = (x * x - 2.0 * rho * x * y + y * y) / det;
      const double val = std::exp(-0.5 * q);
      grid.probs[static_cast<size_t>(i * n + j)] = val;
      total += val;
    }
  }
  for (double& v : grid.probs) v /= total;
  EXPECT_NEAR(conditional_mi(grid, {0}, {1}, {}), gaussian_mi(s, {0}, {1}), 0.02);
}

TEST(PmfIoTest, RoundTripIsExact) {
  auto gen = seeded_rng_stream(49, 0);
  const JointPmf p = random_pmf({2, 3, 4}, gen);
  std::stringstream ss;
  write_pmf(ss, p);
  const JointPmf q = read_pmf(ss);
  ASSERT_EQ(q.sizes, p.sizes);
  ASSERT_EQ(q.probs.size(), p.probs.size());
  for (size_t i = 0; i < p.probs.size(); ++i) {
    EXPECT_EQ(q.probs[i], p.probs[i]) << "slot " << i;
  }
  std::stringstream bad("2 2\n0 0 0.5\n");
  EXPECT_THROW(read_pmf(bad), invalid_spec_error);
}

}  // namespace
}  // namespace seqrd
