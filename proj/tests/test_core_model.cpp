#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "seqrd/source_model.hpp"
#include "test_util.hpp"

namespace seqrd {
namespace {

using testutil::uniform;
using testutil::uniform_int;

TEST(SourceSpecTest, ValidationCatchesBadShapes) {
  EXPECT_THROW(validate_spec(make_gauss_markov_1({1.0}, {})), invalid_spec_error);
  EXPECT_THROW(validate_spec(make_gauss_markov_1({1.0, 1.0}, {0.5, 0.5})),
               invalid_spec_error);
  EXPECT_THROW(validate_spec(make_gauss_markov_1({1.0, -1.0}, {0.5})), invalid_spec_error);
  EXPECT_THROW(validate_spec(make_gauss_markov_1({1.0, 1.0}, {1.5})), invalid_spec_error);
  EXPECT_THROW(validate_spec(make_binary_markov_spec({0.7, 0.1})), invalid_spec_error);
  EXPECT_THROW(validate_spec(make_gauss_markov_k(3, {}, 1.0)), invalid_spec_error);
  EXPECT_THROW(validate_spec(make_gauss_markov_k(3, {0.5}, 0.0)), invalid_spec_error);
  EXPECT_NO_THROW(validate_spec(make_gauss_markov_1({1.0, 2.0}, {-0.3})));
}

TEST(BuildCovarianceTest, IndependentFramesGiveIdentity) {
  const auto spec = make_gauss_markov_1({1.0, 1.0, 1.0}, {0.0, 0.0});
  const CovMatrix s = build_covariance(spec);
  EXPECT_TRUE(s.isApprox(CovMatrix::Identity(3, 3), 1e-14));
}

TEST(BuildCovarianceTest, CorrelationProductsFillOffDiagonals) {
  const auto spec = make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9});
  const CovMatrix s = build_covariance(spec);
  EXPECT_NEAR(s(0, 1), 0.9, 1e-15);
  EXPECT_NEAR(s(0, 2), 0.81, 1e-15);
  EXPECT_NEAR(s(1, 2), 0.9, 1e-15);
  EXPECT_NEAR((s - s.transpose()).cwiseAbs().maxCoeff(), 0.0, 0.0);
}

TEST(BuildCovarianceTest, NonUnitVariancesScaleBySigmaProducts) {
  const auto spec = make_gauss_markov_1({4.0, 1.0, 0.25}, {0.5, -0.8});
  const CovMatrix s = build_covariance(spec);
  EXPECT_NEAR(s(0, 0), 4.0, 1e-14);
  EXPECT_NEAR(s(0, 1), 2.0 * 1.0 * 0.5, 1e-14);
  EXPECT_NEAR(s(1, 2), 1.0 * 0.5 * -0.8, 1e-14);
  EXPECT_NEAR(s(0, 2), 2.0 * 0.5 * (0.5 * -0.8), 1e-14);
}

// Stationary autocovariances for coefficients (0.5, 0.3), unit innovations:
// gamma_0 = 35/15.6, gamma_1 = (5/7) gamma_0, gamma_2 = (23/35) gamma_0.
TEST(BuildCovarianceTest, SecondOrderMatchesStationaryEquations) {
  const auto spec = make_gauss_markov_k(4, {0.5, 0.3}, 1.0);
  const CovMatrix s = build_covariance(spec);
  const double g0 = 2.2435897435897436;
  const double g1 = 1.6025641025641026;
  const double g2 = 1.4743589743589745;
  const double g3 = 1.2179487179487180;
  EXPECT_NEAR(s(0, 0), g0, 1e-12);
  EXPECT_NEAR(s(0, 1), g1, 1e-12);
  EXPECT_NEAR(s(0, 2), g2, 1e-12);
  EXPECT_NEAR(s(0, 3), g3, 1e-12);
  EXPECT_NEAR(s(1, 2), g1, 1e-12);  // Toeplitz
  EXPECT_NEAR(s(3, 3), g0, 1e-12);
}

TEST(BuildCovarianceTest, RejectsUnstableRegression) {
  EXPECT_THROW(build_covariance(make_gauss_markov_k(3, {1.2}, 1.0)), invalid_spec_error);
  EXPECT_THROW(build_covariance(make_gauss_markov_k(3, {0.9, 0.2}, 1.0)),
               invalid_spec_error);
}

TEST(BuildCovarianceTest, RejectsBinarySources) {
  EXPECT_THROW(build_covariance(make_binary_markov_spec({0.1, 0.1})), invalid_spec_error);
}

TEST(BuildCovarianceTest, RandomSpecsAlwaysProducePsd) {
  auto gen = seeded_rng_stream(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = uniform_int(gen, 2, 6);
    const auto spec = testutil::random_first_order(gen, t);
    const CovMatrix s = build_covariance(spec);
    EXPECT_TRUE(is_psd(s));
    EXPECT_TRUE(is_symmetric(s));
  }
  for (int trial = 0; trial < 20; ++trial) {
    const double a1 = uniform(gen, -0.6, 0.6);
    const double a2 = uniform(gen, -0.3, 0.3);
    const auto spec = make_gauss_markov_k(uniform_int(gen, 2, 6), {a1, a2},
                                          uniform(gen, 0.5, 2.0));
    try {
      const CovMatrix s = build_covariance(spec);
      EXPECT_TRUE(is_psd(s));
    } catch (const invalid_spec_error&) {
      // non-stationary draw; rejection is the correct behavior
    }
  }
}

TEST(SigmaWTest, MatchesPredictionErrorRecursion) {
  const auto spec = make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9});
  const auto w = sigma_w(spec, {0.1, 0.1, 0.1});
  EXPECT_NEAR(w[0], 1.0, 1e-15);
  EXPECT_NEAR(w[1], 0.81 * 0.1 + 0.19, 1e-15);  // 0.271
  EXPECT_NEAR(w[2], 0.271, 1e-15);
}

TEST(SigmaWTest, ZeroCorrelationMakesPredictionUseless) {
  const auto spec = make_gauss_markov_1({1.0, 2.0, 3.0}, {0.0, 0.0});
  const auto w = sigma_w(spec, {0.3, 0.3, 0.3});
  EXPECT_NEAR(w[1], 2.0, 1e-15);
  EXPECT_NEAR(w[2], 3.0, 1e-15);
}

TEST(SigmaWTest, PerfectCorrelationPropagatesPreviousError) {
  const auto spec = make_gauss_markov_1({1.0, 1.0}, {1.0});
  const auto w = sigma_w(spec, {0.07, 0.01});
  EXPECT_NEAR(w[1], 0.07, 1e-15);
}

TEST(SigmaWTest, RejectsWrongKindsAndShapes) {
  EXPECT_THROW(sigma_w(make_gauss_markov_k(3, {0.5}, 1.0), {0.1, 0.1, 0.1}),
               invalid_spec_error);
  EXPECT_THROW(sigma_w(make_gauss_markov_1({1.0, 1.0}, {0.5}), {0.1}), invalid_spec_error);
}

TEST(RegionTest, CausalRegionExamples) {
  const auto spec = make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9});
  EXPECT_TRUE(in_region_cc(spec, {0.05, 0.05, 0.05}));
  EXPECT_FALSE(in_region_cc(spec, {2.0, 0.05, 0.05}));
  const auto indep = make_gauss_markov_1({1.0, 2.0, 3.0}, {0.0, 0.0});
  EXPECT_TRUE(in_region_cc(indep, {1.0, 2.0, 3.0}));  // boundary counts as inside
  EXPECT_FALSE(in_region_cc(spec, {-0.01, 0.05, 0.05}));
}

TEST(RegionTest, JointRegionExamples) {
  const CovMatrix s = build_covariance(make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9}));
  EXPECT_TRUE(in_region_jc(s, {0.05, 0.05, 0.05}));
  EXPECT_FALSE(in_region_jc(s, {0.1, 0.1, 0.1}));
  EXPECT_TRUE(in_region_jc(s, {0.0, 0.0, 0.0}));
  const double lam = jc_hypercube_bound(s);
  EXPECT_TRUE(in_region_jc(s, {lam, lam, lam}));  // boundary accepted
  EXPECT_THROW(in_region_jc(s, {0.05, 0.05}), invalid_spec_error);
}

TEST(RegionTest, HypercubeBoundValues) {
  EXPECT_NEAR(jc_hypercube_bound(CovMatrix::Identity(3, 3)), 1.0, 1e-12);
  const CovMatrix s = build_covariance(make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9}));
  EXPECT_NEAR(jc_hypercube_bound(s), 0.06932601283097503, 1e-9);
  CovMatrix singular(3, 3);
  singular << 1.0, 1.0, 0.9, 1.0, 1.0, 0.9, 0.9, 0.9, 1.0;
  EXPECT_NEAR(jc_hypercube_bound(singular), 0.0, 1e-12);
}

// Every D inside [0, lambda_min]^T keeps Sigma - diag(D) PSD.
TEST(RegionTest, HypercubeMembershipProperty) {
  auto gen = seeded_rng_stream(500, 1);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int t = uniform_int(gen, 2, 5);
    CovMatrix a(t, t);
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j < t; ++j) a(i, j) = uniform(gen, -1.0, 1.0);
    }
    const CovMatrix s = a * a.transpose();
    const double bound = jc_hypercube_bound(s);
    for (int k = 0; k < 20; ++k) {
      DistortionTuple d(static_cast<size_t>(t));
      for (double& dj : d) dj = uniform(gen, 0.0, bound);
      ASSERT_TRUE(in_region_jc(s, d)) << "trial " << trial;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 500 * 20);
}

TEST(RegionTest, JointRegionMonotoneUnderShrinking) {
  auto gen = seeded_rng_stream(501, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = uniform_int(gen, 2, 5);
    const auto spec = testutil::random_first_order(gen, t);
    const CovMatrix s = build_covariance(spec);
    DistortionTuple d(static_cast<size_t>(t));
    const double bound = jc_hypercube_bound(s);
    for (double& dj : d) dj = uniform(gen, 0.0, 1.5 * bound + 1e-6);
    if (!in_region_jc(s, d)) continue;
    DistortionTuple smaller = d;
    for (double& dj : smaller) dj *= uniform(gen, 0.0, 1.0);
    EXPECT_TRUE(in_region_jc(s, smaller)) << "trial " << trial;
  }
}

TEST(SystemKindTest, NamesRoundTripStructure) {
  EXPECT_EQ(to_string(kind_cc()), "CC");
  EXPECT_EQ(to_string(kind_jc()), "JC");
  EXPECT_EQ(to_string(kind_cnc(2)), "CNC2");
  EXPECT_EQ(to_string(kind_ncc(1)), "NCC1");
  EXPECT_EQ(to_string(kind_ncnc(1, 2)), "NCNC1_2");
}

TEST(SystemKindTest, DelayValidation) {
  EXPECT_NO_THROW(validate_kind(kind_cnc(2), 3));
  EXPECT_THROW(validate_kind(kind_cnc(3), 3), invalid_spec_error);
  EXPECT_THROW(validate_kind(kind_ncnc(-1, 0), 3), invalid_spec_error);
  EXPECT_THROW(markov_constraints(kind_cnc(5), 4), invalid_spec_error);
}

TEST(MarkovConstraintsTest, JointCodingHasNoConstraints) {
  EXPECT_TRUE(markov_constraints(kind_jc(), 3).empty());
  EXPECT_TRUE(markov_constraints(kind_jc(), 6).empty());
}

TEST(MarkovConstraintsTest, DelayOneThreeFrames) {
  const auto cs = markov_constraints(kind_cnc(1), 3);
  ASSERT_EQ(cs.size(), 1u);
  // Xhat_1 independent of X_3 given (X_1, X_2); ids: X_j -> j-1, Xhat_j -> 2+j
  EXPECT_EQ(cs[0].left, std::vector<int>({3}));
  EXPECT_EQ(cs[0].right, std::vector<int>({2}));
  EXPECT_EQ(cs[0].given, std::vector<int>({0, 1}));
}

TEST(MarkovConstraintsTest, CausalThreeFrames) {
  const auto cs = markov_constraints(kind_cc(), 3);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].left, std::vector<int>({3}));
  EXPECT_EQ(cs[0].right, std::vector<int>({1, 2}));
  EXPECT_EQ(cs[0].given, std::vector<int>({0}));
  EXPECT_EQ(cs[1].left, std::vector<int>({4}));
  EXPECT_EQ(cs[1].right, std::vector<int>({2}));
  EXPECT_EQ(cs[1].given, std::vector<int>({0, 1, 3}));
}

TEST(MarkovConstraintsTest, ConstraintCountAndCollapse) {
  for (int t = 2; t <= 6; ++t) {
    for (int k = 0; k < t; ++k) {
      const auto cs = markov_constraints(kind_cnc(k), t);
      EXPECT_EQ(static_cast<int>(cs.size()), std::max(0, t - k - 1));
    }
    EXPECT_TRUE(markov_constraints(kind_cnc(t - 1), t).empty());
  }
}

TEST(MarkovConstraintsTest, EncoderDelayMapsToDecoderDelay) {
  const auto a = markov_constraints(kind_ncc(1), 4);
  const auto b = markov_constraints(kind_cnc(1), 4);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].left, b[i].left);
    EXPECT_EQ(a[i].right, b[i].right);
    EXPECT_EQ(a[i].given, b[i].given);
  }
  const auto c = markov_constraints(kind_ncnc(1, 1), 4);
  const auto d = markov_constraints(kind_cnc(2), 4);
  ASSERT_EQ(c.size(), d.size());
  for (size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(c[i].left, d[i].left);
    EXPECT_EQ(c[i].right, d[i].right);
    EXPECT_EQ(c[i].given, d[i].given);
  }
}

TEST(MarkovConstraintsTest, SetsAreDisjointAndInRange) {
  for (int t = 2; t <= 5; ++t) {
    for (int k = 0; k < t; ++k) {
      for (const auto& c : markov_constraints(kind_cnc(k), t)) {
        std::vector<int> all = c.left;
        all.insert(all.end(), c.right.begin(), c.right.end());
        all.insert(all.end(), c.given.begin(), c.given.end());
        std::sort(all.begin(), all.end());
        EXPECT_TRUE(std::adjacent_find(all.begin(), all.end()) == all.end());
        EXPECT_GE(all.front(), 0);
        EXPECT_LT(all.back(), 2 * t);
      }
    }
  }
}

}  // namespace
}  // namespace seqrd
