#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "carnotwalk/diagnostics.hpp"

using namespace carnot;

TEST(SubExp, CombineIsExactAndOrderInsensitive) {
  const std::vector<SubExpParams> parts = {{1.0, 1.0}, {1.0, 1.0}};
  const SubExpParams indep = combine_subexp(parts, true);
  EXPECT_EQ(indep.nu2, 2.0);
  EXPECT_EQ(indep.alpha, 1.0);
  const SubExpParams dep = combine_subexp(parts, false);
  EXPECT_EQ(dep.nu2, 4.0);  // (1 + 1)^2
  EXPECT_EQ(dep.alpha, 1.0);

  // Dyadic inputs keep every intermediate sum exact, so permutations agree
  // bit for bit.
  std::vector<SubExpParams> mixed = {{4.0, 0.5}, {0.25, 2.0}, {1.0, 0.125}};
  const SubExpParams a_ind = combine_subexp(mixed, true);
  const SubExpParams a_dep = combine_subexp(mixed, false);
  std::reverse(mixed.begin(), mixed.end());
  const SubExpParams b_ind = combine_subexp(mixed, true);
  const SubExpParams b_dep = combine_subexp(mixed, false);
  EXPECT_EQ(a_ind.nu2, b_ind.nu2);
  EXPECT_EQ(a_ind.nu2, 5.25);
  EXPECT_EQ(a_dep.nu2, b_dep.nu2);
  EXPECT_EQ(a_dep.nu2, (2.0 + 0.5 + 1.0) * (2.0 + 0.5 + 1.0));
  EXPECT_EQ(a_ind.alpha, 2.0);
  EXPECT_EQ(a_dep.alpha, 2.0);

  const SubExpParams empty = combine_subexp({}, true);
  EXPECT_EQ(empty.nu2, 0.0);
  EXPECT_EQ(empty.alpha, 0.0);
}

TEST(SubExp, CombineIsAssociative) {
  const SubExpParams p{2.0, 1.0}, q{0.5, 3.0}, r{4.0, 0.25};
  for (bool indep : {true, false}) {
    const SubExpParams left = combine_subexp({combine_subexp({p, q}, indep), r}, indep);
    const SubExpParams right = combine_subexp({p, combine_subexp({q, r}, indep)}, indep);
    const SubExpParams flat = combine_subexp({p, q, r}, indep);
    EXPECT_EQ(left.nu2, flat.nu2) << indep;
    EXPECT_EQ(right.nu2, flat.nu2) << indep;
    EXPECT_EQ(left.alpha, flat.alpha);
    EXPECT_EQ(right.alpha, flat.alpha);
  }
}

TEST(WindowMatrix, StructureAndSkewness) {
  const Mat A = window_matrix(1, 3, 5);
  ASSERT_EQ(A.rows(), 5);
  EXPECT_EQ((A + A.transpose()).cwiseAbs().maxCoeff(), 0.0);
  // Only the pair (i, j) = (2, 3) lies in the window 1 < i < j <= 3.
  EXPECT_EQ(A(1, 2), 1.0);
  EXPECT_EQ(A(2, 1), -1.0);
  EXPECT_EQ(A.cwiseAbs().sum(), 2.0);
  EXPECT_THROW(window_matrix(3, 3, 5), std::invalid_argument);
  EXPECT_THROW(window_matrix(-1, 3, 5), std::invalid_argument);
  EXPECT_THROW(window_matrix(1, 6, 5), std::invalid_argument);
}

TEST(WindowMatrix, DirectCountNormDisagreesWithTheVariantFormula) {
  // The direct entry count gives sqrt((l-k)(l-k-1)); the off-by-one variant
  // sqrt((l-k+1)(l-k)) never matches it. Regression-lock both at k=1, l=3:
  // sqrt(2) versus sqrt(6).
  const WindowNorms n13 = window_matrix_norms(1, 3);
  EXPECT_EQ(n13.nonzero_upper, 1u);
  EXPECT_DOUBLE_EQ(n13.hs, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(n13.hs_variant, std::sqrt(6.0));
  EXPECT_EQ(n13.op_bound, 2.0);

  for (int k : {0, 1, 2, 5}) {
    for (int w : {1, 2, 3, 7, 20}) {
      const int l = k + w;
      const WindowNorms norms = window_matrix_norms(k, l);
      const Mat A = window_matrix(k, l, l + 2);
      EXPECT_DOUBLE_EQ(norms.hs, A.norm());  // Frobenius norm, exact count
      EXPECT_GT(norms.hs_variant, norms.hs);
      EXPECT_GE(norms.op_bound + 1e-12, operator_norm_estimate(A));
    }
  }
}

TEST(WindowMatrix, OperatorNormEstimateIsCalibrated) {
  Mat J(2, 2);
  J << 0.0, 1.0, -1.0, 0.0;
  EXPECT_NEAR(operator_norm_estimate(J), 1.0, 1e-9);
  Mat D = Mat::Zero(3, 3);
  D(0, 0) = 2.0;
  D(1, 1) = -5.0;
  EXPECT_NEAR(operator_norm_estimate(D), 5.0, 1e-9);
  EXPECT_EQ(operator_norm_estimate(Mat::Zero(4, 4)), 0.0);
}

namespace {

std::vector<Vec> planar_values(int n, std::uint64_t seed) {
  RngStream rng(seed, stream_id(7, 60, 0));
  std::vector<Vec> v(static_cast<std::size_t>(n), Vec(2));
  for (auto& x : v) {
    x[0] = rng.uniform(-1.0, 1.0);
    x[1] = rng.uniform(-1.0, 1.0);
  }
  return v;
}

}  // namespace

TEST(WindowForm, MatchesBruteForceUnderEachConvention) {
  const auto v = planar_values(9, 5);
  const int k = 3, l = 8;
  double prefix = 0.0, upper = 0.0, strict = 0.0;
  Vec pk = Vec::Zero(2), pl = Vec::Zero(2);
  for (int i = 1; i <= k; ++i) pk += v[i - 1];
  for (int j = 1; j <= l; ++j) pl += v[j - 1];
  prefix = pk[0] * pl[1] - pk[1] * pl[0];
  for (int i = 1; i <= l; ++i)
    for (int j = i + 1; j <= l; ++j) {
      const double w = v[i - 1][0] * v[j - 1][1] - v[i - 1][1] * v[j - 1][0];
      if (i <= k) upper += w;
      if (i >= k + 1) strict += w;
    }
  EXPECT_NEAR(window_form(v, k, l, WindowConvention::PrefixPair), prefix, 1e-12);
  EXPECT_NEAR(window_form(v, k, l, WindowConvention::UpperTriangle), upper, 1e-12);
  EXPECT_NEAR(window_form(v, k, l, WindowConvention::StrictWindow), strict, 1e-12);
}

TEST(WindowForm, ConventionsGenuinelyDiffer) {
  const auto v = planar_values(9, 8);
  const double a = window_form(v, 3, 8, WindowConvention::PrefixPair);
  const double b = window_form(v, 3, 8, WindowConvention::UpperTriangle);
  const double c = window_form(v, 3, 8, WindowConvention::StrictWindow);
  EXPECT_GT(std::abs(a - b), 1e-8);
  EXPECT_GT(std::abs(a - c), 1e-8);
  EXPECT_GT(std::abs(b - c), 1e-8);
}

TEST(WindowForm, StrictWindowIgnoresThePrefixAndMatchesTheMatrix) {
  auto v = planar_values(10, 13);
  const double before = window_form(v, 4, 9, WindowConvention::StrictWindow);
  for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(i)] = Vec::Constant(2, 99.0);
  EXPECT_EQ(window_form(v, 4, 9, WindowConvention::StrictWindow), before);
  EXPECT_NEAR(window_form_via_matrix(v, 4, 9), before, 1e-12);
}

TEST(WindowForm, AntisymmetryAndValidation) {
  Vec u(2), w(2);
  u << 2.0, 3.0;
  w << -1.0, 0.5;
  EXPECT_EQ(symplectic2(u, w), -symplectic2(w, u));
  EXPECT_EQ(symplectic2(u, u), 0.0);
  const auto v = planar_values(5, 2);
  EXPECT_THROW(window_form(v, 3, 3, WindowConvention::PrefixPair), std::invalid_argument);
  EXPECT_THROW(window_form(v, 0, 6, WindowConvention::PrefixPair), std::invalid_argument);
  std::vector<Vec> bad = {Vec::Zero(3)};
  EXPECT_THROW(window_form(bad, 0, 1, WindowConvention::PrefixPair), std::invalid_argument);
}

TEST(MgfCheck, ZeroLambdaIsExactAndPruningguardsOverflow) {
  const MgfCheck chk = mgf_bound_check(2, 6, {-0.05, 0.0, 0.05, 50.0}, 2000, 21);
  ASSERT_EQ(chk.points.size(), 4u);
  EXPECT_EQ(chk.points[1].log_mgf, 0.0);  // mean of exp(0) is exactly 1
  EXPECT_TRUE(chk.points[3].pruned);
  EXPECT_EQ(chk.pruned_points, 1);
  EXPECT_TRUE(std::isnan(chk.points[3].mgf));
  EXPECT_GT(chk.curvature, 0.0);
  EXPECT_TRUE(std::isfinite(chk.curvature));
}

TEST(MgfCheck, CurvatureScalesLikeTheSquaredWindowLength) {
  // Var of the strict window form with standard planar Gaussian steps is
  // 2 * C(w, 2), so the small-lambda curvature log E exp(lambda W) / lambda^2
  // is about half that and grows quadratically in the window length.
  const std::vector<double> grid = {-0.05, -0.025, 0.025, 0.05};
  const MgfCheck small = mgf_bound_check(2, 6, grid, 20000, 33);
  const MgfCheck large = mgf_bound_check(2, 10, grid, 20000, 33);
  ASSERT_EQ(small.pruned_points, 0);
  ASSERT_EQ(large.pruned_points, 0);
  const double ratio = large.curvature / small.curvature;
  EXPECT_GT(ratio, 2.5);
  EXPECT_LT(ratio, 9.0);
}

TEST(MgfCheck, DeterministicUnderReplay) {
  const std::vector<double> grid = {-0.1, 0.1};
  const MgfCheck a = mgf_bound_check(1, 4, grid, 500, 77);
  const MgfCheck b = mgf_bound_check(1, 4, grid, 500, 77);
  for (std::size_t i = 0; i < a.points.size(); ++i)
    EXPECT_EQ(a.points[i].mgf, b.points[i].mgf);
  EXPECT_THROW(mgf_bound_check(3, 3, grid, 10, 1), std::invalid_argument);
  EXPECT_THROW(mgf_bound_check(0, 2, grid, 0, 1), std::invalid_argument);
}
