#include <gtest/gtest.h>

#include <cmath>

#include "carnotwalk/mc.hpp"

using namespace carnot;

namespace {

// Exact two-sided normal tail P(|Z| >= t) for the scalar oracle.
double two_sided_tail(double t) { return std::erfc(t / std::sqrt(2.0)); }

}  // namespace

TEST(EventSpec, PredicatesAndValidation) {
  const auto g = CarnotGroup::heisenberg(2);
  const auto far = EventSpec::gnorm_exceed(1.0);
  EXPECT_FALSE(far.contains(g, identity_element(g)));
  EXPECT_TRUE(far.contains(g, GroupElement{(Vec(3) << 1.5, 0.0, 0.0).finished()}));

  GroupElement c{(Vec(3) << 1.0, 0.0, 0.0).finished()};
  const auto near = EventSpec::ball(c, 0.25);
  EXPECT_TRUE(near.contains(g, c));
  EXPECT_FALSE(near.contains(g, identity_element(g)));

  const auto wide = EventSpec::horizontal_exceed(0.5);
  EXPECT_TRUE(wide.contains(g, GroupElement{(Vec(3) << 0.3, 0.5, 0.0).finished()}));
  EXPECT_FALSE(wide.contains(g, GroupElement{(Vec(3) << 0.0, 0.0, 9.0).finished()}));

  // Threshold zero is the sure event; negative thresholds and degenerate
  // ball radii are rejected.
  EXPECT_TRUE(EventSpec::gnorm_exceed(0.0).contains(g, identity_element(g)));
  EXPECT_THROW(EventSpec::gnorm_exceed(-0.5), std::invalid_argument);
  EXPECT_THROW(EventSpec::horizontal_exceed(-1.0), std::invalid_argument);
  EXPECT_THROW(EventSpec::ball(c, 0.0), std::invalid_argument);
}

TEST(Estimate, SureEventHasProbabilityOne) {
  const auto g = CarnotGroup::heisenberg(2);
  const MCEstimate est = estimate(g, StepDistribution::gaussian(g),
                                  EventSpec::gnorm_exceed(0.0), 4, 64, 1);
  EXPECT_EQ(est.hits, 64u);
  EXPECT_EQ(est.p_hat, 1.0);
  EXPECT_EQ(est.scaled_log, 0.0);
}

TEST(Estimate, ReplaysTheSeededWalkTrialForTrial) {
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::gaussian(g);
  const auto event = EventSpec::gnorm_exceed(0.8);
  const int n = 20;
  const std::uint64_t trials = 200, seed = 91;
  const MCEstimate est = estimate(g, dist, event, n, trials, seed);
  std::uint64_t manual = 0;
  for (std::uint64_t t = 0; t < trials; ++t)
    if (event.contains(g, sample_walk(g, dist, n, seed, t).rescaled)) ++manual;
  EXPECT_EQ(est.hits, manual);
  EXPECT_EQ(est.p_hat, static_cast<double>(manual) / trials);
}

TEST(Estimate, HitCountIsThreadCountInvariant) {
  const auto g = CarnotGroup::engel();
  const auto dist = StepDistribution::uniform_cube(2);
  const auto event = EventSpec::gnorm_exceed(0.2);
  const MCEstimate one = estimate(g, dist, event, 32, 3000, 5, 1);
  const MCEstimate eight = estimate(g, dist, event, 32, 3000, 5, 8);
  EXPECT_EQ(one.hits, eight.hits);
}

TEST(Estimate, ZeroHitsAreCensoredNotMinusInfinity) {
  // A cube walk cannot leave a ball of radius sqrt(d1) in layer 1, so a far
  // horizontal event is impossible, not merely rare.
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::uniform_cube(2, 1.0);
  const MCEstimate est =
      estimate(g, dist, EventSpec::horizontal_exceed(10.0), 16, 5000, 3);
  EXPECT_EQ(est.hits, 0u);
  EXPECT_EQ(est.p_hat, 0.0);
  EXPECT_TRUE(std::isnan(est.scaled_log));
  EXPECT_FALSE(est.usable_for_log);
  EXPECT_EQ(est.wilson_lo, 0.0);
  EXPECT_GT(est.wilson_hi, 0.0);  // zero hits still leave an upper bound
}

TEST(Estimate, WilsonIntervalCoversTheTruth) {
  // Scalar uniform walk with n = 1: the rescaled endpoint is uniform on
  // [-1, 1], so P(|z| >= 0.8) = 0.2 exactly. Nominal 95% coverage; the gate
  // accepts anything above 90% over 200 replicas.
  const auto g = CarnotGroup::abelian(1);
  const auto dist = StepDistribution::uniform_cube(1, 1.0);
  const auto event = EventSpec::gnorm_exceed(0.8);
  int covered = 0;
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    const MCEstimate est = estimate(g, dist, event, 1, 500, 1000 + rep);
    if (est.wilson_lo <= 0.2 && 0.2 <= est.wilson_hi) ++covered;
  }
  EXPECT_GE(covered, 180);
}

TEST(SlopeStudy, RecoversTheScalarGaussianDecayRate) {
  // P(|S_n / n| >= 0.5) = erfc(0.5 sqrt(n) / sqrt 2): compare the fitted MC
  // slope of log p_n against the same fit through the exact tails.
  const auto g = CarnotGroup::abelian(1);
  const auto dist = StepDistribution::gaussian(1);
  const auto event = EventSpec::gnorm_exceed(0.5);
  const std::vector<int> schedule = {10, 20, 30};
  const SlopeReport rep = slope_study(g, dist, event, schedule, 40000u, 12);
  ASSERT_EQ(rep.points.size(), 3u);
  EXPECT_EQ(rep.usable, 3);
  ASSERT_TRUE(rep.has_slope);

  std::vector<double> xs, ys;
  for (int n : schedule) {
    xs.push_back(n);
    ys.push_back(std::log(two_sided_tail(0.5 * std::sqrt(n))));
  }
  const auto oracle = mc_detail::line_fit(xs, ys);
  EXPECT_LE(std::abs(rep.slope - oracle.slope), 3.0 * rep.slope_se);
  EXPECT_LT(rep.ci_lo, rep.ci_hi);
  EXPECT_GT(rep.slope_se, 0.0);

  for (const MCEstimate& e : rep.points) {
    const double p = two_sided_tail(0.5 * std::sqrt(e.n));
    const double sd = std::sqrt(p * (1.0 - p) / static_cast<double>(e.trials));
    EXPECT_LE(std::abs(e.p_hat - p), 5.0 * sd) << "n=" << e.n;
  }
}

TEST(SlopeStudy, TooFewUsablePointsMeansNoSlopeClaim) {
  const auto g = CarnotGroup::abelian(1);
  const auto dist = StepDistribution::gaussian(1);
  const SlopeReport rep = slope_study(g, dist, EventSpec::gnorm_exceed(2.5),
                                      {4, 8, 12}, 60u, 1);
  EXPECT_EQ(rep.points.size(), 3u);
  EXPECT_LT(rep.usable, 3);
  EXPECT_FALSE(rep.has_slope);
  EXPECT_TRUE(std::isnan(rep.slope));
}

TEST(SlopeStudy, ValidatesSchedules) {
  const auto g = CarnotGroup::abelian(1);
  const auto dist = StepDistribution::gaussian(1);
  const auto event = EventSpec::gnorm_exceed(0.5);
  EXPECT_THROW(slope_study(g, dist, event, {}, 100u, 1), std::invalid_argument);
  EXPECT_THROW(slope_study(g, dist, event, {10, 10}, 100u, 1), std::invalid_argument);
  EXPECT_THROW(slope_study(g, dist, event, {10, 20},
                           std::vector<std::uint64_t>{1, 2, 3}, 1),
               std::invalid_argument);
}

TEST(BoundaryScan, HorizontalAxisPointAttainsTheInfimum) {
  // On the Heisenberg boundary {|x|_G = a} with standard Gaussian steps the
  // cheapest point is pure horizontal, where J = a^2 / 2.
  const auto g = CarnotGroup::heisenberg(2);
  const auto model = CumulantModel::gaussian(2);
  RateOptions opt;
  opt.restarts = 4;
  opt.seed = 3;
  const BoundaryScan scan = boundary_inf_rate(g, model, 1.2, 16, 12, opt);
  ASSERT_EQ(scan.rates.size(), 12u);
  EXPECT_GT(scan.feasible_points, 0);
  const double expected = 0.5 * 1.2 * 1.2;
  EXPECT_NEAR(scan.inf_rate, expected, 5e-3 * expected);
  // No boundary point may undercut the horizontal value materially.
  for (double rate : scan.rates) EXPECT_GT(rate, expected * 0.995);
  // The argmin is one of the horizontal axis points (ties broken by noise).
  EXPECT_NEAR(scan.argmin.x.head(2).norm(), 1.2, 1e-9);
  EXPECT_NEAR(scan.argmin.x[2], 0.0, 1e-9);
}

TEST(DecayStudy, CensorsExactRowsAndShrinksWithM) {
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::gaussian(g);
  const DecayStudy study =
      approximation_decay_study(g, dist, 0.05, {256}, {1, 4, 16, 64, 256, 512}, 200, 6);
  ASSERT_EQ(study.rows.size(), 5u);  // m = 512 > n dropped
  for (std::size_t i = 0; i + 1 < study.rows.size(); ++i) {
    EXPECT_LT(study.rows[i].m, study.rows[i + 1].m);
    EXPECT_GE(study.rows[i].p_exceed, study.rows[i + 1].p_exceed);
    EXPECT_GE(study.rows[i].median_gap, study.rows[i + 1].median_gap);
  }
  const DecayRow& exact = study.rows.back();
  EXPECT_EQ(exact.m, 256);
  EXPECT_EQ(exact.hits, 0u);
  EXPECT_TRUE(exact.censored);
  EXPECT_TRUE(std::isnan(exact.scaled_log));
  EXPECT_EQ(exact.median_gap, 0.0);
  EXPECT_GT(study.rows.front().p_exceed, 0.0);
  for (const DecayRow& row : study.rows)
    if (!row.censored) EXPECT_TRUE(std::isfinite(row.scaled_log));
}

TEST(DecayStudy, DeterministicAcrossThreadCounts) {
  const auto g = CarnotGroup::engel();
  const auto dist = StepDistribution::uniform_cube(2);
  const DecayStudy a = approximation_decay_study(g, dist, 0.05, {64}, {1, 8}, 100, 9, 1);
  const DecayStudy b = approximation_decay_study(g, dist, 0.05, {64}, {1, 8}, 100, 9, 8);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].hits, b.rows[i].hits);
    EXPECT_EQ(a.rows[i].median_gap, b.rows[i].median_gap);
  }
}
