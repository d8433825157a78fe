#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "carnotwalk/bcdh.hpp"
#include "carnotwalk/group.hpp"
#include "carnotwalk/walk.hpp"

using namespace carnot;

namespace {

double coord_gap(const GroupElement& a, const GroupElement& b) {
  return (a.x - b.x).cwiseAbs().maxCoeff();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

TEST(StepDistribution, SamplesAreMeanZero) {
  // 5 sigma / sqrt(N) gate per coordinate, with the exact per-coordinate
  // standard deviation of each law.
  const int N = 1000000;
  struct Case {
    StepDistribution dist;
    double sigma;
  };
  const double r = 1.5;
  std::vector<Case> cases;
  cases.push_back({StepDistribution::gaussian(2), 1.0});
  cases.push_back({StepDistribution::uniform_cube(2, r), r / std::sqrt(3.0)});
  cases.push_back({StepDistribution::rademacher(2, r), r});
  cases.push_back({StepDistribution::sphere(3, r), r / std::sqrt(3.0)});
  cases.push_back({StepDistribution::uniform_ball(3, r), r / std::sqrt(5.0)});
  std::uint64_t series = 0;
  for (const auto& c : cases) {
    RngStream rng(99, stream_id(7, series++, 0));
    Vec mean = Vec::Zero(c.dist.dim());
    Vec x(c.dist.dim());
    for (int i = 0; i < N; ++i) {
      c.dist.sample_into(rng, x);
      mean += x;
    }
    mean /= static_cast<double>(N);
    const double gate = 5.0 * c.sigma / std::sqrt(static_cast<double>(N));
    EXPECT_LE(mean.cwiseAbs().maxCoeff(), gate) << c.dist.name();
  }
}

TEST(StepDistribution, BoundedKindsNeverLeaveTheirSupport) {
  const int N = 1000000;
  const double r = 0.75;
  std::vector<StepDistribution> dists = {
      StepDistribution::uniform_cube(3, r), StepDistribution::uniform_ball(3, r),
      StepDistribution::sphere(3, r), StepDistribution::rademacher(3, r)};
  std::uint64_t series = 0;
  for (const auto& d : dists) {
    ASSERT_TRUE(d.bounded());
    const double cap = d.support_radius();
    RngStream rng(7, stream_id(7, 16 + series++, 0));
    Vec x(d.dim());
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      d.sample_into(rng, x);
      worst = std::max(worst, x.norm());
    }
    EXPECT_LE(worst, cap * (1.0 + 1e-12)) << d.name();
  }
  EXPECT_EQ(StepDistribution::gaussian(2).support_radius(), kInf);
  EXPECT_FALSE(StepDistribution::gaussian(2).bounded());
}

TEST(StepDistribution, SphereAndRademacherSitOnTheirShells) {
  const double r = 2.0;
  RngStream rng(11, stream_id(7, 40, 0));
  const auto sph = StepDistribution::sphere(4, r);
  Vec x(4);
  for (int i = 0; i < 1000; ++i) {
    sph.sample_into(rng, x);
    EXPECT_NEAR(x.norm(), r, 1e-12);
  }
  const auto rad = StepDistribution::rademacher(2, r);
  Vec y(2);
  for (int i = 0; i < 1000; ++i) {
    rad.sample_into(rng, y);
    EXPECT_EQ(std::abs(y[0]), r);
    EXPECT_EQ(std::abs(y[1]), r);
  }
}

TEST(StepDistribution, GaussianWhiteningMatchesMetric) {
  // With horizontal metric M the sampler covariance is M^{-1}, so the
  // cumulant pairing <v,u>_H = v^T M u gives Lambda(v) = |v|_H^2 / 2.
  Mat M(2, 2);
  M << 2.0, 0.5, 0.5, 1.0;
  const auto g = CarnotGroup::step2_from_matrices(
      {(Mat(2, 2) << 0.0, 0.5, -0.5, 0.0).finished()}, M);
  const auto dist = StepDistribution::gaussian(g);
  RngStream rng(3, stream_id(7, 50, 0));
  const int N = 400000;
  Mat cov = Mat::Zero(2, 2);
  Vec x(2);
  for (int i = 0; i < N; ++i) {
    dist.sample_into(rng, x);
    cov += x * x.transpose();
  }
  cov /= static_cast<double>(N);
  const Mat target = M.inverse();
  EXPECT_LE((cov - target).cwiseAbs().maxCoeff(), 0.02);
}

TEST(StepDistribution, CumulantModelMatchesKind) {
  EXPECT_EQ(StepDistribution::gaussian(3).cumulant().kind(), CumulantKind::Gaussian);
  EXPECT_EQ(StepDistribution::uniform_ball(2, 2.0).cumulant().radius(), 2.0);
  EXPECT_EQ(StepDistribution::sphere(2).cumulant().kind(), CumulantKind::Sphere);
  EXPECT_THROW(StepDistribution::uniform_cube(2, 0.0), std::invalid_argument);
  EXPECT_THROW(StepDistribution::rademacher(0), std::invalid_argument);
}

TEST(SampleWalk, DeterministicInSeedAndTrial) {
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::gaussian(g);
  const WalkRun a = sample_walk(g, dist, 64, 42, 7);
  const WalkRun b = sample_walk(g, dist, 64, 42, 7);
  EXPECT_TRUE((a.terminal.x.array() == b.terminal.x.array()).all());
  EXPECT_TRUE((a.rescaled.x.array() == b.rescaled.x.array()).all());
  const WalkRun c = sample_walk(g, dist, 64, 42, 8);
  EXPECT_GT(coord_gap(a.terminal, c.terminal), 1e-6);
  const WalkRun d = sample_walk(g, dist, 64, 43, 7);
  EXPECT_GT(coord_gap(a.terminal, d.terminal), 1e-6);
}

TEST(SampleWalk, RescaledFoldMatchesDilatedTerminal) {
  // The two evaluation orders (fold scaled increments vs dilate the
  // terminal) agree only up to roundoff; the fold is the stored value.
  const auto h = CarnotGroup::heisenberg(2);
  const auto e = CarnotGroup::engel();
  for (int n : {37, 512, 1000}) {
    const WalkRun rh = sample_walk(h, StepDistribution::gaussian(h), n, 5, 1);
    EXPECT_LE(coord_gap(rh.rescaled, dilate(h, 1.0 / n, rh.terminal)), 1e-10);
    const WalkRun re = sample_walk(e, StepDistribution::uniform_cube(2), n, 5, 2);
    EXPECT_LE(coord_gap(re.rescaled, dilate(e, 1.0 / n, re.terminal)), 1e-10);
  }
}

TEST(SampleWalk, RetainedIncrementsRefoldToTerminal) {
  const auto g = CarnotGroup::engel();
  const WalkRun run = sample_walk(g, StepDistribution::sphere(2), 100, 17, 0, true);
  ASSERT_TRUE(run.increments.has_value());
  ASSERT_EQ(run.increments->size(), 100u);
  Vec acc = Vec::Zero(g.dim());
  for (const Vec& x : *run.increments) fold_step(g, acc, x);
  EXPECT_TRUE((acc.array() == run.terminal.x.array()).all());
  const WalkRun lean = sample_walk(g, StepDistribution::sphere(2), 100, 17, 0);
  EXPECT_FALSE(lean.increments.has_value());
  EXPECT_TRUE((lean.terminal.x.array() == run.terminal.x.array()).all());
}

TEST(SampleWalk, HorizontalPartIsTheIncrementMean) {
  const auto g = CarnotGroup::heisenberg(4);
  const WalkRun run = sample_walk(g, StepDistribution::gaussian(g), 200, 23, 4, true);
  Vec sum = Vec::Zero(4);
  for (const Vec& x : *run.increments) sum += x;
  // Terminal layer 1 accumulates in the same order: bit-equal.
  EXPECT_TRUE((horizontal_log(g, run.terminal).array() == sum.array()).all());
  // The rescaled fold scales before summing; same value up to roundoff.
  EXPECT_LE((horizontal_log(g, run.rescaled) - sum / 200.0).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(SampleWalk, TwoStepSignWalkHitsKnownElement) {
  // Steps (1,1) then (1,-1): the area term is (1*(-1) - 1*1)/2 = -1.
  const auto g = CarnotGroup::heisenberg(2);
  Vec acc = Vec::Zero(3);
  fold_step(g, acc, (Vec(2) << 1.0, 1.0).finished());
  fold_step(g, acc, (Vec(2) << 1.0, -1.0).finished());
  EXPECT_EQ(acc[0], 2.0);
  EXPECT_EQ(acc[1], 0.0);
  EXPECT_EQ(acc[2], -1.0);
  const GroupElement rescaled = dilate(g, 0.5, GroupElement{acc});
  EXPECT_EQ(rescaled.x[0], 1.0);
  EXPECT_EQ(rescaled.x[2], -0.25);
}

TEST(SampleWalk, RescaledWalkConcentratesAtIdentity) {
  // Law of large numbers smoke test: D_{1/n} S_n is small for n = 1e4.
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::gaussian(g);
  std::vector<double> norms;
  for (std::uint64_t trial = 0; trial < 100; ++trial)
    norms.push_back(
        homogeneous_norm(g, sample_walk(g, dist, 10000, 2026, trial).rescaled));
  EXPECT_LT(median(norms), 0.1);
}

TEST(SampleWalk, ValidatesArguments) {
  const auto g = CarnotGroup::heisenberg(2);
  EXPECT_THROW(sample_walk(g, StepDistribution::gaussian(g), 0, 1),
               std::invalid_argument);
  EXPECT_THROW(sample_walk(g, StepDistribution::gaussian(3), 10, 1),
               std::invalid_argument);
}

TEST(BlockProjection, BlocksTileAndSumToTheMean) {
  const auto g = CarnotGroup::engel();
  const WalkRun run = sample_walk(g, StepDistribution::uniform_ball(2), 10, 31, 0, true);
  const auto y = block_projection(run, 3);
  ASSERT_EQ(y.size(), 3u);  // blocks of 3, 3, 4: remainder goes last
  Vec total = Vec::Zero(2);
  for (const Vec& yk : y) total += yk;
  Vec mean = Vec::Zero(2);
  for (const Vec& x : *run.increments) mean += x;
  mean /= 10.0;
  EXPECT_LE((total - mean).cwiseAbs().maxCoeff(), 1e-12);

  const auto y1 = block_projection(run, 1);
  ASSERT_EQ(y1.size(), 1u);
  EXPECT_LE((y1[0] - mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BlockProjection, ValidatesInput) {
  const auto g = CarnotGroup::heisenberg(2);
  const WalkRun with = sample_walk(g, StepDistribution::gaussian(g), 8, 1, 0, true);
  EXPECT_THROW(block_projection(with, 0), std::invalid_argument);
  EXPECT_THROW(block_projection(with, 9), std::invalid_argument);
  const WalkRun without = sample_walk(g, StepDistribution::gaussian(g), 8, 1, 0);
  EXPECT_THROW(block_projection(without, 8), std::invalid_argument);
}

TEST(ApproximationGap, ExactlyZeroWhenEveryStepIsABlock) {
  // At m = n each block average is (0 + X_k) * (1/n), bit for bit the input
  // the rescaled fold consumed, so the folds agree exactly.
  const auto h = CarnotGroup::heisenberg(2);
  const WalkRun rh = sample_walk(h, StepDistribution::gaussian(h), 257, 77, 3, true);
  EXPECT_EQ(approximation_gap(h, rh, 257), 0.0);

  const auto e = CarnotGroup::engel();
  const WalkRun re = sample_walk(e, StepDistribution::uniform_cube(2), 64, 78, 1, true);
  EXPECT_EQ(approximation_gap(e, re, 64), 0.0);
}

TEST(ApproximationGap, SingleBlockMatchesDirectFold) {
  const auto g = CarnotGroup::heisenberg(2);
  const WalkRun run = sample_walk(g, StepDistribution::gaussian(g), 50, 9, 0, true);
  const auto y = block_projection(run, 1);
  Vec acc = Vec::Zero(g.dim());
  fold_step(g, acc, y[0]);
  EXPECT_EQ(approximation_gap(g, run, 1),
            element_gap(g, GroupElement{acc}, run.rescaled));
  EXPECT_GT(approximation_gap(g, run, 1), 0.0);
}

TEST(ApproximationGap, MedianGapShrinksAsBlocksRefine) {
  const auto g = CarnotGroup::heisenberg(2);
  const auto dist = StepDistribution::gaussian(g);
  const int n = 256;
  const std::vector<int> ms = {1, 4, 16, 64};
  std::vector<std::vector<double>> gaps(ms.size());
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    const WalkRun run = sample_walk(g, dist, n, 404, trial, true);
    for (std::size_t j = 0; j < ms.size(); ++j)
      gaps[j].push_back(approximation_gap(g, run, ms[j]));
  }
  for (std::size_t j = 0; j + 1 < ms.size(); ++j)
    EXPECT_GT(median(gaps[j]), median(gaps[j + 1])) << "m=" << ms[j];
}
