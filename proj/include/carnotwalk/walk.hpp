#pragma once

// Horizontal random walks: step distributions, the rescaled walk
// D_{1/n}(exp X_1 * ... * exp X_n), and its block-averaged piecewise
// approximation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "carnotwalk/bcdh.hpp"
#include "carnotwalk/rate.hpp"
#include "carnotwalk/rng.hpp"

namespace carnot {

/// Mean-zero horizontal step law. Every kind is sub-Gaussian; the bounded
/// kinds additionally satisfy a hard radius bound checked by tests.
class StepDistribution {
 public:
  static StepDistribution gaussian(const CarnotGroup& g) {
    StepDistribution d(CumulantKind::Gaussian, g.horizontal_dim(), 0.0);
    d.transform_ = g.sampling_transform();
    d.metric_ = g.horizontal_metric();
    d.identity_transform_ = d.transform_.isIdentity(0.0);
    return d;
  }
  static StepDistribution gaussian(int d1) {
    StepDistribution d(CumulantKind::Gaussian, d1, 0.0);
    d.transform_ = Mat::Identity(d1, d1);
    d.metric_ = Mat::Identity(d1, d1);
    return d;
  }
  static StepDistribution uniform_cube(int d1, double radius = 1.0) {
    return StepDistribution(CumulantKind::UniformCube, d1, radius);
  }
  static StepDistribution uniform_ball(int d1, double radius = 1.0) {
    return StepDistribution(CumulantKind::UniformBall, d1, radius);
  }
  static StepDistribution sphere(int d1, double radius = 1.0) {
    return StepDistribution(CumulantKind::Sphere, d1, radius);
  }
  static StepDistribution rademacher(int d1, double radius = 1.0) {
    return StepDistribution(CumulantKind::Rademacher, d1, radius);
  }

  CumulantKind kind() const { return kind_; }
  int dim() const { return d1_; }
  std::string name() const { return kind_name(kind_); }
  bool bounded() const { return kind_ != CumulantKind::Gaussian; }

  /// sup |X|_2 over the support; +inf for the Gaussian kind.
  double support_radius() const {
    switch (kind_) {
      case CumulantKind::Gaussian:
        return kInf;
      case CumulantKind::UniformCube:
      case CumulantKind::Rademacher:
        return radius_ * std::sqrt(static_cast<double>(d1_));
      default:
        return radius_;
    }
  }

  /// Log moment generating function of this law under the matching pairing.
  CumulantModel cumulant() const {
    switch (kind_) {
      case CumulantKind::Gaussian:
        return CumulantModel::gaussian(d1_, metric_);
      case CumulantKind::UniformCube:
        return CumulantModel::uniform_cube(d1_, radius_);
      case CumulantKind::UniformBall:
        return CumulantModel::uniform_ball(d1_, radius_);
      case CumulantKind::Sphere:
        return CumulantModel::sphere(d1_, radius_);
      case CumulantKind::Rademacher:
        return CumulantModel::rademacher(d1_, radius_);
    }
    throw std::logic_error("unknown step distribution kind");
  }

  /// Draws one step into a preallocated vector of size dim(); the hot loops
  /// reuse `out` so the inner walk allocates nothing.
  void sample_into(RngStream& rng, Vec& out) const {
    switch (kind_) {
      case CumulantKind::Gaussian: {
        for (int i = 0; i < d1_; ++i) out[i] = rng.gaussian();
        if (!identity_transform_) apply_transform(out);
        return;
      }
      case CumulantKind::UniformCube:
        for (int i = 0; i < d1_; ++i) out[i] = rng.uniform(-radius_, radius_);
        return;
      case CumulantKind::Rademacher:
        for (int i = 0; i < d1_; ++i)
          out[i] = (rng.next_u64() >> 63) ? radius_ : -radius_;
        return;
      case CumulantKind::Sphere:
        unit_direction(rng, out);
        out *= radius_;
        return;
      case CumulantKind::UniformBall: {
        if (d1_ == 1) {
          out[0] = rng.uniform(-radius_, radius_);
          return;
        }
        const double r = radius_ * std::pow(rng.uniform01(),
                                            1.0 / static_cast<double>(d1_));
        unit_direction(rng, out);
        out *= r;
        return;
      }
    }
    throw std::logic_error("unknown step distribution kind");
  }

  Vec sample(RngStream& rng) const {
    Vec x(d1_);
    sample_into(rng, x);
    return x;
  }

 private:
  StepDistribution(CumulantKind k, int d1, double radius)
      : kind_(k), d1_(d1), radius_(radius) {
    if (d1 < 1) throw std::invalid_argument("step distribution needs d1 >= 1");
    if (k != CumulantKind::Gaussian && !(radius > 0.0))
      throw std::invalid_argument("step distribution radius must be positive");
  }

  void apply_transform(Vec& out) const {
    thread_local Vec scratch;
    scratch = out;
    out.noalias() = transform_ * scratch;
  }

  void unit_direction(RngStream& rng, Vec& out) const {
    if (d1_ == 1) {
      out[0] = (rng.next_u64() >> 63) ? 1.0 : -1.0;
      return;
    }
    double n = 0.0;
    do {
      for (int i = 0; i < d1_; ++i) out[i] = rng.gaussian();
      n = out.norm();
    } while (n < 1e-150);
    out /= n;
  }

  CumulantKind kind_;
  int d1_;
  double radius_;
  bool identity_transform_ = true;
  Mat transform_;  // gaussian only: maps iid standard normals to the law
  Mat metric_;     // gaussian only: pairing for the cumulant model
};

/// One realized walk. `terminal` folds the raw increments; `rescaled` folds
/// the same increments scaled by 1/n, which equals D_{1/n} terminal up to
/// roundoff but is the exact arithmetic reused by block projections.
struct WalkRun {
  int n = 0;
  std::uint64_t seed = 0;
  GroupElement terminal;
  GroupElement rescaled;
  std::optional<std::vector<Vec>> increments;
};

namespace walk_detail {
constexpr std::uint64_t kWalkTag = 2;
}

/// Core sampler: consumes the given stream. Deterministic in (stream state, n).
inline WalkRun sample_walk(const CarnotGroup& g, const StepDistribution& dist,
                           int n, RngStream& rng, bool retain_increments = false) {
  if (n < 1) throw std::invalid_argument("sample_walk: n must be >= 1");
  if (dist.dim() != g.horizontal_dim())
    throw std::invalid_argument("sample_walk: step dimension != horizontal dimension");
  WalkRun run;
  run.n = n;
  const double inv_n = 1.0 / static_cast<double>(n);
  Vec acc_terminal = Vec::Zero(g.dim());
  Vec acc_rescaled = Vec::Zero(g.dim());
  if (retain_increments) run.increments.emplace(static_cast<std::size_t>(n));
  Vec x(dist.dim());
  Vec x_scaled(dist.dim());
  for (int i = 0; i < n; ++i) {
    dist.sample_into(rng, x);
    x_scaled = x * inv_n;
    fold_step(g, acc_terminal, x);
    fold_step(g, acc_rescaled, x_scaled);
    if (retain_increments) (*run.increments)[static_cast<std::size_t>(i)] = x;
  }
  run.terminal = GroupElement{std::move(acc_terminal)};
  run.rescaled = GroupElement{std::move(acc_rescaled)};
  return run;
}

/// Seeded wrapper with its own stream; trial indexes independent replicas.
inline WalkRun sample_walk(const CarnotGroup& g, const StepDistribution& dist,
                           int n, std::uint64_t seed, std::uint64_t trial = 0,
                           bool retain_increments = false) {
  RngStream rng(seed, stream_id(walk_detail::kWalkTag,
                                static_cast<std::uint64_t>(n) & 0xFFFF, trial));
  WalkRun run = sample_walk(g, dist, n, rng, retain_increments);
  run.seed = seed;
  return run;
}

/// Block averages Y_k = (1/n) sum of increments over (n_{k-1}, n_k], with
/// n_k = k*floor(n/m) and the last block absorbing the remainder. The m
/// blocks tile all n increments, so sum_k Y_k = (1/n) sum_i X_i.
inline std::vector<Vec> block_projection(const WalkRun& run, int m) {
  if (!run.increments)
    throw std::invalid_argument("block_projection: run was sampled without increments");
  if (m < 1 || m > run.n)
    throw std::invalid_argument("block_projection: need 1 <= m <= n");
  const auto& inc = *run.increments;
  const int d1 = static_cast<int>(inc.front().size());
  const int base = run.n / m;
  const double inv_n = 1.0 / static_cast<double>(run.n);
  std::vector<Vec> y(static_cast<std::size_t>(m));
  int lo = 0;
  for (int k = 0; k < m; ++k) {
    const int hi = (k + 1 == m) ? run.n : (k + 1) * base;
    Vec sum = Vec::Zero(d1);
    for (int i = lo; i < hi; ++i) sum += inc[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(k)] = sum * inv_n;
    lo = hi;
  }
  return y;
}

/// |Psi_m(Y)^{-1} D_{1/n} S_n|_G where Psi_m folds the block averages. At
/// m = n each block average reproduces the rescaled fold input bit for bit,
/// so the gap is exactly zero.
inline double approximation_gap(const CarnotGroup& g, const WalkRun& run, int m) {
  const std::vector<Vec> y = block_projection(run, m);
  Vec acc = Vec::Zero(g.dim());
  for (const Vec& yk : y) fold_step(g, acc, yk);
  return element_gap(g, GroupElement{std::move(acc)}, run.rescaled);
}

}  // namespace carnot
