#pragma once

// Monte Carlo for rare events of the rescaled walk: hit counting with
// Wilson intervals, empirical decay slopes over an n-schedule, a boundary
// scan producing the rate-function reference, and the block-approximation
// decay study.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "carnotwalk/parallel.hpp"
#include "carnotwalk/rate.hpp"
#include "carnotwalk/walk.hpp"

namespace carnot {

/// Event of the rescaled endpoint D_{1/n} S_n.
class EventSpec {
 public:
  enum class Kind { GnormExceed, Ball, HorizontalExceed };

  /// { |z|_G >= a }; a = 0 gives the sure event.
  static EventSpec gnorm_exceed(double a) {
    EventSpec e;
    e.kind_ = Kind::GnormExceed;
    e.a_ = a;
    e.check_threshold(0.0);
    return e;
  }
  /// { |x0^{-1} z|_G <= eps }
  static EventSpec ball(GroupElement x0, double eps) {
    EventSpec e;
    e.kind_ = Kind::Ball;
    e.a_ = eps;
    e.center_ = std::move(x0);
    e.check_threshold(std::numeric_limits<double>::min());
    if (!e.center_.x.allFinite())
      throw std::invalid_argument("event center must be finite");
    return e;
  }
  /// { |L(z)|_H >= a }; a = 0 gives the sure event.
  static EventSpec horizontal_exceed(double a) {
    EventSpec e;
    e.kind_ = Kind::HorizontalExceed;
    e.a_ = a;
    e.check_threshold(0.0);
    return e;
  }

  Kind kind() const { return kind_; }
  double threshold() const { return a_; }
  const GroupElement& center() const { return center_; }

  bool contains(const CarnotGroup& g, const GroupElement& z) const {
    switch (kind_) {
      case Kind::GnormExceed:
        return homogeneous_norm(g, z) >= a_;
      case Kind::Ball:
        return element_gap(g, center_, z) <= a_;
      case Kind::HorizontalExceed:
        return g.h_norm(horizontal_log(g, z)) >= a_;
    }
    return false;
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::GnormExceed:
        return "gnorm>=" + std::to_string(a_);
      case Kind::Ball:
        return "ball(eps=" + std::to_string(a_) + ")";
      case Kind::HorizontalExceed:
        return "hnorm>=" + std::to_string(a_);
    }
    return "?";
  }

 private:
  void check_threshold(double min_value) const {
    if (!(a_ >= min_value) || !std::isfinite(a_))
      throw std::invalid_argument("event threshold/radius out of range");
  }

  Kind kind_ = Kind::GnormExceed;
  double a_ = 1.0;
  GroupElement center_;
};

/// Minimum hit count for an estimate to enter a slope fit.
constexpr std::uint64_t kMinHitsForFit = 30;

struct MCEstimate {
  int n = 0;
  std::uint64_t trials = 0;
  std::uint64_t hits = 0;
  double p_hat = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  /// (1/n) log p_hat; NaN when hits == 0 (censored, never -inf).
  double scaled_log = std::numeric_limits<double>::quiet_NaN();
  bool usable_for_log = false;
};

namespace mc_detail {

constexpr double kZ95 = 1.959963984540054;

inline void wilson_interval(std::uint64_t hits, std::uint64_t trials, double& lo,
                            double& hi) {
  const double T = static_cast<double>(trials);
  const double p = static_cast<double>(hits) / T;
  const double z2 = kZ95 * kZ95;
  const double denom = 1.0 + z2 / T;
  const double center = (p + z2 / (2.0 * T)) / denom;
  const double half =
      kZ95 * std::sqrt(p * (1.0 - p) / T + z2 / (4.0 * T * T)) / denom;
  lo = std::max(0.0, center - half);
  hi = std::min(1.0, center + half);
}

struct LineFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double sxx = 0.0;
  double x_mean = 0.0;
};

/// Ordinary least squares for y = intercept + slope * x.
inline LineFit line_fit(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit f;
  const std::size_t k = x.size();
  if (k < 2 || y.size() != k) return f;
  double xm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    xm += x[i];
    ym += y[i];
  }
  xm /= static_cast<double>(k);
  ym /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (sxx <= 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  f.sxx = sxx;
  f.x_mean = xm;
  return f;
}

}  // namespace mc_detail

/// Hit frequency of `event` for the rescaled n-step walk over iid trials.
/// Trial t replays sample_walk(g, dist, n, seed, t) exactly.
inline MCEstimate estimate(const CarnotGroup& g, const StepDistribution& dist,
                           const EventSpec& event, int n, std::uint64_t trials,
                           std::uint64_t seed, int threads = 0) {
  if (n < 1) throw std::invalid_argument("estimate: n must be >= 1");
  if (trials < 1) throw std::invalid_argument("estimate: trials must be >= 1");
  if (dist.dim() != g.horizontal_dim())
    throw std::invalid_argument("estimate: step dimension != horizontal dimension");
  const double inv_n = 1.0 / static_cast<double>(n);
  const int dim = g.dim();
  const int d1 = g.horizontal_dim();
  const std::uint64_t hits = parallel_count(trials, threads, [&](std::uint64_t t) {
    RngStream rng(seed, stream_id(walk_detail::kWalkTag,
                                  static_cast<std::uint64_t>(n) & 0xFFFF, t));
    thread_local Vec acc, x, xs;
    acc.resize(dim);
    x.resize(d1);
    xs.resize(d1);
    acc.setZero();
    for (int i = 0; i < n; ++i) {
      dist.sample_into(rng, x);
      xs = x * inv_n;
      fold_step(g, acc, xs);
    }
    return event.contains(g, GroupElement{acc});
  });
  MCEstimate est;
  est.n = n;
  est.trials = trials;
  est.hits = hits;
  est.p_hat = static_cast<double>(hits) / static_cast<double>(trials);
  mc_detail::wilson_interval(hits, trials, est.wilson_lo, est.wilson_hi);
  if (hits > 0) est.scaled_log = std::log(est.p_hat) * inv_n;
  est.usable_for_log = hits >= kMinHitsForFit;
  return est;
}

struct SlopeReport {
  std::vector<MCEstimate> points;
  int usable = 0;
  bool has_slope = false;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_se = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  /// Large-deviation reference value (e.g. -inf J over the event); NaN if unset.
  double reference = std::numeric_limits<double>::quiet_NaN();
  std::string reference_note;
};

/// Fits log p_n = a + slope * n by least squares over the estimates with at
/// least kMinHitsForFit hits. Fewer than 3 usable points: estimates are
/// still reported but no slope is claimed. The standard error uses the
/// known binomial variance var(log p_hat) ~= (1 - p_hat) / hits.
inline SlopeReport slope_study(const CarnotGroup& g, const StepDistribution& dist,
                               const EventSpec& event, const std::vector<int>& n_schedule,
                               const std::vector<std::uint64_t>& trials_schedule,
                               std::uint64_t seed, int threads = 0) {
  if (n_schedule.empty()) throw std::invalid_argument("slope_study: empty n schedule");
  for (std::size_t i = 0; i + 1 < n_schedule.size(); ++i)
    if (n_schedule[i] >= n_schedule[i + 1])
      throw std::invalid_argument("slope_study: n schedule must be strictly increasing");
  if (trials_schedule.size() != 1 && trials_schedule.size() != n_schedule.size())
    throw std::invalid_argument("slope_study: trials schedule must have size 1 or match n schedule");

  SlopeReport rep;
  for (std::size_t i = 0; i < n_schedule.size(); ++i) {
    const std::uint64_t T =
        trials_schedule.size() == 1 ? trials_schedule[0] : trials_schedule[i];
    rep.points.push_back(estimate(g, dist, event, n_schedule[i], T, seed, threads));
  }

  std::vector<double> xs, ys, vars;
  for (const MCEstimate& e : rep.points) {
    if (!e.usable_for_log) continue;
    xs.push_back(static_cast<double>(e.n));
    ys.push_back(std::log(e.p_hat));
    vars.push_back((1.0 - e.p_hat) / static_cast<double>(e.hits));
  }
  rep.usable = static_cast<int>(xs.size());
  if (rep.usable < 3) return rep;

  const mc_detail::LineFit fit = mc_detail::line_fit(xs, ys);
  if (!std::isfinite(fit.slope)) return rep;
  double var_slope = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double c = (xs[i] - fit.x_mean) / fit.sxx;
    var_slope += c * c * vars[i];
  }
  rep.has_slope = true;
  rep.slope = fit.slope;
  rep.slope_se = std::sqrt(var_slope);
  rep.ci_lo = fit.slope - mc_detail::kZ95 * rep.slope_se;
  rep.ci_hi = fit.slope + mc_detail::kZ95 * rep.slope_se;
  return rep;
}

inline SlopeReport slope_study(const CarnotGroup& g, const StepDistribution& dist,
                               const EventSpec& event, const std::vector<int>& n_schedule,
                               std::uint64_t trials, std::uint64_t seed,
                               int threads = 0) {
  return slope_study(g, dist, event, n_schedule,
                     std::vector<std::uint64_t>{trials}, seed, threads);
}

struct BoundaryScan {
  double inf_rate = kInf;
  GroupElement argmin;
  std::vector<double> rates;
  int feasible_points = 0;
};

/// Infimum of the rate function over the boundary {|x|_G = a}, scanned at
/// deterministic points: the 2*d1 horizontal axis points first, then seeded
/// random directions pulled onto the boundary along their dilation ray.
/// By dilation scaling the boundary infimum equals the infimum over the
/// closed region {|x|_G >= a}.
inline BoundaryScan boundary_inf_rate(const CarnotGroup& g, const CumulantModel& model,
                                      double a, int m, int points, RateOptions opt = {}) {
  if (!(a > 0.0)) throw std::invalid_argument("boundary_inf_rate: radius must be positive");
  if (points < 1) throw std::invalid_argument("boundary_inf_rate: need at least one point");
  const int d1 = g.horizontal_dim();
  BoundaryScan scan;
  scan.argmin = identity_element(g);
  for (int p = 0; p < points; ++p) {
    GroupElement x = identity_element(g);
    if (p < 2 * d1) {
      x.x[p / 2] = (p % 2 == 0) ? a : -a;
    } else {
      RngStream rng(opt.seed, stream_id(4, 0, static_cast<std::uint64_t>(p)));
      double norm = 0.0;
      do {
        for (int i = 0; i < g.dim(); ++i) x.x[i] = rng.gaussian();
        norm = homogeneous_norm(g, x);
      } while (norm < 1e-8);
      x = dilate(g, a / norm, x);
    }
    const RateResult r = minimize_rate(g, model, x, m, opt);
    const double v = r.feasible ? r.value : kInf;
    scan.rates.push_back(v);
    if (r.feasible) ++scan.feasible_points;
    if (v < scan.inf_rate) {
      scan.inf_rate = v;
      scan.argmin = x;
    }
  }
  return scan;
}

/// Infimum of Lambda* over the horizontal shell {|u|_H >= a}. Lambda* is
/// convex with Lambda*(0) = 0, so the infimum sits on the sphere |u|_H = a;
/// the scan uses the axis directions first, then seeded random ones.
inline double horizontal_inf_rate(const CarnotGroup& g, const CumulantModel& model,
                                  double a, int points = 64, std::uint64_t seed = 1) {
  if (!(a >= 0.0) || !std::isfinite(a))
    throw std::invalid_argument("horizontal_inf_rate: threshold must be nonnegative");
  if (a == 0.0) return 0.0;
  if (points < 1) throw std::invalid_argument("horizontal_inf_rate: need at least one point");
  const int d1 = g.horizontal_dim();
  double best = kInf;
  Vec dir(d1);
  for (int p = 0; p < points; ++p) {
    dir.setZero();
    if (p < 2 * d1) {
      dir[p / 2] = (p % 2 == 0) ? 1.0 : -1.0;
    } else {
      RngStream rng(seed, stream_id(4, 1, static_cast<std::uint64_t>(p)));
      for (int i = 0; i < d1; ++i) dir[i] = rng.gaussian();
    }
    const double nh = g.h_norm(dir);
    if (nh < 1e-12) continue;
    try {
      best = std::min(best, legendre(model, Vec(dir * (a / nh))));
    } catch (const LegendreFailure&) {
      // non-convergent point: skip rather than report a bogus value
    }
  }
  return best;
}

struct DecayRow {
  int n = 0;
  int m = 0;
  std::uint64_t trials = 0;
  std::uint64_t hits = 0;  // gap > delta
  double p_exceed = 0.0;
  bool censored = false;  // zero hits: log left unreported
  double scaled_log = std::numeric_limits<double>::quiet_NaN();
  double median_gap = 0.0;
};

struct DecayStudy {
  double delta = 0.0;
  std::vector<DecayRow> rows;
};

/// P(|Psi_m(Y)^{-1} D_{1/n} S_n|_G > delta) and the median gap, tabulated
/// over (n, m). Each trial samples one walk and reuses its increments for
/// every m; entries of m_list larger than n are skipped.
inline DecayStudy approximation_decay_study(const CarnotGroup& g,
                                            const StepDistribution& dist, double delta,
                                            const std::vector<int>& n_schedule,
                                            const std::vector<int>& m_list,
                                            std::uint64_t trials, std::uint64_t seed,
                                            int threads = 0) {
  if (!(delta > 0.0)) throw std::invalid_argument("decay study: delta must be positive");
  if (n_schedule.empty() || m_list.empty() || trials < 1)
    throw std::invalid_argument("decay study: empty schedule");
  DecayStudy study;
  study.delta = delta;
  for (int n : n_schedule) {
    std::vector<int> ms;
    for (int m : m_list)
      if (m <= n) ms.push_back(m);
    if (ms.empty()) continue;
    // gaps[t * ms.size() + j] for trial t, block count ms[j]
    std::vector<double> gaps(static_cast<std::size_t>(trials) * ms.size());
    parallel_for(trials, threads, [&](std::uint64_t t) {
      const WalkRun run = sample_walk(g, dist, n, seed, t, true);
      for (std::size_t j = 0; j < ms.size(); ++j)
        gaps[t * ms.size() + j] = approximation_gap(g, run, ms[j]);
    });
    for (std::size_t j = 0; j < ms.size(); ++j) {
      DecayRow row;
      row.n = n;
      row.m = ms[j];
      row.trials = trials;
      std::vector<double> col(trials);
      for (std::uint64_t t = 0; t < trials; ++t) {
        col[t] = gaps[t * ms.size() + j];
        if (col[t] > delta) ++row.hits;
      }
      row.p_exceed = static_cast<double>(row.hits) / static_cast<double>(trials);
      row.censored = row.hits == 0;
      if (!row.censored)
        row.scaled_log = std::log(row.p_exceed) / static_cast<double>(n);
      std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
      double med = col[col.size() / 2];
      if (col.size() % 2 == 0) {
        std::nth_element(col.begin(), col.begin() + col.size() / 2 - 1, col.end());
        med = 0.5 * (med + col[col.size() / 2 - 1]);
      }
      row.median_gap = med;
      study.rows.push_back(row);
    }
  }
  return study;
}

}  // namespace carnot
