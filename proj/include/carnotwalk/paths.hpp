#pragma once

// Horizontal paths and their controls.
//
// A control c(t) takes values in the horizontal layer; the path solves
// gamma' = (L_gamma)_* c(t), gamma(0) = e. Piecewise-constant controls on a
// uniform m-grid correspond to products of m exponentials: the segment-k
// control is m * u_k, so the endpoint is Psi_m(u) = exp(u_1) ... exp(u_m).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "carnotwalk/bcdh.hpp"
#include "carnotwalk/group.hpp"
#include "carnotwalk/io.hpp"
#include "carnotwalk/rng.hpp"
#include "json.hpp"

namespace carnot {

/// Constant control value per uniform segment of [0,1].
struct PiecewiseControl {
  std::vector<Vec> values;  // d1-vectors; segment k covers ((k-1)/m, k/m]
  int segments() const { return static_cast<int>(values.size()); }
};

/// Piecewise-linear control through (t_i, value_i) nodes, t_0 = 0, t_last = 1.
struct SampledControl {
  std::vector<double> t;
  std::vector<Vec> values;
};

/// Integrated path states on the integrator grid.
struct PathTrace {
  std::vector<double> t;
  std::vector<Vec> x;
  GroupElement endpoint() const { return {x.back()}; }
};

// ---- u <-> control correspondence ----

inline PiecewiseControl control_from_u(const std::vector<Vec>& u) {
  PiecewiseControl c;
  const double m = static_cast<double>(u.size());
  for (const auto& uk : u) c.values.push_back(m * uk);
  return c;
}

inline std::vector<Vec> u_from_control(const PiecewiseControl& c) {
  std::vector<Vec> u;
  const double m = static_cast<double>(c.segments());
  for (const auto& v : c.values) u.push_back(v / m);
  return u;
}

/// Psi_m(u) = exp(u_1) * ... * exp(u_m), horizontal u_k.
inline GroupElement endpoint_product(const CarnotGroup& g, const std::vector<Vec>& u) {
  Vec acc = Vec::Zero(g.dim());
  for (const auto& uk : u) fold_step(g, acc, uk);
  return {acc};
}

inline GroupElement control_endpoint(const CarnotGroup& g, const PiecewiseControl& c) {
  return endpoint_product(g, u_from_control(c));
}

// ---- integration ----

namespace detail {

inline void require_controls(const CarnotGroup& g, const std::vector<Vec>& values) {
  for (const auto& v : values) {
    if (v.size() != g.horizontal_dim())
      throw std::invalid_argument("control value dimension does not match horizontal layer");
    if (!v.allFinite()) throw std::invalid_argument("control value is not finite");
  }
}

// One classical RK4 step of gamma' = (L_gamma)_* c with c frozen per stage.
inline void rk4_step(const CarnotGroup& g, Vec& y, double h, const Vec& c0, const Vec& cmid,
                     const Vec& c1) {
  const Vec k1 = left_pushforward(g, {y}, c0);
  const Vec k2 = left_pushforward(g, {y + 0.5 * h * k1}, cmid);
  const Vec k3 = left_pushforward(g, {y + 0.5 * h * k2}, cmid);
  const Vec k4 = left_pushforward(g, {y + h * k3}, c1);
  y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Fixed-step RK4 with steps aligned to control segments.
inline PathTrace integrate(const CarnotGroup& g, const PiecewiseControl& ctrl,
                           double step = 1e-3) {
  if (ctrl.segments() == 0) throw std::invalid_argument("integrate: empty control");
  if (!(step > 0)) throw std::invalid_argument("integrate: step size must be positive");
  detail::require_controls(g, ctrl.values);
  const int m = ctrl.segments();
  PathTrace trace;
  Vec y = Vec::Zero(g.dim());
  trace.t.push_back(0.0);
  trace.x.push_back(y);
  const double seg_len = 1.0 / m;
  for (int k = 0; k < m; ++k) {
    const Vec c = embed_horizontal(g, ctrl.values[k]);
    const int nsub = std::max(1, static_cast<int>(std::ceil(seg_len / step - 1e-12)));
    const double h = seg_len / nsub;
    for (int s = 0; s < nsub; ++s) {
      detail::rk4_step(g, y, h, c, c, c);
      trace.t.push_back(k * seg_len + (s + 1) * h);
      trace.x.push_back(y);
    }
  }
  return trace;
}

inline PathTrace integrate(const CarnotGroup& g, const SampledControl& ctrl, double step = 1e-3) {
  if (ctrl.t.size() < 2 || ctrl.t.size() != ctrl.values.size())
    throw std::invalid_argument("integrate: sampled control needs matching t/value nodes");
  if (!(step > 0)) throw std::invalid_argument("integrate: step size must be positive");
  if (ctrl.t.front() != 0.0 || ctrl.t.back() != 1.0)
    throw std::invalid_argument("integrate: sampled grid must start at 0 and end at 1");
  detail::require_controls(g, ctrl.values);
  PathTrace trace;
  Vec y = Vec::Zero(g.dim());
  trace.t.push_back(ctrl.t.front());
  trace.x.push_back(y);
  for (size_t seg = 0; seg + 1 < ctrl.t.size(); ++seg) {
    const double t0 = ctrl.t[seg], t1 = ctrl.t[seg + 1];
    if (t1 <= t0) throw std::invalid_argument("integrate: nodes must be increasing");
    const int nsub = std::max(1, static_cast<int>(std::ceil((t1 - t0) / step - 1e-12)));
    const double h = (t1 - t0) / nsub;
    auto at = [&](double t) {
      const double w = (t - t0) / (t1 - t0);
      return embed_horizontal(g, Vec(((1.0 - w) * ctrl.values[seg] + w * ctrl.values[seg + 1])));
    };
    for (int s = 0; s < nsub; ++s) {
      const double ta = t0 + s * h;
      detail::rk4_step(g, y, h, at(ta), at(ta + 0.5 * h), at(ta + h));
      trace.t.push_back(ta + h);
      trace.x.push_back(y);
    }
  }
  return trace;
}

// ---- length and energy ----

inline double path_length(const CarnotGroup& g, const PiecewiseControl& c) {
  double acc = 0.0;
  for (const auto& v : c.values) acc += g.h_norm(v);
  return acc / c.segments();
}

inline double path_energy(const CarnotGroup& g, const PiecewiseControl& c) {
  double acc = 0.0;
  for (const auto& v : c.values) acc += g.h_inner(v, v);
  return acc / c.segments();
}

/// Composite Simpson over each linear piece.
inline double path_length(const CarnotGroup& g, const SampledControl& c) {
  double acc = 0.0;
  for (size_t i = 0; i + 1 < c.t.size(); ++i) {
    const Vec mid = 0.5 * (c.values[i] + c.values[i + 1]);
    acc += (c.t[i + 1] - c.t[i]) / 6.0 *
           (g.h_norm(c.values[i]) + 4.0 * g.h_norm(mid) + g.h_norm(c.values[i + 1]));
  }
  return acc;
}

inline double path_energy(const CarnotGroup& g, const SampledControl& c) {
  double acc = 0.0;
  for (size_t i = 0; i + 1 < c.t.size(); ++i) {
    const Vec mid = 0.5 * (c.values[i] + c.values[i + 1]);
    acc += (c.t[i + 1] - c.t[i]) / 6.0 *
           (g.h_inner(c.values[i], c.values[i]) + 4.0 * g.h_inner(mid, mid) +
            g.h_inner(c.values[i + 1], c.values[i + 1]));
  }
  return acc;
}

// ---- closed-form path for step <= 2 ----

/// Position at time t of the piecewise path with segment displacements u.
/// Layer 1 interpolates the partial sums; layer-2 coordinate q accumulates
/// the pairwise forms Q_q(u_j, u_l) plus the in-segment sweep.
inline GroupElement step2_explicit_path(const CarnotGroup& g, const std::vector<Vec>& u,
                                        double t) {
  if (g.step() > 2) throw std::logic_error("step2_explicit_path requires step <= 2");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("step2_explicit_path: t outside [0,1]");
  const int m = static_cast<int>(u.size());
  const int d1 = g.horizontal_dim();
  const auto& forms = g.step2_forms();

  // Segment index k (1-based) with local offset tau in [0, 1/m].
  int k = std::min(m, static_cast<int>(std::floor(t * m)) + 1);
  const double tau = t - (k - 1) / static_cast<double>(m);

  Vec out = Vec::Zero(g.dim());
  Vec prefix = Vec::Zero(d1);
  for (int j = 0; j < k - 1; ++j) {
    for (size_t q = 0; q < forms.size(); ++q)
      out[d1 + q] += prefix.dot(forms[q] * u[j]);  // sum over pairs j' < j
    prefix += u[j];
  }
  const Vec sweep = (tau * m) * u[k - 1];
  for (size_t q = 0; q < forms.size(); ++q) out[d1 + q] += prefix.dot(forms[q] * sweep);
  out.head(d1) = prefix + sweep;
  return {out};
}

// ---- endpoint gap study ----

struct GapSample {
  double dist = 0.0;  // L1 control distance to the base path
  double gap = 0.0;   // homogeneous norm of sigma(1)^{-1} * gamma(1)
};

struct GapStudy {
  std::vector<GapSample> samples;
  double fitted_slope = 0.0;  // least squares through the origin
  double max_ratio = 0.0;
};

/// Perturbs the base control by random directions of prescribed L1 size and
/// reports how the endpoint moves. Gap growth should stay linear in the
/// perturbation budget.
inline GapStudy endpoint_gap_study(const CarnotGroup& g, const PiecewiseControl& base,
                                   double eps, int trials, std::uint64_t seed) {
  const int m = base.segments();
  const int d1 = g.horizontal_dim();
  const GroupElement base_end = control_endpoint(g, base);

  GapStudy study;
  double sxx = 0.0, sxy = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    RngStream rng(seed, stream_id(3, 0, static_cast<std::uint64_t>(trial)));
    PiecewiseControl pert = base;
    std::vector<Vec> delta(m);
    double l1 = 0.0;
    for (int k = 0; k < m; ++k) {
      delta[k] = Vec(d1);
      for (int c = 0; c < d1; ++c) delta[k][c] = rng.gaussian();
      l1 += g.h_norm(delta[k]) / m;
    }
    const double target = eps * (trial + 1) / trials;  // spread budgets over (0, eps]
    const double scale = (l1 > 0) ? target / l1 : 0.0;
    for (int k = 0; k < m; ++k) pert.values[k] += scale * delta[k];

    const GroupElement pert_end = control_endpoint(g, pert);
    const double gap = element_gap(g, base_end, pert_end);
    study.samples.push_back({target, gap});
    sxx += target * target;
    sxy += target * gap;
    if (target > 0) study.max_ratio = std::max(study.max_ratio, gap / target);
  }
  study.fitted_slope = (sxx > 0) ? sxy / sxx : 0.0;
  return study;
}

// ---- serialization ----

inline nlohmann::json control_to_json(const PiecewiseControl& c) {
  nlohmann::json j;
  j["m"] = c.segments();
  auto& vals = j["values"] = nlohmann::json::array();
  for (const auto& v : c.values) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) row.push_back(v[i]);
    vals.push_back(row);
  }
  return j;
}

inline PiecewiseControl control_from_json(const nlohmann::json& j) {
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (key != "m" && key != "values")
      throw std::invalid_argument("control json: unknown key '" + key + "'");
  }
  PiecewiseControl c;
  const auto& vals = j.at("values");
  for (const auto& row : vals) {
    Vec v(row.size());
    for (size_t i = 0; i < row.size(); ++i) v[i] = row[i].get<double>();
    c.values.push_back(v);
  }
  if (j.contains("m") && j.at("m").get<int>() != c.segments())
    throw std::invalid_argument("control json: m does not match values");
  if (c.values.empty()) throw std::invalid_argument("control json: empty control");
  for (const auto& v : c.values)
    if (v.size() != c.values[0].size())
      throw std::invalid_argument("control json: ragged values");
  return c;
}

/// CSV with header t,x_1,...,x_N.
inline std::string trace_to_csv(const PathTrace& trace) {
  std::vector<std::string> header = {"t"};
  const int N = trace.x.empty() ? 0 : static_cast<int>(trace.x[0].size());
  for (int i = 1; i <= N; ++i) header.push_back("x_" + std::to_string(i));
  CsvTable csv(header);
  for (size_t r = 0; r < trace.t.size(); ++r) {
    csv.begin_row().col(trace.t[r]);
    for (int i = 0; i < N; ++i) csv.col(trace.x[r][i]);
  }
  return csv.to_string();
}

}  // namespace carnot
