#pragma once

// Cumulant generating functions, Legendre transforms, the discrete rate
// functional I_m(u) = (1/m) sum_k L*(m u_k), and the endpoint-constrained
// minimization defining J_m(x). The Carnot-Caratheodory distance is the
// Gaussian special case d_cc = sqrt(2 J).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "carnotwalk/bcdh.hpp"
#include "carnotwalk/group.hpp"
#include "carnotwalk/paths.hpp"
#include "carnotwalk/rng.hpp"
#include "json.hpp"

namespace carnot {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

/// log(sinh x / x), even, finite everywhere.
inline double log_sinhc(double x) {
  const double a = std::abs(x);
  if (a < 1e-4) {
    const double x2 = a * a;
    return x2 / 6.0 - x2 * x2 / 180.0;
  }
  return a + std::log1p(-std::exp(-2.0 * a)) - std::log(2.0 * a);
}

/// Langevin function coth x - 1/x; the mean of exp-tilted uniform[-1,1].
inline double langevin(double x) {
  if (std::abs(x) < 0.1) {
    const double x2 = x * x;
    return x * (1.0 / 3.0 - x2 / 45.0 + 2.0 * x2 * x2 / 945.0 - x2 * x2 * x2 / 4725.0);
  }
  return 1.0 / std::tanh(x) - 1.0 / x;
}

inline double langevin_deriv(double x) {
  if (std::abs(x) < 0.1) {
    const double x2 = x * x;
    return 1.0 / 3.0 - x2 / 15.0 + 2.0 * x2 * x2 / 189.0 - x2 * x2 * x2 / 675.0;
  }
  const double s = std::sinh(x);
  return 1.0 / (x * x) - 1.0 / (s * s);
}

inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

/// ((1+w)/2)log(1+w) + ((1-w)/2)log(1-w) on [-1,1]; the Rademacher conjugate.
inline double binary_entropy_conjugate(double w) {
  const double a = std::abs(w);
  if (a > 1.0) return kInf;
  if (a == 1.0) return std::log(2.0);
  return 0.5 * (1.0 + a) * std::log1p(a) + 0.5 * (1.0 - a) * std::log1p(-a);
}

/// Log-MGF (with first two derivatives) of t = cos(theta) weighted by
/// sin^q(theta) on [0, pi]: the direction marginal of the unit sphere in
/// dimension q+2 and of the unit ball in dimension q. Midpoint rule in theta
/// is spectrally accurate for even q; odd q uses Simpson in t = cos(theta).
struct MarginalCgf {
  double f, df, ddf;
};

/// Quadrature sums of e^{a(t-1)} t^p against the sin^q weight, p = 0,1,2.
inline void marginal_sums(int q, double a, double out[3]) {
  constexpr int K = 2048;
  out[0] = out[1] = out[2] = 0.0;
  if (q % 2 == 0) {
    const double h = M_PI / K;
    for (int i = 0; i < K; ++i) {
      const double th = (i + 0.5) * h;
      const double t = std::cos(th);
      const double w = std::exp(a * (t - 1.0)) * std::pow(std::sin(th), q);
      out[0] += w;
      out[1] += w * t;
      out[2] += w * t * t;
    }
  } else {
    const int n = 2 * K;  // Simpson nodes t_0..t_n on [-1, 1]
    const double h = 2.0 / n;
    for (int i = 0; i <= n; ++i) {
      const double t = -1.0 + i * h;
      const double coeff = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double w = coeff * std::exp(a * (t - 1.0)) *
                       std::pow(std::max(0.0, 1.0 - t * t), 0.5 * (q - 1));
      out[0] += w;
      out[1] += w * t;
      out[2] += w * t * t;
    }
  }
}

/// Base-measure mass under the same quadrature rule, so that f(0) = 0 exactly.
inline double marginal_norm(int q) {
  static thread_local int cached_q = -1;
  static thread_local double cached = 0.0;
  if (q != cached_q) {
    double s[3];
    marginal_sums(q, 0.0, s);
    cached_q = q;
    cached = s[0];
  }
  return cached;
}

inline MarginalCgf marginal_cgf(int q, double s) {
  double w[3];
  const double a = std::abs(s);
  marginal_sums(q, a, w);
  const double mean = w[1] / w[0];
  const double sgn = (s < 0.0) ? -1.0 : 1.0;
  MarginalCgf out;
  out.f = a + std::log(w[0] / marginal_norm(q));
  out.df = sgn * mean;
  out.ddf = w[2] / w[0] - mean * mean;
  return out;
}

}  // namespace detail

enum class CumulantKind { Gaussian, UniformCube, UniformBall, Sphere, Rademacher };

inline const char* kind_name(CumulantKind k) {
  switch (k) {
    case CumulantKind::Gaussian: return "gaussian";
    case CumulantKind::UniformCube: return "uniform_cube";
    case CumulantKind::UniformBall: return "uniform_ball";
    case CumulantKind::Sphere: return "sphere";
    case CumulantKind::Rademacher: return "rademacher";
  }
  return "?";
}

/// One increment's log moment generating function Lambda(v) = log E exp<v,X>_H,
/// with analytic gradient and Hessian for the shipped mean-zero models.
class CumulantModel {
 public:
  static CumulantModel gaussian(int d1, std::optional<Mat> metric = {}) {
    CumulantModel m(CumulantKind::Gaussian, d1, 1.0);
    m.metric_ = metric ? *metric : Mat::Identity(d1, d1);
    if (m.metric_.rows() != d1 || m.metric_.cols() != d1)
      throw std::invalid_argument("cumulant model: metric dimension mismatch");
    return m;
  }
  static CumulantModel uniform_cube(int d1, double radius = 1.0) {
    return CumulantModel(CumulantKind::UniformCube, d1, radius);
  }
  static CumulantModel uniform_ball(int d1, double radius = 1.0) {
    return CumulantModel(CumulantKind::UniformBall, d1, radius);
  }
  static CumulantModel sphere(int d1, double radius = 1.0) {
    return CumulantModel(CumulantKind::Sphere, d1, radius);
  }
  static CumulantModel rademacher(int d1, double radius = 1.0) {
    return CumulantModel(CumulantKind::Rademacher, d1, radius);
  }

  CumulantKind kind() const { return kind_; }
  int dim() const { return d1_; }
  double radius() const { return radius_; }
  const Mat& metric() const { return metric_; }

  /// Lambda(v). Finite for every v for all shipped models.
  double lambda(const Vec& v) const {
    check(v);
    switch (kind_) {
      case CumulantKind::Gaussian:
        return 0.5 * v.dot(metric_ * v);
      case CumulantKind::UniformCube: {
        double acc = 0.0;
        for (int i = 0; i < d1_; ++i) acc += detail::log_sinhc(radius_ * v[i]);
        return acc;
      }
      case CumulantKind::Rademacher: {
        double acc = 0.0;
        for (int i = 0; i < d1_; ++i) acc += detail::log_cosh(radius_ * v[i]);
        return acc;
      }
      case CumulantKind::Sphere:
        if (d1_ == 1) return detail::log_cosh(radius_ * v[0]);
        return detail::marginal_cgf(d1_ - 2, radius_ * v.norm()).f;
      case CumulantKind::UniformBall:
        if (d1_ == 1) return detail::log_sinhc(radius_ * v[0]);
        return detail::marginal_cgf(d1_, radius_ * v.norm()).f;
    }
    return 0.0;
  }

  Vec lambda_grad(const Vec& v) const {
    check(v);
    Vec g(d1_);
    switch (kind_) {
      case CumulantKind::Gaussian:
        return metric_ * v;
      case CumulantKind::UniformCube:
        for (int i = 0; i < d1_; ++i) g[i] = radius_ * detail::langevin(radius_ * v[i]);
        return g;
      case CumulantKind::Rademacher:
        for (int i = 0; i < d1_; ++i) g[i] = radius_ * std::tanh(radius_ * v[i]);
        return g;
      case CumulantKind::Sphere:
      case CumulantKind::UniformBall: {
        if (d1_ == 1) {
          g[0] = (kind_ == CumulantKind::Sphere)
                     ? radius_ * std::tanh(radius_ * v[0])
                     : radius_ * detail::langevin(radius_ * v[0]);
          return g;
        }
        const double n = v.norm();
        const auto c = detail::marginal_cgf(qexp(), radius_ * n);
        if (n < 1e-12) return Vec::Zero(d1_);
        return (radius_ * c.df / n) * v;
      }
    }
    return g;
  }

  Mat lambda_hess(const Vec& v) const {
    check(v);
    switch (kind_) {
      case CumulantKind::Gaussian:
        return metric_;
      case CumulantKind::UniformCube: {
        Vec d(d1_);
        for (int i = 0; i < d1_; ++i)
          d[i] = radius_ * radius_ * detail::langevin_deriv(radius_ * v[i]);
        return d.asDiagonal();
      }
      case CumulantKind::Rademacher: {
        Vec d(d1_);
        for (int i = 0; i < d1_; ++i) {
          const double t = std::tanh(radius_ * v[i]);
          d[i] = radius_ * radius_ * (1.0 - t * t);
        }
        return d.asDiagonal();
      }
      case CumulantKind::Sphere:
      case CumulantKind::UniformBall: {
        if (d1_ == 1) {
          Mat h(1, 1);
          if (kind_ == CumulantKind::Sphere) {
            const double t = std::tanh(radius_ * v[0]);
            h(0, 0) = radius_ * radius_ * (1.0 - t * t);
          } else {
            h(0, 0) = radius_ * radius_ * detail::langevin_deriv(radius_ * v[0]);
          }
          return h;
        }
        const double n = v.norm();
        const auto c = detail::marginal_cgf(qexp(), radius_ * n);
        if (n < 1e-8) return (radius_ * radius_ * c.ddf) * Mat::Identity(d1_, d1_);
        const Vec vh = v / n;
        return radius_ * radius_ * c.ddf * (vh * vh.transpose()) +
               (radius_ * c.df / n) * (Mat::Identity(d1_, d1_) - vh * vh.transpose());
      }
    }
    return Mat::Identity(d1_, d1_);
  }

  /// Effective domain of the conjugate: all of H only for the Gaussian.
  bool conjugate_domain_is_all() const { return kind_ == CumulantKind::Gaussian; }

  bool in_conjugate_domain(const Vec& u) const {
    check(u);
    switch (kind_) {
      case CumulantKind::Gaussian:
        return true;
      case CumulantKind::UniformCube:
        return u.cwiseAbs().maxCoeff() < radius_;
      case CumulantKind::Rademacher:
        return u.cwiseAbs().maxCoeff() <= radius_;
      case CumulantKind::Sphere:
        if (d1_ == 1) return std::abs(u[0]) <= radius_;
        return u.norm() < radius_;
      case CumulantKind::UniformBall:
        return u.norm() < radius_;
    }
    return false;
  }

  /// Closed-form conjugate where one exists.
  std::optional<double> conjugate_closed(const Vec& u) const {
    check(u);
    switch (kind_) {
      case CumulantKind::Gaussian:
        // sup_v v'Mu - (1/2)v'Mv is attained at v = u.
        return 0.5 * u.dot(metric_ * u);
      case CumulantKind::Rademacher: {
        double acc = 0.0;
        for (int i = 0; i < d1_; ++i) {
          acc += detail::binary_entropy_conjugate(u[i] / radius_);
          if (!std::isfinite(acc)) return kInf;
        }
        return acc;
      }
      case CumulantKind::Sphere:
        if (d1_ == 1) return detail::binary_entropy_conjugate(u[0] / radius_);
        return std::nullopt;
      default:
        return std::nullopt;
    }
  }

 private:
  CumulantModel(CumulantKind k, int d1, double radius)
      : kind_(k), d1_(d1), radius_(radius), metric_(Mat::Identity(d1, d1)) {
    if (d1 < 1) throw std::invalid_argument("cumulant model: dimension must be positive");
    if (!(radius > 0)) throw std::invalid_argument("cumulant model: radius must be positive");
  }
  void check(const Vec& v) const {
    if (v.size() != d1_) throw std::invalid_argument("cumulant model: dimension mismatch");
    if (!v.allFinite()) throw std::invalid_argument("cumulant model: non-finite argument");
  }
  int qexp() const { return kind_ == CumulantKind::Sphere ? d1_ - 2 : d1_; }

  CumulantKind kind_;
  int d1_;
  double radius_;
  Mat metric_;
};

// ---- Legendre transform ----

struct LegendreResult {
  double value = 0.0;
  Vec maximizer;        // v* attaining the sup (empty when value is +inf)
  bool converged = true;
  int iterations = 0;
};

struct LegendreFailure : std::runtime_error {
  double best_lower_bound;
  explicit LegendreFailure(double bound)
      : std::runtime_error("legendre ascent did not converge; best lower bound " +
                           std::to_string(bound)),
        best_lower_bound(bound) {}
};

/// L*(u) = sup_v <v,u>_H - Lambda(v) by damped Newton ascent, multi-start
/// from 0 and u, with closed-form bypass when available. The coordinate
/// gradient of L* is metric * maximizer (envelope theorem).
inline LegendreResult legendre_detail(const CumulantModel& model, const Vec& u) {
  LegendreResult best;
  if (!model.in_conjugate_domain(u)) {
    best.value = kInf;
    return best;
  }
  if (auto closed = model.conjugate_closed(u)) {
    best.value = *closed;
    if (std::isfinite(best.value)) {
      // Recover the maximizer for gradient consumers.
      if (model.kind() == CumulantKind::Gaussian) {
        best.maximizer = u;
      } else {  // rademacher / 1-d sphere: tanh(r v) = u/r
        best.maximizer = Vec(model.dim());
        for (int i = 0; i < model.dim(); ++i)
          best.maximizer[i] = std::atanh(u[i] / model.radius()) / model.radius();
      }
    }
    return best;
  }

  const Vec mu = model.metric() * u;  // pairing is the horizontal inner product
  auto phi = [&](const Vec& v) { return v.dot(mu) - model.lambda(v); };

  best.value = -kInf;
  const Vec starts[] = {Vec::Zero(model.dim()), u};
  for (const Vec& v0 : starts) {
    Vec v = v0;
    double f = phi(v);
    bool ok = false;
    int it = 0;
    for (; it < 300; ++it) {
      const Vec g = mu - model.lambda_grad(v);
      const double gnorm = g.norm();
      if (gnorm <= 1e-13 * (1.0 + std::abs(f))) {
        ok = true;
        break;
      }
      Mat H = model.lambda_hess(v);
      H.diagonal().array() += 1e-14;
      Vec step = H.ldlt().solve(g);
      if (!step.allFinite() || step.dot(g) <= 0.0) step = g;  // fall back to ascent dir
      double tau = 1.0;
      double fn = f;
      Vec vn = v;
      for (int ls = 0; ls < 60; ++ls) {
        vn = v + tau * step;
        fn = phi(vn);
        if (fn > f + 1e-4 * tau * step.dot(g)) break;
        tau *= 0.5;
      }
      if (fn <= f + 1e-18 * std::abs(f)) {
        ok = gnorm <= 1e-7 * (1.0 + std::abs(f));  // stalled: accept only if near-critical
        break;
      }
      v = vn;
      f = fn;
    }
    if (f > best.value) {
      best.value = f;
      best.maximizer = v;
      best.converged = ok;
      best.iterations = it;
    } else if (ok && std::abs(f - best.value) <= 1e-12 * (1.0 + std::abs(f))) {
      best.converged = true;
    }
  }
  if (best.value < 0.0 && best.value > -1e-12) best.value = 0.0;  // sup >= phi(0) = 0
  return best;
}

inline double legendre(const CumulantModel& model, const Vec& u) {
  const LegendreResult r = legendre_detail(model, u);
  if (!r.converged && std::isfinite(r.value)) throw LegendreFailure(r.value);
  return r.value;
}

/// I_m(u) = (1/m) sum_k L*(m u_k).
inline double discrete_rate(const CumulantModel& model, const std::vector<Vec>& u) {
  if (u.empty()) throw std::invalid_argument("discrete_rate: empty control");
  const double m = static_cast<double>(u.size());
  double acc = 0.0;
  for (const auto& uk : u) {
    acc += legendre(model, m * uk);
    if (!std::isfinite(acc)) return kInf;
  }
  return acc / m;
}

// ---- constrained minimization of I_m over the endpoint fiber ----

struct RateOptions {
  int restarts = 8;
  int penalty_rounds = 14;
  double penalty0 = 10.0;
  int inner_iterations = 400;
  double feasibility_tol = 1e-6;  // residual gate in the homogeneous norm
  double objective_rel_tol = 1e-9;
  std::uint64_t seed = 1;
  bool polish = true;
};

struct RateProblem {
  const CarnotGroup& group;
  CumulantModel model;
  GroupElement target;
  int m = 1;
  RateOptions options;

  void validate() const {
    if (m < 1) throw std::invalid_argument("rate problem: m must be >= 1");
    if (!target.x.allFinite())
      throw std::invalid_argument("rate problem: target coordinates must be finite");
    if (target.x.size() != group.dim())
      throw std::invalid_argument("rate problem: target dimension mismatch");
    if (model.dim() != group.horizontal_dim())
      throw std::invalid_argument("rate problem: model dimension mismatch");
  }
};

struct RestartDiagnostic {
  int restart = 0;
  double value = kInf;
  double residual = kInf;
  bool feasible = false;
  int penalty_rounds = 0;
  int inner_iterations = 0;
};

struct RateResult {
  double value = kInf;
  std::vector<Vec> u;
  double residual = kInf;  // |Psi_m(u)^{-1} * x|_G
  bool feasible = false;
  int m = 0;
  int best_restart = -1;
  std::vector<RestartDiagnostic> diagnostics;
};

namespace detail {

struct FoldTape {
  std::vector<Vec> states;  // z_0 = 0 .. z_m
};

inline FoldTape forward_fold(const CarnotGroup& g, const std::vector<Vec>& u) {
  FoldTape tape;
  Vec z = Vec::Zero(g.dim());
  tape.states.push_back(z);
  for (const auto& uk : u) {
    fold_step(g, z, uk);
    tape.states.push_back(z);
  }
  return tape;
}

/// Gradient of <seed, coords(Psi_m(u))> with respect to each u_k, by reverse
/// accumulation through the product.
inline std::vector<Vec> reverse_fold(const CarnotGroup& g, const FoldTape& tape,
                                     const std::vector<Vec>& u, const Vec& seed) {
  const int m = static_cast<int>(u.size());
  const int d1 = g.horizontal_dim();
  std::vector<Vec> grads(m);
  Vec w = seed;
  for (int k = m - 1; k >= 0; --k) {
    const auto [Ja, Jb] =
        multiply_jacobians(g, {tape.states[k]}, {embed_horizontal(g, u[k])});
    grads[k] = (Jb.transpose() * w).head(d1);
    w = Ja.transpose() * w;
  }
  return grads;
}

/// Endpoint Jacobian d coords(Psi_m(u)) / d u as an N x (m*d1) matrix.
inline Mat endpoint_jacobian(const CarnotGroup& g, const FoldTape& tape,
                             const std::vector<Vec>& u) {
  const int N = g.dim();
  const int d1 = g.horizontal_dim();
  const int m = static_cast<int>(u.size());
  Mat J(N, m * d1);
  for (int r = 0; r < N; ++r) {
    Vec seed = Vec::Zero(N);
    seed[r] = 1.0;
    const auto rows = reverse_fold(g, tape, u, seed);
    for (int k = 0; k < m; ++k) J.block(r, k * d1, 1, d1) = rows[k].transpose();
  }
  return J;
}

struct PenaltyEval {
  double objective = kInf;  // I_m + rho * ||c||^2
  double rate = kInf;
  double cnorm2 = kInf;
};

inline PenaltyEval eval_penalty(const CarnotGroup& g, const CumulantModel& model,
                                const GroupElement& x, const std::vector<Vec>& u, double rho,
                                std::vector<Vec>* grad_out) {
  const int m = static_cast<int>(u.size());
  const double md = static_cast<double>(m);
  PenaltyEval ev;
  double rate = 0.0;
  std::vector<Vec> conj_grads(m);
  for (int k = 0; k < m; ++k) {
    const LegendreResult lr = legendre_detail(model, md * u[k]);
    // Outside the conjugate domain, or at its boundary where the gradient
    // blows up: the penalty objective treats both as forbidden.
    if (!std::isfinite(lr.value) || (grad_out && !lr.maximizer.allFinite())) return ev;
    rate += lr.value / md;
    if (grad_out) conj_grads[k] = model.metric() * lr.maximizer;  // d L*/du at m u_k
  }
  ev.rate = rate;
  const FoldTape tape = forward_fold(g, u);
  const Vec c = tape.states.back() - x.x;
  ev.cnorm2 = c.squaredNorm();
  ev.objective = ev.rate + rho * ev.cnorm2;
  if (grad_out) {
    *grad_out = reverse_fold(g, tape, u, Vec(2.0 * rho * c));
    for (int k = 0; k < m; ++k) (*grad_out)[k] += conj_grads[k];
  }
  return ev;
}

inline double stack_norm(const std::vector<Vec>& g) {
  double acc = 0.0;
  for (const auto& v : g) acc += v.squaredNorm();
  return std::sqrt(acc);
}

/// Minimize rate + rho*||c||^2 by gradient descent with backtracking.
inline int descend(const CarnotGroup& g, const CumulantModel& model, const GroupElement& x,
                   std::vector<Vec>& u, double rho, const RateOptions& opt) {
  std::vector<Vec> grad;
  PenaltyEval ev = eval_penalty(g, model, x, u, rho, &grad);
  if (!std::isfinite(ev.objective)) return 0;
  double step = 1.0 / (1.0 + rho);
  int stall = 0;
  int it = 0;
  for (; it < opt.inner_iterations; ++it) {
    const double gnorm = stack_norm(grad);
    if (gnorm <= 1e-12 * (1.0 + std::abs(ev.objective))) break;
    std::vector<Vec> trial(u.size());
    double fn = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      for (size_t k = 0; k < u.size(); ++k) trial[k] = u[k] - step * grad[k];
      fn = eval_penalty(g, model, x, trial, rho, nullptr).objective;
      if (fn <= ev.objective - 1e-4 * step * gnorm * gnorm) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double rel = (ev.objective - fn) / (1.0 + std::abs(ev.objective));
    u = trial;
    ev = eval_penalty(g, model, x, u, rho, &grad);
    step *= 1.5;
    stall = (rel < opt.objective_rel_tol) ? stall + 1 : 0;
    if (stall >= 10) break;
  }
  return it;
}

/// Min-norm Gauss-Newton restoration of the endpoint constraint.
inline bool restore_feasibility(const CarnotGroup& g, const GroupElement& x,
                                std::vector<Vec>& u) {
  const int d1 = g.horizontal_dim();
  const int m = static_cast<int>(u.size());
  const double scale = 1.0 + x.x.cwiseAbs().maxCoeff();
  for (int it = 0; it < 60; ++it) {
    const FoldTape tape = forward_fold(g, u);
    const Vec c = tape.states.back() - x.x;
    if (c.cwiseAbs().maxCoeff() <= 1e-14 * scale) return true;
    const Mat J = endpoint_jacobian(g, tape, u);
    Mat JJt = J * J.transpose();
    JJt.diagonal().array() += 1e-14 * (1.0 + JJt.trace());
    const Vec y = JJt.ldlt().solve(c);
    const Vec delta = J.transpose() * y;
    double tau = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      std::vector<Vec> trial(m);
      for (int k = 0; k < m; ++k) trial[k] = u[k] - tau * delta.segment(k * d1, d1);
      const Vec cn = forward_fold(g, trial).states.back() - x.x;
      if (cn.norm() <= (1.0 - 0.25 * tau) * c.norm()) {
        u = trial;
        ok = true;
        break;
      }
      tau *= 0.5;
    }
    if (!ok) return false;
  }
  const Vec c = forward_fold(g, u).states.back() - x.x;
  return c.cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

/// Reduced-gradient descent along the endpoint-constraint manifold, restoring
/// feasibility after every step.
inline void polish_on_manifold(const CarnotGroup& g, const CumulantModel& model,
                               const GroupElement& x, std::vector<Vec>& u) {
  const int d1 = g.horizontal_dim();
  const int m = static_cast<int>(u.size());
  const double md = static_cast<double>(m);
  if (!restore_feasibility(g, x, u)) return;
  double value = kInf;
  {
    const PenaltyEval ev = eval_penalty(g, model, x, u, 0.0, nullptr);
    value = ev.rate;
  }
  double step = 0.1;
  for (int it = 0; it < 200; ++it) {
    std::vector<Vec> grad(m);
    bool domain_ok = true;
    for (int k = 0; k < m; ++k) {
      const LegendreResult lr = legendre_detail(model, md * u[k]);
      if (!std::isfinite(lr.value) || !lr.maximizer.allFinite()) {
        domain_ok = false;
        break;
      }
      grad[k] = model.metric() * lr.maximizer;
    }
    if (!domain_ok) return;
    const FoldTape tape = forward_fold(g, u);
    const Mat J = endpoint_jacobian(g, tape, u);
    Vec gs(m * d1);
    for (int k = 0; k < m; ++k) gs.segment(k * d1, d1) = grad[k];
    Mat JJt = J * J.transpose();
    JJt.diagonal().array() += 1e-14 * (1.0 + JJt.trace());
    const Vec proj = gs - J.transpose() * JJt.ldlt().solve(J * gs);
    const double pnorm = proj.norm();
    if (pnorm <= 1e-11 * (1.0 + std::abs(value))) break;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      std::vector<Vec> trial(m);
      for (int k = 0; k < m; ++k) trial[k] = u[k] - step * proj.segment(k * d1, d1);
      if (restore_feasibility(g, x, trial)) {
        const PenaltyEval ev = eval_penalty(g, model, x, trial, 0.0, nullptr);
        if (std::isfinite(ev.rate) && ev.rate < value - 1e-15) {
          u = trial;
          value = ev.rate;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    step *= 1.5;
  }
  restore_feasibility(g, x, u);
}

}  // namespace detail

/// J_m(x): quadratic-penalty multi-start minimization of I_m over controls
/// whose product endpoint is x, followed by a feasibility polish.
inline RateResult minimize_rate(const RateProblem& problem) {
  problem.validate();
  const CarnotGroup& g = problem.group;
  const CumulantModel& model = problem.model;
  const GroupElement& x = problem.target;
  const int m = problem.m;
  const int d1 = g.horizontal_dim();
  const RateOptions& opt = problem.options;

  RateResult best;
  best.m = m;
  const double target_size = std::max(0.5, homogeneous_norm(g, x));

  for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
    std::vector<Vec> u(m, Vec::Zero(d1));
    if (restart == 1) {
      const Vec h = horizontal_log(g, x) / static_cast<double>(m);
      for (auto& uk : u) uk = h;
    } else if (restart >= 2) {
      RngStream rng(opt.seed, stream_id(1, static_cast<std::uint32_t>(restart), 0));
      const double s = 3.0 * target_size / m;
      for (auto& uk : u) {
        uk = Vec(d1);
        for (int i = 0; i < d1; ++i) uk[i] = rng.uniform(-s, s);
      }
    }
    if (!model.conjugate_domain_is_all()) {
      // Pull the initial controls strictly inside the conjugate domain; the
      // Euclidean norm bound covers both the box and the ball domains.
      const double lim = 0.9 * model.radius() / m;
      for (auto& uk : u) {
        const double a = uk.norm();
        if (a > lim) uk *= lim / a;
      }
    }

    RestartDiagnostic diag;
    diag.restart = restart;
    double rho = opt.penalty0;
    for (int round = 0; round < opt.penalty_rounds; ++round) {
      diag.inner_iterations += detail::descend(g, model, x, u, rho, opt);
      ++diag.penalty_rounds;
      const GroupElement end = endpoint_product(g, u);
      if (element_gap(g, end, x) <= opt.feasibility_tol && round >= 1) break;
      rho *= 10.0;
    }
    if (opt.polish) detail::polish_on_manifold(g, model, x, u);

    const GroupElement end = endpoint_product(g, u);
    diag.residual = element_gap(g, end, x);
    const detail::PenaltyEval ev = detail::eval_penalty(g, model, x, u, 0.0, nullptr);
    diag.value = ev.rate;
    diag.feasible = diag.residual <= opt.feasibility_tol && std::isfinite(diag.value);

    bool better;
    if (diag.feasible != best.feasible)
      better = diag.feasible;
    else if (diag.feasible)
      better = diag.value < best.value;
    else
      better = diag.residual < best.residual;
    if (better) {
      best.value = diag.value;
      best.u = u;
      best.residual = diag.residual;
      best.feasible = diag.feasible;
      best.best_restart = restart;
    }
    best.diagnostics.push_back(diag);
  }
  if (best.feasible && best.value < 0.0 && best.value > -1e-12) best.value = 0.0;
  return best;
}

inline RateResult minimize_rate(const CarnotGroup& g, const CumulantModel& model,
                                const GroupElement& x, int m, RateOptions opt = {}) {
  return minimize_rate(RateProblem{g, model, x, m, opt});
}

// ---- the m -> infinity limit and the CC distance ----

struct RateCurvePoint {
  int m = 0;
  RateResult result;
};

struct RateCurve {
  std::vector<RateCurvePoint> points;
  double j_estimate = kInf;  // min over the schedule: J(x) <= J_m(x) for all m
  bool monotone = true;
  std::string warning;
};

inline RateCurve rate_limit(const CarnotGroup& g, const CumulantModel& model,
                            const GroupElement& x, const std::vector<int>& m_schedule,
                            RateOptions opt = {}) {
  if (m_schedule.empty()) throw std::invalid_argument("rate_limit: empty schedule");
  for (size_t i = 1; i < m_schedule.size(); ++i)
    if (m_schedule[i] <= m_schedule[i - 1])
      throw std::invalid_argument("rate_limit: schedule must be increasing");
  RateCurve curve;
  double prev = kInf;
  for (int m : m_schedule) {
    RateCurvePoint p;
    p.m = m;
    p.result = minimize_rate(g, model, x, m, opt);
    if (p.result.feasible) {
      curve.j_estimate = std::min(curve.j_estimate, p.result.value);
      if (p.result.value > prev + 1e-4) {
        curve.monotone = false;
        curve.warning = "J_m increased along the schedule beyond optimizer noise at m = " +
                        std::to_string(m);
      }
      prev = p.result.value;
    }
    curve.points.push_back(std::move(p));
  }
  return curve;
}

/// d_cc(e, x) = sqrt(2 J_m(x)) with the Gaussian model in the group's metric.
inline double cc_distance(const CarnotGroup& g, const GroupElement& x, int m = 64,
                          int restarts = 8, std::uint64_t seed = 1) {
  RateOptions opt;
  opt.restarts = restarts;
  opt.seed = seed;
  const RateResult r =
      minimize_rate(g, CumulantModel::gaussian(g.horizontal_dim(), g.horizontal_metric()), x,
                    m, opt);
  if (!r.feasible)
    throw std::runtime_error("cc_distance: optimizer found no feasible control; best residual " +
                             std::to_string(r.residual));
  return std::sqrt(2.0 * std::max(0.0, r.value));
}

// ---- serialization ----

inline nlohmann::json rate_result_to_json(const RateResult& r) {
  nlohmann::json j;
  j["value"] = r.value;
  j["residual"] = r.residual;
  j["feasible"] = r.feasible;
  j["m"] = r.m;
  auto& ctrl = j["control"] = nlohmann::json::array();
  for (const auto& uk : r.u) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < uk.size(); ++i) row.push_back(uk[i]);
    ctrl.push_back(row);
  }
  auto& diag = j["diagnostics"] = nlohmann::json::array();
  for (const auto& d : r.diagnostics)
    diag.push_back({{"restart", d.restart},
                    {"value", d.value},
                    {"residual", d.residual},
                    {"feasible", d.feasible},
                    {"penalty_rounds", d.penalty_rounds},
                    {"inner_iterations", d.inner_iterations}});
  j["best_restart"] = r.best_restart;
  return j;
}

}  // namespace carnot
