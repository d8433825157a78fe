#pragma once

// Sub-exponential tail bookkeeping and the window-sum diagnostics: the skew
// window matrix, its two Hilbert-Schmidt norm formulas (the direct count and
// the off-by-one variant, which disagree and are both reported), the window
// symplectic form under each summation convention, and an empirical MGF
// curvature check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "carnotwalk/group.hpp"
#include "carnotwalk/rng.hpp"

namespace carnot {

/// Bernstein-style sub-exponential parameters: the tail bound uses nu^2 for
/// the Gaussian regime and alpha for the linear regime.
struct SubExpParams {
  double nu2 = 0.0;
  double alpha = 0.0;
};

/// Combines component parameters for a sum. Independent summands add
/// variance proxies; dependent summands can only be triangle-bounded, so the
/// nu values themselves add. Either way alpha takes the max. The combine is
/// exact in floating point for integer inputs and order-insensitive.
inline SubExpParams combine_subexp(const std::vector<SubExpParams>& parts,
                                   bool independent) {
  SubExpParams out;
  if (independent) {
    for (const auto& p : parts) {
      out.nu2 += p.nu2;
      out.alpha = std::max(out.alpha, p.alpha);
    }
    return out;
  }
  double nu_sum = 0.0;
  for (const auto& p : parts) {
    nu_sum += std::sqrt(p.nu2);
    out.alpha = std::max(out.alpha, p.alpha);
  }
  out.nu2 = nu_sum * nu_sum;
  return out;
}

/// n x n skew matrix with a_ij = 1 for k+1 <= i < j <= l (1-based), a_ji = -1.
inline Mat window_matrix(int k, int l, int n) {
  if (!(0 <= k && k < l && l <= n))
    throw std::invalid_argument("window_matrix: need 0 <= k < l <= n");
  Mat A = Mat::Zero(n, n);
  for (int i = k + 1; i <= l; ++i)
    for (int j = i + 1; j <= l; ++j) {
      A(i - 1, j - 1) = 1.0;
      A(j - 1, i - 1) = -1.0;
    }
  return A;
}

struct WindowNorms {
  /// Hilbert-Schmidt norm by direct entry count: sqrt((l-k)(l-k-1)).
  double hs = 0.0;
  /// The off-by-one closed form sqrt((l-k+1)(l-k)); disagrees with the
  /// direct count for every window and is reported alongside it.
  double hs_variant = 0.0;
  /// Operator norm bound l-k (exceeds the true largest singular value).
  double op_bound = 0.0;
  std::uint64_t nonzero_upper = 0;  // entries strictly above the diagonal
};

inline WindowNorms window_matrix_norms(int k, int l) {
  if (!(0 <= k && k < l))
    throw std::invalid_argument("window_matrix_norms: need 0 <= k < l");
  const std::uint64_t w = static_cast<std::uint64_t>(l - k);
  WindowNorms out;
  out.nonzero_upper = w * (w - 1) / 2;
  out.hs = std::sqrt(static_cast<double>(2 * out.nonzero_upper));
  out.hs_variant = std::sqrt(static_cast<double>((w + 1) * w));
  out.op_bound = static_cast<double>(w);
  return out;
}

/// Largest singular value estimate by power iteration on A^T A.
inline double operator_norm_estimate(const Mat& A, int iters = 200,
                                     std::uint64_t seed = 1) {
  if (A.rows() == 0) return 0.0;
  RngStream rng(seed, stream_id(5, 0, 0));
  Vec v(A.cols());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.gaussian();
  v.normalize();
  double s = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec w = A * v;
    s = w.norm();
    if (s == 0.0) return 0.0;
    v = A.transpose() * w;
    const double n = v.norm();
    if (n == 0.0) return s;
    v /= n;
  }
  return s;
}

/// Summation conventions for the window form; the source material writes all
/// three without marking which is meant, so no intent is guessed here.
enum class WindowConvention {
  PrefixPair,     // omega(sum_{i<=k} v_i, sum_{j<=l} v_j)
  UpperTriangle,  // sum_{i=1..k} sum_{j=i+1..l} omega(v_i, v_j)
  StrictWindow,   // sum_{i=k+1..l} sum_{j=i+1..l} omega(v_i, v_j)
};

inline const char* window_convention_name(WindowConvention c) {
  switch (c) {
    case WindowConvention::PrefixPair: return "prefix_pair";
    case WindowConvention::UpperTriangle: return "upper_triangle";
    case WindowConvention::StrictWindow: return "strict_window";
  }
  return "?";
}

/// omega((a,b),(c,d)) = a*d - b*c.
inline double symplectic2(const Vec& u, const Vec& v) {
  return u[0] * v[1] - u[1] * v[0];
}

/// Window form W_{k,l} of planar values v_1..v_n under the chosen
/// convention. Indices are 1-based to match the matrix definition.
inline double window_form(const std::vector<Vec>& values, int k, int l,
                          WindowConvention conv) {
  const int n = static_cast<int>(values.size());
  if (!(0 <= k && k < l && l <= n))
    throw std::invalid_argument("window_form: need 0 <= k < l <= n");
  for (const Vec& v : values)
    if (v.size() != 2) throw std::invalid_argument("window_form: values must be planar");
  switch (conv) {
    case WindowConvention::PrefixPair: {
      Vec pk = Vec::Zero(2), pl = Vec::Zero(2);
      for (int i = 0; i < k; ++i) pk += values[static_cast<std::size_t>(i)];
      for (int j = 0; j < l; ++j) pl += values[static_cast<std::size_t>(j)];
      return symplectic2(pk, pl);
    }
    case WindowConvention::UpperTriangle: {
      double s = 0.0;
      for (int i = 1; i <= k; ++i)
        for (int j = i + 1; j <= l; ++j)
          s += symplectic2(values[static_cast<std::size_t>(i - 1)],
                           values[static_cast<std::size_t>(j - 1)]);
      return s;
    }
    case WindowConvention::StrictWindow: {
      double s = 0.0;
      for (int i = k + 1; i <= l; ++i)
        for (int j = i + 1; j <= l; ++j)
          s += symplectic2(values[static_cast<std::size_t>(i - 1)],
                           values[static_cast<std::size_t>(j - 1)]);
      return s;
    }
  }
  throw std::logic_error("unknown window convention");
}

/// Dual evaluation of the StrictWindow form as x^T A y with A the window
/// matrix, x the first and y the second coordinate sequence.
inline double window_form_via_matrix(const std::vector<Vec>& values, int k, int l) {
  const int n = static_cast<int>(values.size());
  const Mat A = window_matrix(k, l, n);
  Vec x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = values[static_cast<std::size_t>(i)][0];
    y[i] = values[static_cast<std::size_t>(i)][1];
  }
  return x.dot(A * y);
}

struct MgfPoint {
  double lambda = 0.0;
  double mgf = std::numeric_limits<double>::quiet_NaN();
  double log_mgf = std::numeric_limits<double>::quiet_NaN();
  bool pruned = false;  // exponent overflow risk: point reported but unused
};

struct MgfCheck {
  int k = 0;
  int l = 0;
  std::uint64_t trials = 0;
  std::vector<MgfPoint> points;
  /// max over unpruned lambda != 0 of log E[exp(lambda W)] / lambda^2; the
  /// sub-exponential bound predicts this scales like (l-k)^2.
  double curvature = 0.0;
  int pruned_points = 0;
};

/// Empirical MGF of the StrictWindow form with iid standard Gaussian planar
/// steps, on a symmetric lambda grid. Points whose exponent could overflow
/// are pruned with a notice. Per-trial streams keep the estimate
/// deterministic for any thread count.
inline MgfCheck mgf_bound_check(int k, int l, const std::vector<double>& lambdas,
                                std::uint64_t trials, std::uint64_t seed) {
  if (!(0 <= k && k < l)) throw std::invalid_argument("mgf_bound_check: need 0 <= k < l");
  if (trials < 1) throw std::invalid_argument("mgf_bound_check: trials must be >= 1");
  MgfCheck out;
  out.k = k;
  out.l = l;
  out.trials = trials;

  std::vector<double> w(trials);
  std::vector<Vec> values(static_cast<std::size_t>(l), Vec(2));
  for (std::uint64_t t = 0; t < trials; ++t) {
    RngStream rng(seed, stream_id(5, 1, t));
    for (int i = 0; i < l; ++i) {
      values[static_cast<std::size_t>(i)][0] = rng.gaussian();
      values[static_cast<std::size_t>(i)][1] = rng.gaussian();
    }
    w[t] = window_form(values, k, l, WindowConvention::StrictWindow);
  }
  double wmax = 0.0;
  for (double v : w) wmax = std::max(wmax, std::abs(v));

  for (double lam : lambdas) {
    MgfPoint pt;
    pt.lambda = lam;
    if (std::abs(lam) * wmax > 700.0) {
      pt.pruned = true;
      ++out.pruned_points;
      out.points.push_back(pt);
      continue;
    }
    double s = 0.0;
    for (double v : w) s += std::exp(lam * v);
    pt.mgf = s / static_cast<double>(trials);
    pt.log_mgf = std::log(pt.mgf);
    out.points.push_back(pt);
    if (lam != 0.0)
      out.curvature = std::max(out.curvature, pt.log_mgf / (lam * lam));
  }
  return out;
}

}  // namespace carnot
