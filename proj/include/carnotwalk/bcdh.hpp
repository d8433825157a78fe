#pragma once

// Truncated group product via the explicit commutator expansion
//
//   log(e^X e^Y) = X + Y
//     + sum_{k>=1} sum_{(n,m)} a^k_{n,m} ad_X^{n_1} ad_Y^{m_1} ... ad_X^{n_k} ad_Y^{m_k} X,
//   a^k_{n,m} = (-1)^k / ((k+1) m! n! (|n|+1)),  n_i + m_i > 0,
//
// with every term of bracket order >= step+1 dropped (nilpotency). The
// coefficient table is assembled once per step in exact rational arithmetic
// and cached. The same enumeration yields the left-translation pushforward
//
//   (L_x)_* v = sum_{p=0}^{r-1} A_p ad_x^p v,
//
// whose coefficients match the Bernoulli generating function z/(1-e^{-z}).

#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "carnotwalk/group.hpp"

namespace carnot {

namespace detail {

struct Rational {
  long long num = 0, den = 1;
  void add(long long n, long long d) {
    num = num * d + n * den;
    den *= d;
    reduce();
  }
  void reduce() {
    if (num == 0) {
      den = 1;
      return;
    }
    long long g = std::gcd(num < 0 ? -num : num, den);
    num /= g;
    den /= g;
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline long long factorial(int n) {
  long long f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace detail

/// Operator tags for a commutator word applied to X, rightmost first.
enum : std::uint8_t { kAdX = 0, kAdY = 1 };

struct BcdhTable {
  struct Term {
    long long num = 0, den = 1;  // exact coefficient after merging equal words
    double coeff = 0.0;
    std::vector<std::uint8_t> ops;  // word; eval = ops applied right-to-left to X
  };

  int step = 0;
  std::vector<Term> terms;  // bracket order >= 2 (the linear X + Y part is implicit)
  std::vector<double> pushforward;  // A_p, p = 0..step-1
  std::vector<std::pair<long long, long long>> pushforward_exact;

  /// Cached table for 1 <= step <= 6.
  static const BcdhTable& get(int step) {
    if (step < 1 || step > 6)
      throw std::invalid_argument("bcdh table supports step 1..6, got " + std::to_string(step));
    static const std::vector<BcdhTable> tables = [] {
      std::vector<BcdhTable> all;
      for (int r = 1; r <= 6; ++r) all.push_back(build(r));
      return all;
    }();
    return tables[step - 1];
  }

 private:
  static BcdhTable build(int r) {
    BcdhTable t;
    t.step = r;
    std::vector<detail::Rational> push(r);
    push[0] = {1, 1};
    std::map<std::vector<std::uint8_t>, detail::Rational> merged;

    // One (n, m) block per outer index k; positions filled left to right.
    std::vector<int> ns, ms;
    for (int k = 1; k <= r - 1; ++k) {
      ns.assign(k, 0);
      ms.assign(k, 0);
      enumerate(r, k, 0, 0, ns, ms, merged, push);
    }

    for (auto& [ops, coef] : merged) {
      if (coef.num == 0) continue;
      t.terms.push_back({coef.num, coef.den, coef.value(), ops});
    }
    for (auto& p : push) {
      t.pushforward.push_back(p.value());
      t.pushforward_exact.emplace_back(p.num, p.den);
    }
    return t;
  }

  static void enumerate(int r, int k, int pos, int order,
                        std::vector<int>& ns, std::vector<int>& ms,
                        std::map<std::vector<std::uint8_t>, detail::Rational>& merged,
                        std::vector<detail::Rational>& push) {
    if (pos == k) {
      emit(r, k, ns, ms, merged, push);
      return;
    }
    // order counts |n|+|m| so far; total must stay <= r-1.
    for (int ni = 0; order + ni <= r - 1; ++ni) {
      for (int mi = (ni == 0 ? 1 : 0); order + ni + mi <= r - 1; ++mi) {
        ns[pos] = ni;
        ms[pos] = mi;
        enumerate(r, k, pos + 1, order + ni + mi, ns, ms, merged, push);
      }
    }
    ns[pos] = ms[pos] = 0;
  }

  static void emit(int r, int k, const std::vector<int>& ns, const std::vector<int>& ms,
                   std::map<std::vector<std::uint8_t>, detail::Rational>& merged,
                   std::vector<detail::Rational>& push) {
    // Words ending in ad_X X vanish identically.
    if (ms[k - 1] == 0 && ns[k - 1] > 0) return;

    long long absn = 0, absm = 0, den = k + 1;
    for (int i = 0; i < k; ++i) {
      absn += ns[i];
      absm += ms[i];
      den *= detail::factorial(ns[i]) * detail::factorial(ms[i]);
    }
    den *= absn + 1;
    const long long num = (k % 2 == 0) ? 1 : -1;

    std::vector<std::uint8_t> ops;
    for (int i = 0; i < k; ++i) {
      ops.insert(ops.end(), ns[i], kAdX);
      ops.insert(ops.end(), ms[i], kAdY);
    }
    merged[ops].add(num, den);

    // Pushforward block: single Y placed at the innermost slot.
    if (absm == 1 && ms[k - 1] == 1) push[absn + 1].add(-num, den);
  }
};

// ---- products ----

/// Full truncated product in log coordinates; valid for any step <= 6.
inline Vec bcdh(const CarnotGroup& g, const Vec& X, const Vec& Y) {
  const BcdhTable& t = BcdhTable::get(g.step());
  Vec out = X + Y;
  Vec w;
  for (const auto& term : t.terms) {
    w = X;
    for (auto it = term.ops.rbegin(); it != term.ops.rend(); ++it)
      w = g.bracket(*it == kAdX ? X : Y, w);
    out.noalias() += term.coeff * w;
  }
  return out;
}

/// Closed-form product for step <= 2 (layer 2 gains x^T A_j y).
inline GroupElement step2_multiply(const CarnotGroup& g, const GroupElement& a,
                                   const GroupElement& b) {
  if (g.step() > 2) throw std::logic_error("step2_multiply requires a group of step <= 2");
  Vec out = a.x + b.x;
  const int d1 = g.horizontal_dim();
  const auto& forms = g.step2_forms();
  for (size_t j = 0; j < forms.size(); ++j)
    out[d1 + j] += a.x.head(d1).dot(forms[j] * b.x.head(d1));
  return {out};
}

/// Group product; dispatches to the cheapest exact evaluation.
inline GroupElement multiply(const CarnotGroup& g, const GroupElement& a, const GroupElement& b) {
  if (g.step() == 1) return {a.x + b.x};
  if (g.step() == 2) return step2_multiply(g, a, b);
  return {bcdh(g, a.x, b.x)};
}

/// Homogeneous norm of a^{-1} * b. Bitwise-equal coordinate vectors denote
/// the same group element, so the gap is zero by definition; resolving it
/// through the product would square-root layer roundoff instead.
inline double element_gap(const CarnotGroup& g, const GroupElement& a, const GroupElement& b) {
  if ((a.x.array() == b.x.array()).all()) return 0.0;
  return homogeneous_norm(g, multiply(g, inverse(g, a), b));
}

/// x * exp(h) with horizontal h, accumulated in place. The walk hot path.
inline void fold_step(const CarnotGroup& g, Vec& acc, const Vec& h) {
  const int d1 = g.horizontal_dim();
  switch (g.step()) {
    case 1:
      acc.head(d1) += h;
      return;
    case 2: {
      // Explicit loops: keeps the walk hot path free of Eigen temporaries.
      const auto& forms = g.step2_forms();
      for (size_t j = 0; j < forms.size(); ++j) {
        const Mat& A = forms[j];
        double s = 0.0;
        for (int a = 0; a < d1; ++a) {
          double row = 0.0;
          for (int b = 0; b < d1; ++b) row += A(a, b) * h[b];
          s += acc[a] * row;
        }
        acc[d1 + j] += s;
      }
      acc.head(d1) += h;
      return;
    }
    default:
      acc = bcdh(g, acc, embed_horizontal(g, h));
  }
}

/// Left-translation pushforward of a tangent vector at the identity.
inline Vec left_pushforward(const CarnotGroup& g, const GroupElement& x, const Vec& v) {
  const BcdhTable& t = BcdhTable::get(g.step());
  Vec out = v;
  Vec w = v;
  for (int p = 1; p < g.step(); ++p) {
    w = g.bracket(x.x, w);
    if (t.pushforward[p] != 0.0) out.noalias() += t.pushforward[p] * w;
  }
  return out;
}

// ---- derivatives of the product ----

namespace detail {

// d(word)/d(side) in direction e_c, exact by multilinearity: sum over
// occurrences of that side with the occurrence replaced by the direction.
inline Vec word_derivative(const CarnotGroup& g, const std::vector<std::uint8_t>& ops,
                           const Vec& X, const Vec& Y, std::uint8_t side, const Vec& dir) {
  const int L = static_cast<int>(ops.size());
  Vec total = Vec::Zero(g.dim());
  // Slot L is the trailing X operand; slots 0..L-1 are the word operators.
  for (int sub = 0; sub <= L; ++sub) {
    const bool slot_is_side = (sub == L) ? (side == kAdX) : (ops[sub] == side);
    if (!slot_is_side) continue;
    Vec w = (sub == L) ? dir : X;
    for (int i = L - 1; i >= 0; --i) {
      const Vec& op = (i == sub) ? dir : (ops[i] == kAdX ? X : Y);
      w = g.bracket(op, w);
    }
    total += w;
  }
  return total;
}

}  // namespace detail

/// Jacobians (d(a*b)/da, d(a*b)/db) of the product at (a, b).
inline std::pair<Mat, Mat> multiply_jacobians(const CarnotGroup& g, const GroupElement& a,
                                              const GroupElement& b) {
  const int N = g.dim();
  Mat Ja = Mat::Identity(N, N), Jb = Mat::Identity(N, N);
  if (g.step() == 1) return {Ja, Jb};
  if (g.step() == 2) {
    const int d1 = g.horizontal_dim();
    const auto& forms = g.step2_forms();
    for (size_t j = 0; j < forms.size(); ++j) {
      Ja.row(d1 + j).head(d1) += (forms[j] * b.x.head(d1)).transpose();
      Jb.row(d1 + j).head(d1) += a.x.head(d1).transpose() * forms[j];
    }
    return {Ja, Jb};
  }
  const BcdhTable& t = BcdhTable::get(g.step());
  for (int c = 0; c < N; ++c) {
    const Vec ec = Vec::Unit(N, c);
    for (const auto& term : t.terms) {
      Ja.col(c).noalias() += term.coeff * detail::word_derivative(g, term.ops, a.x, b.x, kAdX, ec);
      Jb.col(c).noalias() += term.coeff * detail::word_derivative(g, term.ops, a.x, b.x, kAdY, ec);
    }
  }
  return {Ja, Jb};
}

}  // namespace carnot
