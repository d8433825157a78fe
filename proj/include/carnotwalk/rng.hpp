#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every Monte Carlo trial draws from its own stream, keyed by (seed, stream
// id). Stream state never depends on which thread runs the trial, so results
// are identical for any thread count and any work partition.

#include <array>
#include <cmath>
#include <cstdint>

namespace carnot {

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& c, std::array<std::uint32_t, 2>& k) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  k[0] += 0x9E3779B9u;
  k[1] += 0xBB67AE85u;
}

inline std::array<std::uint32_t, 4> philox10(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) philox_round(ctr, key);
  return ctr;
}

}  // namespace detail

/// Packs (tag, series, trial) into a unique 64-bit stream id.
/// tag < 2^8 distinguishes subsystems, series < 2^16 schedule entries,
/// trial < 2^40 Monte Carlo trials.
constexpr std::uint64_t stream_id(std::uint64_t tag, std::uint64_t series, std::uint64_t trial) {
  return (tag << 56) | (series << 40) | trial;
}

/// One independent random stream. Cheap to construct per trial.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  std::uint64_t next_u64() {
    if (have_block_) {
      have_block_ = false;
      return static_cast<std::uint64_t>(block_[2]) | (static_cast<std::uint64_t>(block_[3]) << 32);
    }
    block_ = detail::philox10({static_cast<std::uint32_t>(counter_),
                               static_cast<std::uint32_t>(counter_ >> 32),
                               static_cast<std::uint32_t>(stream_),
                               static_cast<std::uint32_t>(stream_ >> 32)},
                              key_);
    ++counter_;
    have_block_ = true;
    return static_cast<std::uint64_t>(block_[0]) | (static_cast<std::uint64_t>(block_[1]) << 32);
  }

  /// Uniform on [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  /// Standard normal via Marsaglia polar; one spare value cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  /// Random sign, +1 or -1.
  double rademacher() { return (next_u64() & 1u) ? 1.0 : -1.0; }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  bool have_block_ = false;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace carnot
