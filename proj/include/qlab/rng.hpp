#pragma once

#include <cmath>
#include <cstdint>

namespace qlab {

/// Counter-based generator: output k of stream (seed, stream) is
/// mix64(key + k * golden) with the SplitMix64 finalizer.  Any draw is a pure
/// function of (seed, stream, counter), so replicate streams are independent
/// and merge order never affects the numbers drawn.
class counter_rng {
 public:
  explicit counter_rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632b'e59b'd9b4'e019ULL))), counter_(0) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * golden); }

  /// Uniform on (0,1), never exactly 0 or 1.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; pairs are drawn eagerly so the draw
  /// count per call is constant (determinism across call sites).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double next_exponential() { return -std::log(next_uniform()); }

  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t golden = 0x9e37'79b9'7f4a'7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58'476d'1ce4'e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d0'49bb'1331'11ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qlab
