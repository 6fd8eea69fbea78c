#pragma once

#include <cmath>
#include <cstdint>

namespace manyiv {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based Philox4x32-10 generator.
///
/// The stream key is derived from (seed, stream), so substreams indexed by a
/// replication number or a grid cell are mutually independent. The 64-bit
/// block counter can be set directly, which lets Monte Carlo loops address
/// draw i without generating draws 0..i-1. Results therefore do not depend on
/// how replications are distributed over threads.
class CounterRng {
public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t key =
        detail::splitmix64(detail::splitmix64(seed) ^
                           (stream * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL));
    key0_ = static_cast<std::uint32_t>(key);
    key1_ = static_cast<std::uint32_t>(key >> 32);
    jump_to_block(0);
  }

  /// Positions the generator at the start of 128-bit output block `block`.
  /// One block yields four 32-bit words = two uniform doubles = one
  /// Box-Muller pair of normals.
  void jump_to_block(std::uint64_t block) {
    counter_ = block;
    pos_ = 4;
    have_spare_normal_ = false;
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  /// Uniform draw on the open interval (0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  /// Standard normal via Box-Muller; consumes one uniform pair per two calls.
  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_normal_ = r * std::sin(theta);
    have_spare_normal_ = true;
    return r * std::cos(theta);
  }

private:
  void refill() {
    std::uint32_t c0 = static_cast<std::uint32_t>(counter_);
    std::uint32_t c1 = static_cast<std::uint32_t>(counter_ >> 32);
    std::uint32_t c2 = 0;
    std::uint32_t c3 = 0;
    std::uint32_t k0 = key0_;
    std::uint32_t k1 = key1_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = 0xD2511F53ULL * c0;
      const std::uint64_t p1 = 0xCD9E8D57ULL * c2;
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      const std::uint32_t n0 = hi1 ^ c1 ^ k0;
      const std::uint32_t n1 = lo1;
      const std::uint32_t n2 = hi0 ^ c3 ^ k1;
      const std::uint32_t n3 = lo0;
      c0 = n0;
      c1 = n1;
      c2 = n2;
      c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    buffer_[0] = c0;
    buffer_[1] = c1;
    buffer_[2] = c2;
    buffer_[3] = c3;
    ++counter_;
    pos_ = 0;
  }

  std::uint32_t key0_ = 0;
  std::uint32_t key1_ = 0;
  std::uint64_t counter_ = 0;
  std::uint32_t buffer_[4] = {0, 0, 0, 0};
  int pos_ = 4;
  bool have_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace manyiv
