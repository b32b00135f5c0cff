#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every output
// is a pure function of (key, counter), so a draw can be addressed by the
// indices it belongs to and parallel schedules cannot change results.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace gali {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  static constexpr Key key_from_seed(std::uint64_t seed) noexcept {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
};

/// Uniform double in (0, 1] from two 32-bit words (53 significant bits).
inline double uniform_open0(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

/// Standard normal draw addressed by (seed, counter); Box-Muller on one block.
inline double normal_at(std::uint64_t seed, const Philox4x32::Counter& ctr) noexcept {
  const auto r = Philox4x32::generate(ctr, Philox4x32::key_from_seed(seed));
  const double u1 = uniform_open0(r[0], r[1]);
  const double u2 = uniform_open0(r[2], r[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential stream over Philox blocks; used for seeded weight init and
/// synthetic inputs.
class PhiloxStream {
 public:
  explicit PhiloxStream(std::uint64_t seed, std::uint32_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  double normal() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index_),
                                  static_cast<std::uint32_t>(index_ >> 32), stream_,
                                  0x5EED0001u};
    ++index_;
    return normal_at(seed_, ctr);
  }

  /// Uniform double in (0, 1].
  double uniform() noexcept {
    const auto r = next_block();
    return uniform_open0(r[0], r[1]);
  }

  /// Uniform integer in [0, n) (n ≥ 1); modulo bias is negligible at the
  /// sizes used here.
  std::uint64_t below(std::uint64_t n) noexcept {
    const auto r = next_block();
    return ((std::uint64_t{r[0]} << 32) | r[1]) % n;
  }

 private:
  Philox4x32::Counter next_block() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index_),
                                  static_cast<std::uint32_t>(index_ >> 32), stream_,
                                  0x5EED0002u};
    ++index_;
    return Philox4x32::generate(ctr, Philox4x32::key_from_seed(seed_));
  }

  std::uint64_t seed_;
  std::uint32_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace gali
