#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace mvlab {

// Philox4x32-10 counter-based generator. A draw is a pure function of
// (seed, stream, particle, step, block), so simulations are reproducible
// independently of how particles are scheduled across threads.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

// Named noise streams. Each independent source of randomness in the
// library draws from its own stream so that, e.g., the initial law and the
// Brownian increments of one run never alias.
enum class Stream : std::uint32_t {
  kInitial = 1,
  kBrownian = 2,
  kDecoupled = 3,
  kRestart = 4,
  kCouplingReflected = 5,
  kCouplingShared = 6,
  kCouplingResidual = 7,
  kRegressionCloud = 8,
  kAudit = 9,
  kControl = 10,
  kMisc = 11,
};

// Deterministic address of one block of random numbers.
struct NoiseAddress {
  std::uint64_t seed = 0;
  Stream stream = Stream::kBrownian;
  std::uint64_t particle = 0;
  std::uint64_t step = 0;
};

namespace detail {

inline Philox4x32::Counter raw_block(const NoiseAddress& a, std::uint32_t block) {
  const Philox4x32::Counter ctr{
      static_cast<std::uint32_t>(a.step),
      static_cast<std::uint32_t>(a.particle),
      static_cast<std::uint32_t>(a.stream) ^ (static_cast<std::uint32_t>(a.step >> 32) << 8),
      block ^ (static_cast<std::uint32_t>(a.particle >> 32) << 16)};
  const Philox4x32::Key key{static_cast<std::uint32_t>(a.seed),
                            static_cast<std::uint32_t>(a.seed >> 32)};
  return Philox4x32::block(ctr, key);
}

// Maps a 32-bit word to (0, 1), never hitting either endpoint.
inline double to_open_unit(std::uint32_t w) {
  return (static_cast<double>(w) + 0.5) * 0x1p-32;
}

}  // namespace detail

// Fills `out` with independent standard normals (Box-Muller on Philox words).
inline void gaussian_block(const NoiseAddress& address, std::span<double> out) {
  std::uint32_t block = 0;
  std::size_t filled = 0;
  while (filled < out.size()) {
    const auto words = detail::raw_block(address, block++);
    for (int pair = 0; pair < 2 && filled < out.size(); ++pair) {
      const double u1 = detail::to_open_unit(words[2 * pair]);
      const double u2 = detail::to_open_unit(words[2 * pair + 1]);
      const double radius = std::sqrt(-2.0 * std::log(u1));
      const double angle = 2.0 * std::numbers::pi * u2;
      out[filled++] = radius * std::cos(angle);
      if (filled < out.size()) out[filled++] = radius * std::sin(angle);
    }
  }
}

inline double gaussian(const NoiseAddress& address) {
  double z = 0.0;
  gaussian_block(address, std::span<double>(&z, 1));
  return z;
}

// Uniform draws on (0, 1).
inline void uniform_block(const NoiseAddress& address, std::span<double> out) {
  std::uint32_t block = 0;
  std::size_t filled = 0;
  while (filled < out.size()) {
    const auto words = detail::raw_block(address, block++);
    for (int i = 0; i < 4 && filled < out.size(); ++i) out[filled++] = detail::to_open_unit(words[i]);
  }
}

inline double uniform(const NoiseAddress& address) {
  double u = 0.0;
  uniform_block(address, std::span<double>(&u, 1));
  return u;
}

}  // namespace mvlab
