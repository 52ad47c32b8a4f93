#pragma once

#include <cmath>
#include <cstdint>

#include "contractlab/common.hpp"

namespace contractlab {

// Counter-based splittable generator (Philox4x32-10, Salmon et al. 2011).
// Every draw is a pure function of (master_seed, path, step, stream, block),
// so parallel and serial runs agree bit-for-bit and streams can be skipped
// without disturbing each other.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t master_seed) : seed_(master_seed) {}

  struct Block4 {
    std::uint32_t r[4];
  };

  Block4 raw(std::uint64_t path, std::uint64_t step, std::uint32_t stream,
             std::uint32_t block) const {
    std::uint32_t c0 = static_cast<std::uint32_t>(step);
    std::uint32_t c1 = (static_cast<std::uint32_t>(step >> 32) & 0xffu) |
                       ((stream & 0xffu) << 8) | ((block & 0xffffu) << 16);
    std::uint32_t c2 = static_cast<std::uint32_t>(path);
    std::uint32_t c3 = static_cast<std::uint32_t>(path >> 32);
    std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c0;
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c2;
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
      k0 += kW0;
      k1 += kW1;
    }
    return Block4{{c0, c1, c2, c3}};
  }

  // Uniform on [0,1) with 53 random bits.
  double uniform(std::uint64_t path, std::uint64_t step, std::uint32_t stream,
                 std::uint32_t block = 0) const {
    const Block4 b = raw(path, step, stream, block);
    const std::uint64_t bits =
        (static_cast<std::uint64_t>(b.r[0]) << 32) | b.r[1];
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  // Two standard normals per counter block (Box-Muller).
  void normal_pair(std::uint64_t path, std::uint64_t step, std::uint32_t stream,
                   std::uint32_t block, double* z0, double* z1) const {
    const Block4 b = raw(path, step, stream, block);
    const std::uint64_t bits0 =
        (static_cast<std::uint64_t>(b.r[0]) << 32) | b.r[1];
    const std::uint64_t bits1 =
        (static_cast<std::uint64_t>(b.r[2]) << 32) | b.r[3];
    // u1 in (0,1] keeps the log finite.
    const double u1 = 1.0 - static_cast<double>(bits0 >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(bits1 >> 11) * 0x1.0p-53;
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * kPi * u2;
    *z0 = rad * std::cos(ang);
    *z1 = rad * std::sin(ang);
  }

  // Fill d standard normals for the given (path, step, stream).
  void normals(std::uint64_t path, std::uint64_t step, std::uint32_t stream,
               int d, double* out) const {
    for (int i = 0; i < d; i += 2) {
      double z0, z1;
      normal_pair(path, step, stream, static_cast<std::uint32_t>(i / 2), &z0, &z1);
      out[i] = z0;
      if (i + 1 < d) out[i + 1] = z1;
    }
  }

  std::uint64_t seed() const { return seed_; }

  // Derived seed for auxiliary ensembles (independent marginals, bootstrap).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t h = 1469598103934665603ull ^ seed;
    h *= 1099511628211ull;
    h ^= salt;
    h *= 1099511628211ull;
    h ^= (h >> 29);
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= (h >> 32);
    return h;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  std::uint64_t seed_;
};

// Stream ids used by the simulation modules.
namespace rng_stream {
inline constexpr std::uint32_t kDiffusion1 = 1;  // sigma-tilde noise
inline constexpr std::uint32_t kDiffusion2 = 2;  // reflected sigma0 noise
inline constexpr std::uint32_t kBridge = 3;      // coupling bridge draws
inline constexpr std::uint32_t kScatter = 4;     // generic sampling (checks)
}  // namespace rng_stream

}  // namespace contractlab
