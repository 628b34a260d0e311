#pragma once

// Counter-based random streams.  Philox4x32-10 keyed by the 64-bit seed; the
// 128-bit counter holds (block index, stream id), so any (seed, stream_id)
// pair addresses its own sequence and parallel paths never share draws.
// Variates are produced by inversion from 53-bit uniforms so results do not
// depend on the standard library's distribution implementations.

#include <array>
#include <cmath>
#include <cstdint>

namespace mcsens {

namespace philox {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kM0 = 0xD2511F53u;
inline constexpr std::uint32_t kM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline Block round(const Block& c, const Key& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kM0, c[0], hi0, lo0);
  mulhilo(kM1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline Block philox4x32_10(Block c, Key k) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      k[0] += kW0;
      k[1] += kW1;
    }
    c = round(c, k);
  }
  return c;
}

}  // namespace philox

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed),
        stream_(stream_id),
        key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t draws() const noexcept { return counter_ * 2 - (have_second_ ? 1 : 0); }

  std::uint64_t next_u64() {
    if (have_second_) {
      have_second_ = false;
      return second_;
    }
    const philox::Block out = philox::philox4x32_10(
        {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        key_);
    ++counter_;
    second_ = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    have_second_ = true;
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
  }

  // Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  philox::Key key_;
  std::uint64_t counter_ = 0;
  std::uint64_t second_ = 0;
  bool have_second_ = false;
};

// Stream ids for distinct estimator phases: phase in the top byte, index below.
inline std::uint64_t stream_id(std::uint64_t phase, std::uint64_t index) { return (phase << 56) ^ index; }

}  // namespace mcsens
