#pragma once

// Counter-based random streams (Philox4x32-10, Salmon et al. 2011).
//
// A stream is identified by (seed, stream, purpose). The 64-bit seed is the
// Philox key; the 128-bit counter is (draw index lo, draw index hi, stream,
// purpose). Every implementation that follows this layout and the transforms
// below reproduces the same draws:
//
//   next_u64   = (word0 << 32) | word1, then (word2 << 32) | word3
//   uniform    = (next_u64 >> 11) * 2^-53                    in [0, 1)
//   normal     = sqrt(-2 log(1 - u1)) * cos(2 pi u2)          (two uniforms)
//   bernoulli  = uniform < p
//   index(n)   = floor(uniform * n)

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace ppk::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline Block philox4x32_10(Block counter, Key key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return counter;
}

/// Stream purposes used across the library.
enum class Purpose : std::uint32_t {
  Covariates = 1,
  Treatment = 2,
  Noise = 3,
  TestCovariates = 4,
  PseudoPoints = 5,
  Generic = 100,
};

class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, std::uint32_t stream, Purpose purpose)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream),
        purpose_(static_cast<std::uint32_t>(purpose)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    if (cursor_ == 2) {
      const Block out = philox4x32_10(
          {static_cast<std::uint32_t>(block_index_),
           static_cast<std::uint32_t>(block_index_ >> 32), stream_, purpose_},
          key_);
      buffer_[0] = (std::uint64_t{out[0]} << 32) | out[1];
      buffer_[1] = (std::uint64_t{out[2]} << 32) | out[3];
      ++block_index_;
      cursor_ = 0;
    }
    return buffer_[cursor_++];
  }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  std::size_t index(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

 private:
  Key key_;
  std::uint32_t stream_;
  std::uint32_t purpose_;
  std::uint64_t block_index_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int cursor_ = 2;
};

}  // namespace ppk::rng
