// Copyright 2026 The gapcollapse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GAPCOLLAPSE_RNG_HPP
#define GAPCOLLAPSE_RNG_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

namespace gapcollapse {

// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
// easy as 1, 2, 3", SC'11). Output is a pure function of (counter, key).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Reproducible random stream keyed by (master_seed, stream_index).
///
/// Satisfies UniformRandomBitGenerator. The Philox key is the master seed and
/// the upper half of the 128-bit counter is the stream index, so streams with
/// distinct indices never share a block. Sub-streams are addressed by hashing
/// the parent index with a child index; a Monte Carlo loop that gives job j the
/// stream `rng.substream(j)` is reproducible under any parallel schedule.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t master_seed, std::uint64_t stream_index) noexcept
      : seed_(master_seed), stream_(stream_index) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    if (cached_ == 0) refill();
    const std::uint64_t out =
        cached_ == 2 ? (std::uint64_t{buf_[0]} << 32) | buf_[1]
                     : (std::uint64_t{buf_[2]} << 32) | buf_[3];
    --cached_;
    return out;
  }

  std::uint64_t master_seed() const noexcept { return seed_; }
  std::uint64_t stream_index() const noexcept { return stream_; }

  /// Independent child stream; a pure function of (seed, stream, child).
  RngStream substream(std::uint64_t child) const noexcept {
    return RngStream(seed_, splitmix64(stream_ ^ splitmix64(child + 0x5851F42D4C957F2Dull)));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1].
  double uniform_pos() noexcept { return 1.0 - uniform(); }

  double normal() { return normal_(*this); }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  /// Standard complex Gaussian: E|z|^2 = 1, real and imaginary parts
  /// independent with variance 1/2 each.
  std::complex<double> complex_normal() {
    constexpr double s = 0.70710678118654752440;
    const double re = normal();
    const double im = normal();
    return {s * re, s * im};
  }

  double phase() noexcept { return 2.0 * std::numbers::pi * uniform(); }

 private:
  void refill() noexcept {
    const Philox4x32::Counter ctr = {
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_),
                                 static_cast<std::uint32_t>(seed_ >> 32)};
    buf_ = Philox4x32::block(ctr, key);
    ++block_;
    cached_ = 2;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buf_{};
  int cached_ = 0;
  std::normal_distribution<double> normal_;
};

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_RNG_HPP
