#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace repflow {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A (key, counter) pair maps to four 32-bit words with no hidden state, so
/// any draw can be reproduced from its coordinates. We key by the user seed
/// and put the stream id in the upper half of the counter.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t key) noexcept;

  Block operator()(std::uint64_t stream, std::uint64_t counter) const noexcept;

 private:
  std::array<std::uint32_t, 2> key_;
};

/// Sequential draws from one (seed, stream) coordinate.
///
/// Gaussians use the Box-Muller transform on two 53-bit uniforms,
/// u1 in (0, 1], u2 in [0, 1): r = sqrt(-2 ln u1), z0 = r cos(2 pi u2),
/// z1 = r sin(2 pi u2). Both variates are used.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Unbiased integer in [0, bound) by rejection; integer-only, so portable.
  std::uint64_t below(std::uint64_t bound) noexcept;

 private:
  void refill() noexcept;

  Philox4x32 philox_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  Philox4x32::Block buffer_{};
  int available_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Derives a stream id from a label and an index (splitmix64 mixing), used to
/// give every trial, layer or parameter tensor its own independent stream.
std::uint64_t stream_id(std::string_view label, std::uint64_t index = 0) noexcept;

}  // namespace repflow
