#pragma once

#include <cstddef>
#include <cstdint>

namespace akmnet::nn {

/// Counter-based random stream. Draw i is a pure function of (seed, i), so a
/// stream is reproducible bit-for-bit from its seed and call sequence.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);
  /// Uniform integer on [lo, hi] inclusive.
  long uniform_int(long lo, long hi);

  /// Independent child stream keyed by `stream_id`.
  RngStream derive(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void reset(std::uint64_t counter = 0) { counter_ = counter; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace akmnet::nn
