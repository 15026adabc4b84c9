#include "akmnet/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace akmnet::nn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t key = splitmix64(seed_ ^ 0x6a09e667f3bcc909ULL);
  return splitmix64(key + 0x9e3779b97f4a7c15ULL * (counter_++));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("rng: index range is empty");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

long RngStream::uniform_int(long lo, long hi) {
  if (hi < lo) throw std::invalid_argument("rng: empty integer range");
  return lo + static_cast<long>(index(static_cast<std::size_t>(hi - lo + 1)));
}

RngStream RngStream::derive(std::uint64_t stream_id) const {
  return RngStream(splitmix64(seed_ * 0x2545f4914f6cdd1dULL + splitmix64(stream_id)));
}

}  // namespace akmnet::nn
