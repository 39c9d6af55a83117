#pragma once

// Counter-based random streams. Each (seed, stream) pair addresses an
// independent Philox4x32-10 sequence, so replicates can run in any order or
// on any thread and still reproduce bit-for-bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace superou {

class Philox {
 public:
  using result_type = std::uint64_t;

  Philox(std::uint64_t seed, std::uint64_t stream) {
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    ctr_ = {0u, 0u, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ >= 2) refill();
    const result_type r = (static_cast<std::uint64_t>(buf_[2 * pos_]) << 32) | buf_[2 * pos_ + 1];
    ++pos_;
    return r;
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard exponential variate.
  double exponential() { return -std::log(uniform()); }

  /// Standard normal variate (Box-Muller, one value per call; no cached state).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Poisson variate. Direct multiplication for small means, PTRS
  /// (Hormann 1993) transformed rejection for large means.
  std::uint64_t poisson(double mean);

 private:
  void refill();

  std::array<std::uint32_t, 4> ctr_{};
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 2;
};

}  // namespace superou
