#pragma once

#include <cstdint>

namespace dreid {

// Stream purposes. Each consumer draws from its own stream so the draw count
// of one stage never shifts the values seen by another.
enum class RngStream : std::uint64_t {
  kSynthPattern = 1,  // per-person / per-outfit colors and phases
  kSynthNoise = 2,    // per-image pixel noise
  kInit = 3,          // parameter initialization
  kSampler = 4,       // PK batch sampling
  kAugment = 5,       // flip / crop / erase decisions
  kTest = 6,
};

// Counter-based generator: draw i of a stream is mix64(key + i * gamma).
// Splitting derives an independent key from (purpose, index), which makes
// every stream a pure function of (seed, purpose, index, draw counter) and
// keeps dataset generation reproducible across runs. Integer-only state;
// uniform/gaussian below use only IEEE add/mul, no libm.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed ^ 0x7f4a7c1593ea7du)) {}

  CounterRng split(RngStream purpose, std::uint64_t index = 0) const {
    std::uint64_t tag = mix64(static_cast<std::uint64_t>(purpose) * 0x9e3779b97f4a7c15u + index + 1);
    CounterRng child(0);
    child.key_ = mix64(key_ ^ tag);
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return mix64(key_ + ++counter_ * 0x9e3779b97f4a7c15u); }

  // [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0,n); multiply-shift, bias is O(n / 2^64).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Irwin-Hall(12) minus 6: mean 0, variance 1. Adds and subtracts only, so
  // the value is bit-identical on any IEEE-754 platform.
  double gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9u;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebu;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace dreid
