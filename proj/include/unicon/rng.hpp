#pragma once

#include <cstdint>

#include "unicon/tensor.hpp"

namespace unicon {

/// Counter-based generator: the i-th draw is a pure function of (key, i),
/// so streams can be split by key without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  /// Independent child stream; deterministic in (parent key, stream id).
  CounterRng split(std::uint64_t stream) const {
    CounterRng child;
    child.key_ = mix(key_ ^ mix(stream + 0x632be59bd9b4e019ULL));
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + 0xbf58476d1ce4e5b9ULL * ++counter_); }
  /// Uniform in [0, 1) with 24-bit resolution; integer-derived.
  float uniform() { return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f); }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }
  /// Standard normal via Box-Muller.
  float normal();

  Tensor normal_tensor(Shape shape);
  Tensor uniform_tensor(Shape shape, float lo, float hi);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace unicon
