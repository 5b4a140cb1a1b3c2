#pragma once

#include <cstdint>
#include <string_view>

namespace maskint {

// Counter-based generator: output i is a SplitMix64 finalization of
// key + i * golden_gamma. Child generators are derived from the parent key and
// a label, so module-level streams never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(Mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t NextU64() {
    ++counter_;
    return Mix(key_ + counter_ * kGamma);
  }

  // Uniform on [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double UniformOpen() {
    return (static_cast<double>(NextU64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; one output per call.
  double Normal();

  // Unbiased integer in [0, n).
  std::uint64_t Below(std::uint64_t n);

  Rng Split(std::string_view label) const;
  Rng Split(std::uint64_t index) const;

  std::uint64_t counter() const { return counter_; }

 private:
  struct FromKey {};
  Rng(FromKey, std::uint64_t key) : key_(key) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t Mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace maskint
