#include "maskint/rng.hpp"

#include <cmath>
#include <numbers>

namespace maskint {

double Rng::Normal() {
  const double u1 = UniformOpen();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::Below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = NextU64();
  while (x >= limit) x = NextU64();
  return x % n;
}

Rng Rng::Split(std::string_view label) const {
  // FNV-1a over the label, then mixed with the parent key.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(FromKey{}, Mix(key_ ^ Mix(h)));
}

Rng Rng::Split(std::uint64_t index) const {
  return Rng(FromKey{}, Mix(key_ ^ Mix(index + 0x2545f4914f6cdd1dULL)));
}

}  // namespace maskint
