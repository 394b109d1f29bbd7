#include "otgym/rng.hpp"

#include <cmath>
#include <numbers>

namespace otgym {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t key = mix64(seed_ ^ mix64(stream_ * 0xD1B54A32D192ED03ULL));
  const std::uint64_t z = key + 0x9E3779B97F4A7C15ULL * (counter_ + 1);
  ++counter_;
  return mix64(mix64(z));
}

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::derive(Stream stream, std::uint64_t index) const {
  return Rng(mix64(seed_ + 0x632BE59BD9B4E019ULL * (index + 1)), stream);
}

}  // namespace otgym
