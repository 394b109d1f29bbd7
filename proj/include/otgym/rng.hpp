#pragma once

#include <cstdint>

namespace otgym {

/// Substream identifiers. Every stochastic consumer draws from its own stream so
/// that adding draws in one place never shifts the sequence seen by another.
enum class Stream : std::uint64_t {
  Brownian = 1,
  ObstaclePhase = 2,
  Exploration = 3,
  ReplaySampling = 4,
  Operator = 5,
  NetworkInit = 6,
  Scenario = 7,
};

/// Counter-based 64-bit generator. The full state is (seed, stream, counter), so
/// it serializes trivially and any draw can be reproduced from its index.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, Stream stream = Stream::Brownian, std::uint64_t counter = 0)
      : seed_(seed), stream_(static_cast<std::uint64_t>(stream)), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes exactly two counter values.
  double normal();

  /// Child generator for a different substream, keyed by an extra index.
  Rng derive(Stream stream, std::uint64_t index = 0) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 1;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace otgym
