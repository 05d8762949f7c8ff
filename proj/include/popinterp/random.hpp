#pragma once

#include <cstdint>
#include <random>

namespace popinterp {

/// Child seed for stream `stream` of master seed `master` (splitmix64 of the
/// pair). Every parallel unit of work (chain, draw, replication) gets its own
/// generator seeded this way so results do not depend on scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Thin wrapper over mt19937_64 with the handful of variates the library needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); never returns 0.
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace popinterp
