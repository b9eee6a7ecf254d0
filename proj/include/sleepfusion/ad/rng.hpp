#pragma once

#include <array>
#include <cstdint>

namespace sleepfusion::ad {

// xoshiro256** seeded through splitmix64. Hand-rolled so that streams are
// identical across standard libraries and the full state (including the
// cached Box-Muller spare) can be serialized into checkpoints.
class Rng {
 public:
  struct State {
    std::array<std::uint64_t, 4> s{};
    bool has_spare = false;
    double spare = 0.0;
  };

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller with a cached spare.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Unbiased integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  State state() const;
  void restore(const State& st);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sleepfusion::ad
