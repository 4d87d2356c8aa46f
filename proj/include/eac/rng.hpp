#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eac {

// Deterministic random source.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Distributions are implemented here rather than taken from
// <random> because the standard leaves their algorithms to the library
// vendor:
//   uniform()  = (next() >> 11) * 2^-53                       in [0, 1)
//   normal()   = Box-Muller, cos branch only: sqrt(-2 ln(1-u1)) cos(2 pi u2)
// Named sub-streams are seeded with splitmix64(seed ^ fnv1a64(name)), so
// adding a new consumer never shifts the draws of an existing one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  Rng derive(std::string_view name) const;
  Rng derive(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace eac
