#ifndef FG_RNG_HPP
#define FG_RNG_HPP

#include <cstdint>
#include <string_view>

namespace fg {

// Seeded pseudo-random source with explicitly coded transforms so that
// streams are reproducible across platforms and standard-library versions.
// Core generator is xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Integer in [0, n), n > 0.
  uint64_t uniform_int(uint64_t n);

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();
  double normal(double mean, double stddev);

  // Independent child stream; same (parent seed, id) always yields the
  // same stream regardless of what the parent generated in between.
  Rng fork(uint64_t stream_id) const;
  Rng fork(std::string_view name) const;

 private:
  uint64_t state_[4];
  uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fg

#endif  // FG_RNG_HPP
