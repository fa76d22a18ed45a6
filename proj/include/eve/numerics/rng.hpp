#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace eve::num {

// Seeded generator whose draw sequence is identical on every platform.
// The engine is std::mt19937_64 (fully specified by the standard); the
// distributions are implemented here because the std:: distributions are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string state() const;
  void set_state(std::string_view text);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Stable 64-bit hash for deriving per-name seeds.
std::uint64_t fnv1a(std::string_view text) noexcept;

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
  std::uint64_t x = seed ^ fnv1a(name);
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace eve::num
