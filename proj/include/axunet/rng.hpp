#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace axunet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* ptr, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(ptr);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Seeded stream with hand-rolled distributions so draws do not depend on the
// standard library's unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), n > 0.
  std::int64_t integer(std::int64_t n) {
    const auto u = next_u64();
    return static_cast<std::int64_t>(
        (static_cast<__uint128_t>(u) * static_cast<__uint128_t>(n)) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent stream derived from the master seed and a tag pair.
  Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
    return Rng(splitmix64(seed_ ^ splitmix64(a ^ splitmix64(b ^ 0x6a09e667f3bcc908ULL))));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace axunet
