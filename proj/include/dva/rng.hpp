#pragma once

// Seedable random streams. The bit source is std::mt19937_64 (fully specified
// by the standard, so streams match across platforms); the uniform and
// Gaussian transforms are spelled out here instead of using std distributions,
// whose output is implementation-defined. Gaussians come from Box-Muller so a
// reimplementation in another language can reproduce the same distributions.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dva {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stream seed for a (master, index, subindex) triple. Runs seeded this way are
// independent of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(master ^ 0x517cc1b727220a95ull) ^ splitmix64(a) ^ splitmix64(~b));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the sine partner of each pair is cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * kPi * u2;
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

  void fill_gaussian(std::vector<double>& out) {
    for (double& v : out) v = gaussian();
  }

  // Index in [0, n). Modulo bias is < n / 2^64, irrelevant at our sizes.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  // Fisher-Yates; std::shuffle is not seed-stable across standard libraries.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dva
