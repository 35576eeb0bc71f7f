#pragma once

// Seeded random sources. All stochastic operations take explicit seeds and
// derive per-task child seeds with splitmix64, so results do not depend on
// thread count or call interleaving. Doubles come straight from mt19937_64
// output bits; the generator sequence is pinned by the C++ standard, which
// keeps runs byte-reproducible across platforms.

#include <cstdint>
#include <random>
#include <vector>

namespace mpt {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for worker `index` of a task seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x51ed2701ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform point on the probability simplex (exponential spacings).
  std::vector<double> simplex(int k) {
    std::vector<double> x(k);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      x[i] = -std::log(u);
      total += x[i];
    }
    for (int i = 0; i < k; ++i) x[i] /= total;
    return x;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mpt
