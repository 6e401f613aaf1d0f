#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace poolcal {

using Rng = std::mt19937_64;

// Derives an independent child stream from a master seed and a path of
// indices (scenario, replicate, draw, ...). The mapping is a fixed function of
// its inputs, so a run is reproducible regardless of scheduling order.
inline Rng child_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  auto mix = [](std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t state = mix(seed);
  for (std::uint64_t p : path) state = mix(state ^ mix(p + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(state), static_cast<std::uint32_t>(state >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

// Standard normal via the polar method. Written out so draws do not depend on
// the standard library's unspecified normal_distribution algorithm.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * unit(rng) - 1.0;
      v = 2.0 * unit(rng) - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Uniform on [0, 1) with 53 random bits.
  static double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace poolcal
