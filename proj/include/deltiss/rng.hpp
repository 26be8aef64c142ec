#pragma once

#include <cstdint>
#include <random>

#include "deltiss/common.hpp"

namespace deltiss {

// Deterministic random source. All sampling goes through this wrapper so that
// trajectories and sweeps are bitwise reproducible from a seed: the variate
// algorithms are spelled out here instead of relying on std::*_distribution,
// whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Independent stream derived from this generator's seed, e.g. one per
  // sweep cell; does not disturb this generator's state.
  Rng fork(std::uint64_t stream) const {
    // splitmix64 of (seed, stream)
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Marsaglia polar method; one variate per call.
  double gaussian() {
    for (;;) {
      const double u = 2.0 * uniform01() - 1.0;
      const double v = 2.0 * uniform01() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  VectorXd gaussian_vector(int n) {
    VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = gaussian();
    return g;
  }

  // Uniform on the unit sphere in R^n.
  VectorXd unit_vector(int n) {
    for (;;) {
      VectorXd g = gaussian_vector(n);
      const double nrm = g.norm();
      if (nrm > 1e-12) return g / nrm;
    }
  }

  // Uniform in the closed unit ball in R^n.
  VectorXd ball_vector(int n) {
    const double r = std::pow(uniform01(), 1.0 / n);
    return r * unit_vector(n);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace deltiss
