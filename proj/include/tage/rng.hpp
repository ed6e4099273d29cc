#pragma once

// Seeded random number generation with explicitly coded distributions so
// that every draw is reproducible bit-for-bit for a given seed.

#include <cstdint>
#include <cmath>
#include <vector>
#include <algorithm>
#include <stdexcept>

namespace tage {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// xoshiro256** generator seeded via splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = detail::splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t integer(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::integer: n must be positive");
    for (;;) {
      std::uint64_t x = next();
      std::uint64_t r = x % n;
      if (x - r <= ~std::uint64_t{0} - (n - 1)) return r;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Laplace(0, b) via inverse CDF.
  double laplace(double b) {
    for (;;) {
      double u = uniform() - 0.5;
      double t = 1.0 - 2.0 * std::abs(u);
      if (t <= 0.0) continue;  // u landed exactly on the tail boundary
      double sgn = (u > 0.0) ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
      return -b * sgn * std::log(t);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent child generator. Forking is a pure function of
  /// the construction seed and the stream id, not of draws made so far.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t sm = seed_ ^ (0xA24BAED4963EE407ull + stream * 0x9E3779B97F4A7C15ull);
    return Rng(detail::splitmix64(sm));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace tage
