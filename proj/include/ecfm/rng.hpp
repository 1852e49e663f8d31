#ifndef ECFM_RNG_HPP
#define ECFM_RNG_HPP

#include <cmath>
#include <cstdint>

namespace ecfm {

// Counter-free splittable generator built on splitmix64. Every randomized
// operation takes an explicit seed and derives private streams from it, so
// results are bit-reproducible and independent of thread count.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xA5A5A5A5DEADBEEFULL)) {}

  // Independent child stream, e.g. one per particle or per trial.
  Rng derive(std::uint64_t tag) const {
    return Rng(splitmix64(state_ + 0x632BE59BD9B4E019ULL * (tag + 1)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on (0,1); never returns 0 or 1.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; generates in pairs and caches the spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // +1 or -1 with equal probability.
  double rademacher() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ecfm

#endif  // ECFM_RNG_HPP
