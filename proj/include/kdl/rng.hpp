#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace kdl {

// Deterministic, platform-independent RNG (splitmix64 core). All randomness
// in the toolkit flows from one root seed through named substreams so that
// component-level determinism composes.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double rademacher() { return (next_u64() & 1) ? 1.0 : -1.0; }

  double normal() {
    // Box-Muller; one value per call keeps the stream layout simple.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

private:
  std::uint64_t state_;
};

// FNV-1a over the stream name, mixed with the root seed and an index.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                    std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  h ^= root + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
  return h;
}

inline Rng substream(std::uint64_t root, std::string_view name,
                     std::uint64_t index = 0) {
  return Rng(substream_seed(root, name, index));
}

}  // namespace kdl
