#pragma once
// Seeded RNG wrapper. Gaussian draws use hand-rolled Box-Muller on top of
// mt19937 so streams are identical across standard-library implementations;
// std::normal_distribution is not pinned by the standard.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "racs/errors.hpp"

namespace racs {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derive an independent stream seed from a master seed and a stream tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32)};
    engine_.seed(seq);
  }

  // Uniform in (0, 1).
  double uniform() {
    return (static_cast<double>(engine_()) + 0.5) * (1.0 / 4294967296.0);
  }

  // Standard normal via Box-Muller; the sine half is discarded so the full
  // generator state lives in the engine (keeps serialization exact).
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform index in [0, n) via multiply-shift.
  std::size_t index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::index requires n > 0");
    return static_cast<std::size_t>((static_cast<std::uint64_t>(engine_()) * n) >> 32);
  }

  std::uint32_t raw() { return engine_(); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw DataError("malformed RNG state");
  }

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937 engine_;
};

}  // namespace racs
