#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace elsa {

// Seed derivation and sample mappings are hand-rolled so that results are
// identical across standard library implementations; only the mt19937_64
// engine itself (which the standard pins down exactly) comes from <random>.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void mix_into(std::uint64_t& seed, std::uint64_t v) {
  seed = splitmix64(seed ^ v);
}

inline void mix_one(std::uint64_t& seed, std::uint64_t v) { mix_into(seed, v); }
inline void mix_one(std::uint64_t& seed, std::int64_t v) {
  mix_into(seed, static_cast<std::uint64_t>(v));
}
inline void mix_one(std::uint64_t& seed, int v) {
  mix_into(seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
}
inline void mix_one(std::uint64_t& seed, std::string_view v) {
  mix_into(seed, fnv1a(v));
}

}  // namespace detail

/// Derives an independent stream seed from a root seed and a label path,
/// e.g. derive_seed(seed, "kmeans", k, restart). Labeled derivation keeps
/// per-entity streams stable when unrelated entities are added or removed.
template <class... Parts>
std::uint64_t derive_seed(std::uint64_t root, Parts&&... parts) {
  std::uint64_t s = detail::splitmix64(root);
  (detail::mix_one(s, std::forward<Parts>(parts)), ...);
  return s;
}

/// Deterministic random source: a seeded mt19937_64 plus portable mappings.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Lemire multiply-shift; bias is negligible for the n used here and the
    // mapping is fully deterministic.
    const unsigned __int128 m =
        static_cast<unsigned __int128>(eng_()) * static_cast<unsigned __int128>(n);
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace elsa
