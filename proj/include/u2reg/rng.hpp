#ifndef U2REG_RNG_HPP
#define U2REG_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace u2reg {

/// Seed for a reproducible run. Every random consumer derives its own
/// stream from this via derive_seed, so adding a consumer never shifts
/// the draws of an existing one.
struct RngSeed {
  std::uint64_t value = 0;
};

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stable labeled sub-stream: same (seed, label, index) -> same seed forever.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(seed ^ fnv1a(label)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Rng{derive_seed(seed, label, index)};
}

/// Counter-based uniform in [0,1): a pure function of its key, used where
/// draws must not depend on evaluation order (dropout masks).
constexpr double hash_uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) noexcept {
  std::uint64_t h = splitmix64(a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  h = splitmix64(h ^ d);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace u2reg

#endif  // U2REG_RNG_HPP
