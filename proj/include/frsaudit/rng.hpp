#pragma once

// Portable, reproducible randomness. std:: distributions are
// implementation-defined, so every draw that must be bit-stable across
// toolchains goes through these helpers instead.

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace frsaudit::rng {

/// SplitMix64 finalizer: a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b));
}

/// Counter-based draw keyed by (seed, a, b, c). Pure function of its inputs,
/// so per-pixel randomness is independent of evaluation order.
constexpr std::uint64_t keyed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0,
                              std::uint64_t c = 0) noexcept {
  return combine(combine(combine(seed, a), b), c);
}

/// FNV-1a over bytes, then mixed. Stable string hashing for seed derivation.
std::uint64_t hash_string(std::string_view s) noexcept;

/// Seed derived from a master seed and a list of labels.
std::uint64_t derive_seed(std::uint64_t master, std::string_view a,
                          std::string_view b = {}) noexcept;

/// Uniform integer in [0, n) from 64 random bits (Lemire multiply-high).
inline std::uint64_t bounded(std::uint64_t bits, std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(bits) * n) >> 64);
}

/// Uniform double in [0, 1) with 53 bits of precision.
inline double unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Sequential stream (SplitMix64 state walk).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t below(std::uint64_t n) noexcept { return bounded(next(), n); }
  double uniform() noexcept { return unit(next()); }
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by a Stream.
template <typename T>
void shuffle(std::span<T> items, Stream& stream) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = stream.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace frsaudit::rng
