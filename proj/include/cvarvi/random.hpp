#pragma once

#include <cstdint>

namespace cvarvi {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * Counter-based random stream.
 *
 * A stream is keyed by (seed, iteration). Each draw is addressed by
 * (component, index), so the value of a draw never depends on how many other
 * draws were made. Changing the sample count at iteration k therefore leaves
 * every other iteration's draws untouched.
 */
class RandomStream {
 public:
  constexpr RandomStream(std::uint64_t seed, std::uint64_t iteration) noexcept
      : key_(mix64(mix64(seed) ^ (iteration * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL))) {}

  /// Raw 64 random bits for draw (component, index).
  constexpr std::uint64_t bits(std::uint64_t component, std::uint64_t index) const noexcept {
    return mix64(key_ ^ mix64(component * 0x8cb92ba72f3d8dd7ULL ^ mix64(index)));
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  constexpr double uniform01(std::uint64_t component, std::uint64_t index) const noexcept {
    return static_cast<double>(bits(component, index) >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi, std::uint64_t component,
                           std::uint64_t index) const noexcept {
    return lo + (hi - lo) * uniform01(component, index);
  }

  /// Derive an independent child stream, e.g. for per-seed sub-experiments.
  constexpr RandomStream child(std::uint64_t tag) const noexcept {
    return RandomStream(key_, tag);
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

}  // namespace cvarvi
