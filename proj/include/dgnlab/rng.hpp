#pragma once

#include "dgnlab/core.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace dgnlab {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent 64-bit seed for a named sub-stream.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ULL)) + index);
}

/// Counter-based generator ("splitmix64-ctr"): draw k is mix64(seed + k * golden).
///
/// The whole state is (seed, counter), so copies replay the same stream and
/// sequences are identical on every platform. Normal draws use Box-Muller on
/// two fresh uniforms and keep no cached spare.
class SeededRng {
 public:
  static constexpr const char* algorithm = "splitmix64-ctr";

  explicit SeededRng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift; bias is below 2^-40 for
  /// every n used in this project.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() noexcept {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const SeededRng&, const SeededRng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// i.i.d. standard normal vector of length `dim`.
inline Vec gaussian_draw(SeededRng& rng, Index dim) {
  if (dim < 1) throw ContractError("gaussian_draw: dim must be >= 1");
  Vec z(dim);
  for (Index i = 0; i < dim; ++i) z[i] = rng.normal();
  return z;
}

/// In-place Fisher-Yates shuffle driven by `rng`.
template <typename T>
void shuffle(std::vector<T>& items, SeededRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace dgnlab
