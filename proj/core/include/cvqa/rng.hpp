#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace cvqa {

/// Seeded generator with platform-independent derived distributions.
/// Only the raw 64-bit engine output is taken from the standard library;
/// uniform, index and normal draws are computed here so that a seed maps to
/// the same stream on every conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal via Box-Muller (one of the pair is discarded so that the
  /// generator state alone determines the stream).
  double normal();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  [[nodiscard]] std::string state() const;
  static Rng from_state(std::string_view state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer over (master, stream); used to derive independent
/// child seeds, e.g. one per sweep run or per curriculum position.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

}  // namespace cvqa
