#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace ltr {

// Counter-based generator (Philox4x32-10). The full state is a 64-bit key and
// a 64-bit counter, so a stream can be persisted, resumed, or split into
// independent named children without touching the parent.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  // Independent child streams. Splitting never advances the parent.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  result_type operator()();
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal draws.
  double normal();
  template <typename T>
  void fill_normal(std::span<T> out);
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace ltr
