#include "ltr/rng.hpp"

#include <array>
#include <cmath>
#include <random>

namespace ltr {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t(kPhiloxM0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(kPhiloxM1) * ctr[2];
    const auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
    const auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

Rng::Rng(std::uint64_t seed) : key_(splitmix64(seed)), counter_(0) {}

Rng Rng::split(std::string_view name) const {
  return Rng(splitmix64(key_ ^ splitmix64(fnv1a64(name))), 0);
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(splitmix64(key_ + 0x632BE59BD9B4E019ULL * (index + 1)), 0);
}

Rng::result_type Rng::operator()() {
  const std::uint64_t c = counter_++;
  const auto out = philox4x32(
      {std::uint32_t(c), std::uint32_t(c >> 32), 0u, 0u},
      {std::uint32_t(key_), std::uint32_t(key_ >> 32)});
  return (std::uint64_t(out[1]) << 32) | out[0];
}

double Rng::uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(*this);
}

template <typename T>
void Rng::fill_normal(std::span<T> out) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (T& v : out) v = static_cast<T>(dist(*this));
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(*this);
}

template void Rng::fill_normal<float>(std::span<float>);
template void Rng::fill_normal<double>(std::span<double>);

}  // namespace ltr
