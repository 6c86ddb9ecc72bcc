#include "ltr/rational.hpp"

#include <cctype>
#include <numeric>
#include <stdexcept>

namespace ltr {

namespace {

std::int64_t narrow(__int128 v) {
  if (v > INT64_MAX || v < INT64_MIN) throw std::overflow_error("rational overflow");
  return std::int64_t(v);
}

Rational make(__int128 n, __int128 d) {
  if (d == 0) throw std::domain_error("rational with zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  __int128 a = n < 0 ? -n : n, b = d;
  while (b != 0) {
    const __int128 t = a % b;
    a = b;
    b = t;
  }
  if (a > 1) {
    n /= a;
    d /= a;
  }
  return Rational(narrow(n), narrow(d));
}

}  // namespace

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw std::domain_error("rational with zero denominator");
  if (d < 0) {
    if (n == INT64_MIN || d == INT64_MIN) throw std::overflow_error("rational overflow");
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n, d);
  num_ = g > 1 ? n / g : n;
  den_ = g > 1 ? d / g : d;
}

Rational operator+(Rational a, Rational b) {
  return make(__int128(a.num_) * b.den_ + __int128(b.num_) * a.den_,
              __int128(a.den_) * b.den_);
}

Rational operator-(Rational a, Rational b) {
  return make(__int128(a.num_) * b.den_ - __int128(b.num_) * a.den_,
              __int128(a.den_) * b.den_);
}

Rational operator*(Rational a, Rational b) {
  return make(__int128(a.num_) * b.num_, __int128(a.den_) * b.den_);
}

Rational operator/(Rational a, Rational b) {
  if (b.num_ == 0) throw std::domain_error("division by zero");
  return make(__int128(a.num_) * b.den_, __int128(a.den_) * b.num_);
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
  return __int128(a.num_) * b.den_ <=> __int128(b.num_) * a.den_;
}

std::string Rational::to_string() const {
  std::int64_t d = den_;
  int twos = 0, fives = 0;
  while (d % 2 == 0) {
    d /= 2;
    ++twos;
  }
  while (d % 5 == 0) {
    d /= 5;
    ++fives;
  }
  if (d != 1) return std::to_string(num_) + "/" + std::to_string(den_);
  if (den_ == 1) return std::to_string(num_);
  const int digits = std::max(twos, fives);
  __int128 scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  __int128 scaled = __int128(num_) * (scale / den_);
  const bool neg = scaled < 0;
  if (neg) scaled = -scaled;
  std::string frac;
  for (int i = 0; i < digits; ++i) {
    frac.insert(frac.begin(), char('0' + int(scaled % 10)));
    scaled /= 10;
  }
  return (neg ? "-" : "") + std::to_string(std::int64_t(scaled)) + "." + frac;
}

std::optional<Rational> Rational::parse(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool neg = false;
  std::size_t i = 0;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    ++i;
  }
  auto digits = [&](std::size_t& pos, __int128& value, int& count) {
    count = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      value = value * 10 + (s[pos] - '0');
      if (value > INT64_MAX) return false;
      ++pos;
      ++count;
    }
    return true;
  };
  __int128 whole = 0;
  int n_whole = 0;
  if (!digits(i, whole, n_whole) || n_whole == 0) return std::nullopt;
  try {
    if (i == s.size()) return make(neg ? -whole : whole, 1);
    if (s[i] == '/') {
      ++i;
      __int128 den = 0;
      int n_den = 0;
      if (!digits(i, den, n_den) || n_den == 0 || i != s.size() || den == 0) {
        return std::nullopt;
      }
      return make(neg ? -whole : whole, den);
    }
    if (s[i] == '.') {
      ++i;
      __int128 frac = 0;
      int n_frac = 0;
      if (!digits(i, frac, n_frac) || n_frac == 0 || i != s.size() || n_frac > 18) {
        return std::nullopt;
      }
      __int128 scale = 1;
      for (int k = 0; k < n_frac; ++k) scale *= 10;
      const __int128 n = whole * scale + frac;
      return make(neg ? -n : n, scale);
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace ltr
