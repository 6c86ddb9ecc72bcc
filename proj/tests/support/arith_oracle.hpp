#pragma once

// Independent checker for generated arithmetic traces. Deliberately shares no
// code with the library: its own regex grammar and its own fraction type.

#include <cstdint>
#include <numeric>
#include <optional>
#include <regex>
#include <string>

namespace oracle {

struct Frac {
  long long n = 0, d = 1;
};

inline Frac norm(long long n, long long d) {
  if (d < 0) n = -n, d = -d;
  const long long g = std::gcd(n < 0 ? -n : n, d);
  return g > 1 ? Frac{n / g, d / g} : Frac{n, d};
}

inline bool same(Frac a, Frac b) { return a.n == b.n && a.d == b.d; }

inline std::optional<Frac> parse_literal(const std::string& s) {
  static const std::regex re(R"(^(-?)(\d+)(?:\.(\d+))?$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  long long whole = std::stoll(m[2].str());
  long long den = 1, frac = 0;
  if (m[3].matched) {
    for (std::size_t i = 0; i < m[3].length(); ++i) den *= 10;
    frac = std::stoll(m[3].str());
  }
  long long n = whole * den + frac;
  return norm(m[1].length() ? -n : n, den);
}

// Final value of a well-formed trace, or nullopt.
inline std::optional<Frac> check_trace(const std::string& trace) {
  static const std::regex step(R"(<<(-?\d+)([-+*/])(-?\d+)=(-?\d+)>>)");
  static const std::regex whole(R"(^(<<[^<>]*>> )+#### (\S+)$)");
  std::smatch wm;
  if (!std::regex_match(trace, wm, whole)) return std::nullopt;
  std::optional<Frac> carry;
  for (auto it = std::sregex_iterator(trace.begin(), trace.end(), step);
       it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const long long a = std::stoll(m[1].str()), b = std::stoll(m[3].str());
    const long long c = std::stoll(m[4].str());
    const char op = m[2].str()[0];
    Frac r;
    if (op == '+') r = norm(a + b, 1);
    else if (op == '-') r = norm(a - b, 1);
    else if (op == '*') r = norm(a * b, 1);
    else {
      if (b == 0) return std::nullopt;
      r = norm(a, b);
    }
    if (!same(r, norm(c, 1))) return std::nullopt;
    if (carry && !same(*carry, norm(a, 1))) return std::nullopt;
    carry = r;
  }
  if (!carry) return std::nullopt;
  auto ans = parse_literal(wm[2].str());
  if (!ans || !same(*ans, *carry)) return std::nullopt;
  return ans;
}

}  // namespace oracle
