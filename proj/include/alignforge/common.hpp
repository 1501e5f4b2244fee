#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>

namespace alignforge {

// Thrown when an input value or shape violates an operation's contract.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a configuration value is unusable (bad constant, bad file).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on file and parse problems; carries path/line context in the message.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exact fraction used wherever a threshold comparison must not depend on
// floating-point rounding (similarity cutoffs, aggregation thresholds).
struct Rational {
  long long num = 0;
  long long den = 1;

  constexpr Rational() = default;
  Rational(long long n, long long d) : num(n), den(d) {
    if (d <= 0) throw ValidationError("Rational: denominator must be positive");
    normalize();
  }

  // Parses decimal strings such as "0.75", "1", ".5".
  static Rational from_decimal(std::string_view text);

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }

 private:
  void normalize() {
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) { num /= g; den /= g; }
  }
};

// a/b <op> r, evaluated exactly in integers. b must be positive.
inline bool ratio_greater(long long a, long long b, const Rational& r) {
  return a * r.den > r.num * b;
}
inline bool ratio_less(long long a, long long b, const Rational& r) {
  return a * r.den < r.num * b;
}

std::string trim(std::string_view s);

// Replaces every occurrence of `token` in `text`.
std::string replace_all(std::string text, std::string_view token, std::string_view value);

}  // namespace alignforge
