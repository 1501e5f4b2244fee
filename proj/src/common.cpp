#include "alignforge/common.hpp"

#include <cctype>

namespace alignforge {

Rational Rational::from_decimal(std::string_view text) {
  std::string s = trim(text);
  if (s.empty()) throw ValidationError("Rational: empty decimal string");
  bool negative = false;
  size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    i = 1;
  }
  long long num = 0;
  long long den = 1;
  bool seen_digit = false;
  bool seen_dot = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.') {
      if (seen_dot) throw ValidationError("Rational: malformed decimal '" + s + "'");
      seen_dot = true;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw ValidationError("Rational: malformed decimal '" + s + "'");
    num = num * 10 + (c - '0');
    if (seen_dot) den *= 10;
    seen_digit = true;
  }
  if (!seen_digit) throw ValidationError("Rational: malformed decimal '" + s + "'");
  return Rational(negative ? -num : num, den);
}

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string replace_all(std::string text, std::string_view token, std::string_view value) {
  size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace alignforge
