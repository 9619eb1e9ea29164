#pragma once

#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>

namespace relprune {

// Exact rational number used for pruning rates. Rate schedules are built
// from repeated additions and halvings of the step fraction; doing that in
// floating point drifts off the nominal 0.05 grid and makes schedule
// comparisons fuzzy. Rationals keep INT(rate * F_num) exact.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Fraction() = default;
  Fraction(std::int64_t n, std::int64_t d) : num(n), den(d) {
    if (den == 0) throw std::invalid_argument("Fraction: zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    normalize();
  }

  static Fraction zero() { return Fraction(0, 1); }
  static Fraction one() { return Fraction(1, 1); }

  // Nearest simple rational via continued fractions; exact for the short
  // decimals used on the command line (0.05 -> 1/20).
  static Fraction from_double(double x, std::int64_t max_den = 1000000) {
    if (!(x == x)) throw std::invalid_argument("Fraction: NaN");
    const bool neg = x < 0;
    double v = neg ? -x : x;
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double frac = v;
    for (int it = 0; it < 64; ++it) {
      const double a_f = std::floor(frac);
      if (a_f > 9.0e18) break;
      const auto a = static_cast<std::int64_t>(a_f);
      if (q1 != 0 && a > (max_den - q0) / q1) break;
      const std::int64_t p2 = a * p1 + p0;
      const std::int64_t q2 = a * q1 + q0;
      p0 = p1;
      q0 = q1;
      p1 = p2;
      q1 = q2;
      const double rem = frac - a_f;
      if (rem < 1e-15) break;
      frac = 1.0 / rem;
    }
    return Fraction(neg ? -p1 : p1, q1 == 0 ? 1 : q1);
  }

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  Fraction operator+(const Fraction& o) const {
    return Fraction(num * o.den + o.num * den, den * o.den);
  }
  Fraction operator-(const Fraction& o) const {
    return Fraction(num * o.den - o.num * den, den * o.den);
  }
  Fraction halved() const { return Fraction(num, den * 2); }

  bool operator==(const Fraction& o) const { return num == o.num && den == o.den; }
  bool operator!=(const Fraction& o) const { return !(*this == o); }
  bool operator<(const Fraction& o) const {
    return static_cast<__int128>(num) * o.den < static_cast<__int128>(o.num) * den;
  }
  bool operator<=(const Fraction& o) const { return !(o < *this); }
  bool operator>(const Fraction& o) const { return o < *this; }
  bool operator>=(const Fraction& o) const { return !(*this < o); }

  // floor(this * n) for non-negative fractions; truncation toward zero for
  // the values that appear in pruning schedules.
  std::int64_t floor_times(std::int64_t n) const {
    if (num < 0) throw std::invalid_argument("Fraction::floor_times: negative fraction");
    const __int128 prod = static_cast<__int128>(num) * n;
    return static_cast<std::int64_t>(prod / den);
  }

  // Exact decimal string when the denominator is of the form 2^a * 5^b
  // (true for every rate reachable from the 1/20 default by halving);
  // falls back to "num/den" otherwise.
  std::string to_string() const {
    std::int64_t d = den;
    int twos = 0, fives = 0;
    while (d % 2 == 0) {
      d /= 2;
      ++twos;
    }
    while (d % 5 == 0) {
      d /= 5;
      ++fives;
    }
    if (d != 1) return std::to_string(num) + "/" + std::to_string(den);
    const int digits = twos > fives ? twos : fives;
    __int128 scaled = static_cast<__int128>(num < 0 ? -num : num);
    for (int i = 0; i < digits - twos; ++i) scaled *= 2;
    for (int i = 0; i < digits - fives; ++i) scaled *= 5;
    std::string s;
    if (scaled == 0) s = "0";
    while (scaled > 0) {
      s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(scaled % 10)));
      scaled /= 10;
    }
    while (static_cast<int>(s.size()) <= digits) s.insert(s.begin(), '0');
    if (digits > 0) s.insert(s.size() - digits, ".");
    if (num < 0) s.insert(s.begin(), '-');
    return s;
  }

 private:
  void normalize() {
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    if (num == 0) den = 1;
  }
};

}  // namespace relprune
