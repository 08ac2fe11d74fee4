#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mpcjoin {

using BigInt = boost::multiprecision::cpp_int;
/// Exact rational, always normalized (denominator > 0, lowest terms).
using Rational = boost::multiprecision::cpp_rational;

inline BigInt numerator_of(const Rational& r) { return boost::multiprecision::numerator(r); }
inline BigInt denominator_of(const Rational& r) { return boost::multiprecision::denominator(r); }

/// Renders `num/den`, or just `num` for integers.
inline std::string to_string(const Rational& r) {
  std::ostringstream os;
  os << numerator_of(r);
  if (denominator_of(r) != 1) os << '/' << denominator_of(r);
  return os.str();
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

inline Rational parse_rational(const std::string& text) {
  auto slash = text.find('/');
  if (slash == std::string::npos) return Rational(BigInt(text));
  return Rational(BigInt(text.substr(0, slash)), BigInt(text.substr(slash + 1)));
}

inline BigInt floor_of(const Rational& r) {
  BigInt q = numerator_of(r) / denominator_of(r);
  if (numerator_of(r) < 0 && q * denominator_of(r) != numerator_of(r)) q -= 1;
  return q;
}

inline BigInt ceil_of(const Rational& r) {
  BigInt f = floor_of(r);
  return f * denominator_of(r) == numerator_of(r) ? f : f + 1;
}

/// Largest integer r with r^k <= x, for x >= 0 and k >= 1.
inline BigInt integer_root_floor(const BigInt& x, unsigned k) {
  if (x < 0 || k == 0) throw std::invalid_argument("integer_root_floor: bad argument");
  if (x < 2 || k == 1) return x;
  BigInt lo = 0;
  BigInt hi = 1;
  while (boost::multiprecision::pow(hi, k) <= x) hi *= 2;
  while (hi - lo > 1) {
    BigInt mid = (lo + hi) / 2;
    if (boost::multiprecision::pow(mid, k) <= x) lo = mid; else hi = mid;
  }
  return lo;
}

/// floor(base^e) for base >= 1 and rational e >= 0. Exact for small
/// numerators and denominators; otherwise (approximated exponents) the
/// floating estimate is used.
inline std::uint64_t floor_power(std::uint64_t base, const Rational& e) {
  if (e < 0) throw std::invalid_argument("floor_power: negative exponent");
  const BigInt num = numerator_of(e);
  const BigInt den = denominator_of(e);
  if (num <= 256 && den <= 256) {
    BigInt raised = boost::multiprecision::pow(BigInt(base), num.convert_to<unsigned>());
    return integer_root_floor(raised, den.convert_to<unsigned>()).convert_to<std::uint64_t>();
  }
  const long double v = std::pow(static_cast<long double>(base), static_cast<long double>(e.convert_to<double>()));
  return static_cast<std::uint64_t>(std::floor(v + 1e-9L));
}

/// Best rational approximation of x with denominator <= max_den (continued fractions).
inline Rational approximate(double x, std::int64_t max_den) {
  if (!std::isfinite(x)) throw std::invalid_argument("approximate: non-finite value");
  const bool neg = x < 0;
  double v = std::fabs(x);
  BigInt p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  for (int iter = 0; iter < 64; ++iter) {
    const double a_d = std::floor(v);
    const BigInt a(static_cast<std::int64_t>(a_d));
    BigInt p2 = a * p1 + p0;
    BigInt q2 = a * q1 + q0;
    if (q2 > max_den) {
      // semiconvergent check
      BigInt t = (BigInt(max_den) - q0) / q1;
      BigInt ps = t * p1 + p0, qs = t * q1 + q0;
      Rational cand_semi(ps, qs), cand_conv(p1, q1);
      double es = std::fabs(to_double(cand_semi) - std::fabs(x));
      double ec = std::fabs(to_double(cand_conv) - std::fabs(x));
      Rational best = (qs > 0 && es < ec) ? cand_semi : cand_conv;
      return neg ? Rational(-best) : best;
    }
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double frac = v - a_d;
    if (frac < 1e-15) break;
    v = 1.0 / frac;
  }
  Rational r(p1, q1);
  return neg ? Rational(-r) : r;
}

}  // namespace mpcjoin
