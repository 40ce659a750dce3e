#pragma once

#include <cmath>
#include <limits>

#include "sqw/quantlevels.hpp"

namespace sqw_test {

// Reference quantizer: a linear scan over the explicit half-open intervals
// [3*2^(p-2), 3*2^(p-1)). Deliberately shares no code or technique with the
// mantissa-based production path.
inline double oracle_quantize(double w, const sqw::LevelSet& ls) {
  const double a = std::fabs(w);
  const double s = std::signbit(w) ? -1.0 : 1.0;
  if (a < std::ldexp(3.0, ls.n2 - 2)) return 0.0;
  if (a >= std::ldexp(3.0, ls.n1 - 1)) return s * std::ldexp(1.0, ls.n1);
  for (int p = ls.n2; p <= ls.n1; ++p)
    if (a >= std::ldexp(3.0, p - 2) && a < std::ldexp(3.0, p - 1))
      return s * std::ldexp(1.0, p);
  return std::numeric_limits<double>::quiet_NaN();  // unreachable for valid sets
}

}  // namespace sqw_test
