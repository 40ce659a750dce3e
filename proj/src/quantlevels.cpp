#include "sqw/quantlevels.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sqw {

namespace {

// Exponent p such that |w| rounds to 2^p under the interval rule, before any
// clamping: p = e+1 when the mantissa is >= 1.5, else e. Exact for every
// finite nonzero double; avoids floor(log2(...)) rounding hazards at the
// 3*2^(p-1) interval boundaries.
int round_exponent(double aw) {
  const int e = std::ilogb(aw);
  const double m = std::scalbn(aw, -e);  // in [1, 2)
  return (m >= 1.5) ? e + 1 : e;
}

}  // namespace

bool level_set_valid(const LevelSet& ls) {
  if (ls.bit_width < 2 || ls.bit_width > 16) return false;
  if (ls.n2 > ls.n1) return false;
  return ls.levels() == (1 << (ls.bit_width - 1)) - 1;
}

void check_level_set(const LevelSet& ls) {
  if (!level_set_valid(ls)) throw std::invalid_argument("invalid level set");
}

LevelSet derive_level_set(double max_abs, int bit_width,
                          std::optional<double> max_level_override) {
  if (bit_width < 2 || bit_width > 16)
    throw std::invalid_argument("bit_width must be in [2, 16]");

  int n1 = 0;
  if (max_level_override.has_value()) {
    const double ov = *max_level_override;
    if (!std::isfinite(ov) || ov <= 0.0)
      throw std::invalid_argument("max level override must be a positive finite value");
    const int e = std::ilogb(ov);
    if (std::scalbn(ov, -e) != 1.0)
      std::fprintf(stderr, "sqw: max level %g is not a power of two, rounding down to 2^%d\n",
                   ov, e);
    n1 = e;
  } else {
    if (!std::isfinite(max_abs) || max_abs <= 0.0)
      throw std::runtime_error("degenerate level set: tensor max |w| is zero and no max level override given");
    n1 = round_exponent(max_abs);
  }

  LevelSet ls;
  ls.bit_width = bit_width;
  ls.n1 = n1;
  ls.n2 = n1 - ((1 << (bit_width - 1)) - 1) + 1;
  return ls;
}

double quantize_value(double w, const LevelSet& ls) {
  check_level_set(ls);
  if (!std::isfinite(w)) throw std::invalid_argument("quantize_value: non-finite input");
  if (w == 0.0) return 0.0;

  const double aw = std::fabs(w);
  int p = round_exponent(aw);
  if (p < ls.n2) return 0.0;   // |w| < 3*2^(n2-2)
  if (p > ls.n1) p = ls.n1;    // |w| >= 3*2^(n1-1)
  const double mag = std::scalbn(1.0, p);
  return std::signbit(w) ? -mag : mag;
}

QuantCode encode_level(double w_q, const LevelSet& ls) {
  check_level_set(ls);
  if (w_q == 0.0) return QuantCode{+1, 0};
  if (!std::isfinite(w_q)) throw std::invalid_argument("not a level");

  int e = 0;
  const double frac = std::frexp(std::fabs(w_q), &e);
  if (frac != 0.5) throw std::invalid_argument("not a level");
  const int p = e - 1;
  if (p < ls.n2 || p > ls.n1) throw std::invalid_argument("not a level");

  QuantCode c;
  c.sign = std::signbit(w_q) ? -1 : +1;
  c.magnitude_index = static_cast<uint16_t>(ls.n1 - p + 1);
  return c;
}

double decode_level(const QuantCode& c, const LevelSet& ls) {
  check_level_set(ls);
  if (c.magnitude_index == 0) return 0.0;
  if (c.magnitude_index > ls.levels())
    throw std::invalid_argument("code magnitude index out of range");
  const int p = ls.n1 - (static_cast<int>(c.magnitude_index) - 1);
  const double mag = std::scalbn(1.0, p);
  return c.sign < 0 ? -mag : mag;
}

uint32_t code_bits(const QuantCode& c, const LevelSet& ls) {
  check_level_set(ls);
  if (c.magnitude_index >= (1u << (ls.bit_width - 1)))
    throw std::invalid_argument("code magnitude index out of range");
  const uint32_t sign_bit = (c.sign < 0 && c.magnitude_index != 0) ? 1u : 0u;
  return (sign_bit << (ls.bit_width - 1)) | c.magnitude_index;
}

QuantCode code_from_bits(uint32_t bits, const LevelSet& ls) {
  check_level_set(ls);
  if (bits >= (1u << ls.bit_width)) throw std::invalid_argument("code bits out of range");
  QuantCode c;
  c.magnitude_index = static_cast<uint16_t>(bits & ((1u << (ls.bit_width - 1)) - 1));
  // index 0 is zero; normalize to the canonical positive sign
  c.sign = (c.magnitude_index != 0 && (bits >> (ls.bit_width - 1))) ? -1 : +1;
  if (c.magnitude_index > ls.levels())
    throw std::invalid_argument("code magnitude index out of range");
  return c;
}

std::vector<double> level_magnitudes(const LevelSet& ls) {
  check_level_set(ls);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(ls.levels()));
  for (int p = ls.n1; p >= ls.n2; --p) out.push_back(std::scalbn(1.0, p));
  return out;
}

}  // namespace sqw
