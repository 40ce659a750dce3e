#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace sqw {

// A power-of-two level set: the representable weight values are
// {±2^n1, ..., ±2^n2} ∪ {0} with n2 <= n1. The number of exponent levels
// K = n1 - n2 + 1 always equals 2^(bit_width-1) - 1: a stored code is one
// sign bit plus a (bit_width-1)-bit magnitude index, index 0 meaning zero.
struct LevelSet {
  int bit_width = 0;  // bits per stored code, in [2, 16]
  int n1 = 0;         // largest exponent
  int n2 = 0;         // smallest exponent

  int levels() const { return n1 - n2 + 1; }
};

// Sign/magnitude code for one quantized value. magnitude_index 0 encodes
// zero (canonically with sign +1); index i >= 1 encodes exponent n1-(i-1).
struct QuantCode {
  int8_t sign = +1;             // +1 or -1
  uint16_t magnitude_index = 0; // in [0, 2^(bit_width-1) - 1]

  bool operator==(const QuantCode&) const = default;
};

bool level_set_valid(const LevelSet& ls);
void check_level_set(const LevelSet& ls);

// Builds the level set for a tensor whose max absolute value is max_abs.
// n1 = floor(log2(4*max_abs/3)), i.e. the exponent max_abs itself rounds to
// under the quantization intervals. If max_level_override is given it pins
// 2^n1 to that value instead (rounded down to a power of two if necessary).
LevelSet derive_level_set(double max_abs, int bit_width,
                          std::optional<double> max_level_override = std::nullopt);

// Rounds w onto the level set:
//   0                if |w| <  3*2^(n2-2)
//   sign(w) * 2^n1   if |w| >= 3*2^(n1-1)
//   sign(w) * 2^p    for the unique p in [n2, n1] with 3*2^(p-2) <= |w| < 3*2^(p-1)
// Interval bounds are closed below, open above: ties go to the larger exponent.
double quantize_value(double w, const LevelSet& ls);

// Bijection between P_l ∪ {0} and codes. encode_level throws "not a level"
// for any value outside the set; decode_level(encode_level(x)) == x exactly.
QuantCode encode_level(double w_q, const LevelSet& ls);
double decode_level(const QuantCode& c, const LevelSet& ls);

// Raw bit image of a code: (sign_bit << (bit_width-1)) | magnitude_index.
uint32_t code_bits(const QuantCode& c, const LevelSet& ls);
QuantCode code_from_bits(uint32_t bits, const LevelSet& ls);

// All nonzero magnitudes 2^p, p = n1..n2 (descending, matching index order).
std::vector<double> level_magnitudes(const LevelSet& ls);

}  // namespace sqw
