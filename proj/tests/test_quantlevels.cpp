#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "oracle_quant.hpp"
#include "sqw/quantlevels.hpp"
#include "sqw/rng.hpp"

using namespace sqw;
using sqw_test::oracle_quantize;

TEST_CASE("derive_level_set picks the exponent the max weight rounds to") {
  const LevelSet a = derive_level_set(0.9, 3);
  CHECK(a.n1 == 0);
  CHECK(a.n2 == -2);
  CHECK(a.levels() == 3);

  const LevelSet b = derive_level_set(1.0, 2);
  CHECK(b.n1 == 0);
  CHECK(b.n2 == 0);
  CHECK(b.levels() == 1);

  const LevelSet c = derive_level_set(0.9, 5, 4.0);
  CHECK(c.n1 == 2);
  CHECK(c.n2 == -12);
  CHECK(c.levels() == 15);

  // A non-power-of-two override rounds down (with a warning on stderr).
  const LevelSet d = derive_level_set(0.9, 3, 5.0);
  CHECK(d.n1 == 2);
}

TEST_CASE("derive_level_set rejects degenerate inputs") {
  CHECK_THROWS_AS(derive_level_set(0.0, 4), std::runtime_error);
  CHECK_THROWS_AS(derive_level_set(-1.0, 4), std::runtime_error);
  CHECK_THROWS_AS(derive_level_set(0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(derive_level_set(0.5, 17), std::invalid_argument);
  CHECK_THROWS_AS(derive_level_set(0.5, 4, -2.0), std::invalid_argument);
  // Zero max weight is fine when the override pins the top level.
  CHECK(derive_level_set(0.0, 4, 1.0).n1 == 0);
}

TEST_CASE("quantize_value frozen examples") {
  const LevelSet ls{3, 0, -2};  // levels {1, 1/2, 1/4} plus zero
  CHECK(quantize_value(0.3, ls) == 0.25);
  CHECK(quantize_value(0.05, ls) == 0.0);
  CHECK(quantize_value(0.375, ls) == 0.5);     // boundary 3*2^-3 goes up
  CHECK(quantize_value(0.1875, ls) == 0.25);   // lower bound is inclusive
  CHECK(quantize_value(5.0, ls) == 1.0);       // clamp to 2^n1
  CHECK(quantize_value(-0.3, ls) == -0.25);
  CHECK(quantize_value(1.5, ls) == 1.0);       // 3*2^(n1-1) boundary clamps
  CHECK(quantize_value(0.0, ls) == 0.0);
  CHECK_THROWS_AS(quantize_value(std::nan(""), ls), std::invalid_argument);
}

TEST_CASE("quantize_value equals the interval-scan oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 200000; ++trial) {
    const int bits = rng.randint(2, 9);
    const double max_abs = std::exp(rng.uniform(std::log(1e-3), std::log(64.0)));
    const LevelSet ls = derive_level_set(max_abs, bits);
    const double w = rng.uniform(-2.0 * max_abs, 2.0 * max_abs);
    CHECK(quantize_value(w, ls) == oracle_quantize(w, ls));
  }
}

TEST_CASE("quantize_value hits every interval boundary exactly") {
  for (int bits = 2; bits <= 8; ++bits) {
    const LevelSet ls = derive_level_set(1.0, bits);
    for (int p = ls.n2; p <= ls.n1; ++p) {
      const double lo = std::ldexp(3.0, p - 2);
      const double hi = std::ldexp(3.0, p - 1);
      CHECK(quantize_value(lo, ls) == oracle_quantize(lo, ls));
      CHECK(quantize_value(std::nextafter(lo, 0.0), ls) ==
            oracle_quantize(std::nextafter(lo, 0.0), ls));
      CHECK(quantize_value(std::nextafter(hi, 0.0), ls) ==
            oracle_quantize(std::nextafter(hi, 0.0), ls));
      CHECK(quantize_value(hi, ls) == oracle_quantize(hi, ls));
    }
  }
}

TEST_CASE("quantization properties: idempotent, odd, monotone, in-range") {
  Rng rng(42);
  for (int trial = 0; trial < 20000; ++trial) {
    const int bits = rng.randint(2, 9);
    const LevelSet ls = derive_level_set(std::exp(rng.uniform(-4.0, 3.0)), bits);
    const double w = rng.uniform(-8.0, 8.0);
    const double q = quantize_value(w, ls);

    CHECK(quantize_value(q, ls) == q);
    CHECK(quantize_value(-w, ls) == -q);

    const double w2 = rng.uniform(-8.0, 8.0);
    if (w <= w2) CHECK(q <= quantize_value(w2, ls));

    // Result is always encodable, and decoding restores it exactly.
    const QuantCode c = encode_level(q, ls);
    CHECK(decode_level(c, ls) == q);
  }
}

TEST_CASE("encode_level frozen examples and bijection") {
  const LevelSet ls{3, 0, -2};
  CHECK(encode_level(0.25, ls) == QuantCode{+1, 3});
  CHECK(encode_level(-1.0, ls) == QuantCode{-1, 1});
  CHECK(encode_level(0.0, ls) == QuantCode{+1, 0});
  CHECK(encode_level(-0.0, ls) == QuantCode{+1, 0});
  CHECK_THROWS_WITH_AS(encode_level(0.3, ls), "not a level", std::invalid_argument);
  CHECK_THROWS_WITH_AS(encode_level(2.0, ls), "not a level", std::invalid_argument);
  CHECK_THROWS_WITH_AS(encode_level(0.125, ls), "not a level", std::invalid_argument);

  for (int bits = 2; bits <= 10; ++bits) {
    const LevelSet full = derive_level_set(0.7, bits);
    std::set<uint32_t> seen;
    for (const double mag : level_magnitudes(full)) {
      for (const double v : {mag, -mag}) {
        const QuantCode c = encode_level(v, full);
        CHECK(decode_level(c, full) == v);
        CHECK(seen.insert(code_bits(c, full)).second);  // all codes distinct
      }
    }
    const QuantCode zero = encode_level(0.0, full);
    CHECK(seen.insert(code_bits(zero, full)).second);
    CHECK(static_cast<int>(seen.size()) == 2 * full.levels() + 1);
  }
}

TEST_CASE("code_bits round-trips through code_from_bits") {
  Rng rng(43);
  for (int trial = 0; trial < 5000; ++trial) {
    const int bits = rng.randint(2, 11);
    const LevelSet ls = derive_level_set(1.0, bits);
    QuantCode c;
    c.magnitude_index = static_cast<uint16_t>(rng.randint(0, ls.levels() + 1));
    c.sign = rng.uniform() < 0.5 ? -1 : +1;
    if (c.magnitude_index == 0) c.sign = +1;  // canonical zero
    const QuantCode back = code_from_bits(code_bits(c, ls), ls);
    CHECK(back == c);
  }
  // A negative-zero bit pattern decodes to the canonical positive zero.
  const LevelSet ls = derive_level_set(1.0, 4);
  const QuantCode z = code_from_bits(1u << 3, ls);
  CHECK(z == QuantCode{+1, 0});
}

TEST_CASE("level_set_valid rejects malformed sets") {
  CHECK(level_set_valid(LevelSet{3, 0, -2}));
  CHECK_FALSE(level_set_valid(LevelSet{3, 0, 0}));    // wrong level count
  CHECK_FALSE(level_set_valid(LevelSet{1, 0, 0}));    // bit width too small
  CHECK_FALSE(level_set_valid(LevelSet{3, -3, -1}));  // n2 > n1
  CHECK_THROWS_AS(check_level_set(LevelSet{}), std::invalid_argument);
}

TEST_CASE("level_magnitudes descends and matches decode order") {
  const LevelSet ls = derive_level_set(0.9, 4);  // n1=0, levels 7
  const auto mags = level_magnitudes(ls);
  REQUIRE(static_cast<int>(mags.size()) == ls.levels());
  for (size_t i = 0; i + 1 < mags.size(); ++i) CHECK(mags[i] == 2.0 * mags[i + 1]);
  for (size_t i = 0; i < mags.size(); ++i) {
    const QuantCode c{+1, static_cast<uint16_t>(i + 1)};
    CHECK(decode_level(c, ls) == mags[i]);
  }
}
