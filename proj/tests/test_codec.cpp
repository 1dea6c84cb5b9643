// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nvqad/check.hpp"
#include "nvqad/codec.hpp"
#include "nvqad/rng.hpp"

using namespace nvqad;

namespace {

// Independent enumeration of the E2M1 grid straight from the bit layout:
// 1 sign, 2 exponent (bias 1), 1 mantissa, exponent 0 subnormal.
float e2m1_oracle_decode(std::uint8_t bits) {
  int sign = (bits >> 3) & 1;
  int e = (bits >> 1) & 3;
  int m = bits & 1;
  float mag = (e == 0) ? 0.5f * m : (1.0f + 0.5f * m) * std::ldexp(1.0f, e - 1);
  return sign ? -mag : mag;
}

// Brute-force nearest-magnitude search with ties to the even mantissa bit.
Fp4Code e2m1_oracle_encode(float x) {
  std::uint8_t sign = std::signbit(x) ? 0x8 : 0x0;
  float a = std::fabs(x);
  if (a > 6.0f) return Fp4Code{static_cast<std::uint8_t>(sign | 7)};
  std::uint8_t best = 0;
  float best_d = 1e30f;
  for (std::uint8_t c = 0; c < 8; ++c) {
    float g = e2m1_oracle_decode(c);
    float d = std::fabs(a - g);
    if (d < best_d) {
      best_d = d;
      best = c;
    } else if (d == best_d && (c & 1) == 0) {
      best = c;  // tie: prefer even mantissa bit
    }
  }
  return Fp4Code{static_cast<std::uint8_t>(sign | best)};
}

// All finite E4M3 values from the bit layout, bias 7, subnormal step 2^-9.
double e4m3_oracle_decode(std::uint8_t bits) {
  int sign = (bits >> 7) & 1;
  int e = (bits >> 3) & 0xF;
  int m = bits & 7;
  double mag = (e == 0) ? m * std::ldexp(1.0, -9) : (1.0 + m / 8.0) * std::ldexp(1.0, e - 7);
  return sign ? -mag : mag;
}

bool e4m3_is_nan_code(std::uint8_t bits) { return (bits & 0x7F) == 0x7F; }

// Brute-force nearest finite E4M3 value, ties to even mantissa bit,
// saturating beyond 448.
std::uint8_t e4m3_oracle_encode(float x) {
  std::uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
  double a = std::fabs(static_cast<double>(x));
  if (a > 448.0) return sign | 0x7E;
  std::uint8_t best = 0;
  double best_d = 1e300;
  for (int b = 0; b < 0x7F; ++b) {  // nonnegative codes below the NaN code
    double g = e4m3_oracle_decode(static_cast<std::uint8_t>(b));
    double d = std::fabs(a - g);
    if (d < best_d || (d == best_d && (b & 1) == 0 && (best & 1) == 1)) {
      best_d = d;
      best = static_cast<std::uint8_t>(b);
    }
  }
  return sign | best;
}

}  // namespace

TEST_CASE("e2m1 decode hits the documented grid") {
  CHECK(e2m1_decode(Fp4Code{0b0000}) == 0.0f);
  CHECK(!std::signbit(e2m1_decode(Fp4Code{0b0000})));
  CHECK(std::signbit(e2m1_decode(Fp4Code{0b1000})));
  CHECK(e2m1_decode(Fp4Code{0b1000}) == 0.0f);  // -0.0 compares equal to 0.0
  CHECK(e2m1_decode(Fp4Code{0b0111}) == 6.0f);
  CHECK(e2m1_decode(Fp4Code{0b1010}) == -1.0f);

  for (std::uint8_t c = 0; c < 16; ++c) {
    CAPTURE(static_cast<int>(c));
    float got = e2m1_decode(Fp4Code{c});
    float want = e2m1_oracle_decode(c);
    CHECK(got == want);
    if (want != 0.0f) CHECK(std::signbit(got) == std::signbit(want));
  }
}

TEST_CASE("e2m1 negate mirrors nonzero magnitudes") {
  for (std::uint8_t c = 0; c < 16; ++c) {
    float v = e2m1_decode(Fp4Code{c});
    CHECK(e2m1_decode(fp4_negate(Fp4Code{c})) == -v);
  }
}

TEST_CASE("e2m1 encode: frozen examples") {
  CHECK(e2m1_decode(e2m1_encode(2.5f)) == 2.0f);
  CHECK(e2m1_decode(e2m1_encode(100.0f)) == 6.0f);
  float neg_small = e2m1_decode(e2m1_encode(-0.24f));
  CHECK(neg_small == 0.0f);
  CHECK(std::signbit(neg_small));  // sign of zero preserved
  CHECK(e2m1_decode(e2m1_encode(-2.5f)) == -2.0f);
  CHECK(e2m1_decode(e2m1_encode(-100.0f)) == -6.0f);
}

TEST_CASE("e2m1 encode: all midpoints resolve to the even mantissa bit") {
  struct { float x, want; } cases[] = {
      {0.25f, 0.0f}, {0.75f, 1.0f}, {1.25f, 1.0f}, {1.75f, 2.0f},
      {2.5f, 2.0f},  {3.5f, 4.0f},  {5.0f, 4.0f},
  };
  for (auto [x, want] : cases) {
    CAPTURE(x);
    CHECK(e2m1_decode(e2m1_encode(x)) == want);
    CHECK(e2m1_decode(e2m1_encode(-x)) == -want);
  }
}

TEST_CASE("e2m1 encode rejects non-finite input") {
  CHECK_THROWS_AS(e2m1_encode(std::nanf("")), Error);
  CHECK_THROWS_AS(e2m1_encode(INFINITY), Error);
  CHECK_THROWS_AS(e2m1_encode(-INFINITY), Error);
}

TEST_CASE("e2m1 exhaustive round-trip (zeros map by sign)") {
  for (std::uint8_t c = 0; c < 16; ++c) {
    CAPTURE(static_cast<int>(c));
    float v = e2m1_decode(Fp4Code{c});
    Fp4Code rt = e2m1_encode(v);
    if (v == 0.0f) {
      CHECK(rt.bits == (std::signbit(v) ? 0x8 : 0x0));
    } else {
      CHECK(rt == Fp4Code{c});
    }
  }
}

TEST_CASE("e2m1 encode is monotone") {
  std::vector<float> xs;
  for (float x = -7.0f; x <= 7.0f; x += 0.0113f) xs.push_back(x);
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) xs.push_back(rng.uniform(-8.0f, 8.0f));
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    float a = e2m1_decode(e2m1_encode(xs[i - 1]));
    float b = e2m1_decode(e2m1_encode(xs[i]));
    CAPTURE(xs[i - 1]);
    CAPTURE(xs[i]);
    CHECK(a <= b);
  }
}

TEST_CASE("e2m1 encode equals brute-force oracle on 1e5 seeded samples") {
  Rng rng(20260816);
  int mismatches = 0;
  for (int i = 0; i < 100000; ++i) {
    float x = rng.uniform(-10.0f, 10.0f);
    Fp4Code got = e2m1_encode(x);
    Fp4Code want = e2m1_oracle_encode(x);
    if (!(got == want)) {
      ++mismatches;
      CAPTURE(x);
      CHECK(got == want);
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("e4m3 decode formula and exactness") {
  CHECK(e4m3_decode(E4m3Value{0x00}) == 0.0f);
  CHECK(e4m3_decode(E4m3Value{0x7E}) == 448.0f);
  CHECK(e4m3_decode(E4m3Value{0xFE}) == -448.0f);
  CHECK(e4m3_decode(E4m3Value{0x01}) == 0x1p-9f);  // smallest subnormal
  CHECK(e4m3_decode(E4m3Value{0x08}) == 0x1p-6f);  // smallest normal
  CHECK(std::isnan(e4m3_decode(E4m3Value{0x7F})));
  CHECK(std::isnan(e4m3_decode(E4m3Value{0xFF})));
  for (int b = 0; b < 256; ++b) {
    if (e4m3_is_nan_code(static_cast<std::uint8_t>(b))) continue;
    double want = e4m3_oracle_decode(static_cast<std::uint8_t>(b));
    float got = e4m3_decode(E4m3Value{static_cast<std::uint8_t>(b)});
    CAPTURE(b);
    CHECK(static_cast<double>(got) == want);  // every value exact in fp32
  }
}

TEST_CASE("e4m3 exhaustive round-trip over all finite codes") {
  for (int b = 0; b < 256; ++b) {
    if (e4m3_is_nan_code(static_cast<std::uint8_t>(b))) continue;
    float v = e4m3_decode(E4m3Value{static_cast<std::uint8_t>(b)});
    E4m3Value rt = e4m3_encode(v);
    CAPTURE(b);
    if (v == 0.0f) {
      CHECK((rt.bits & 0x7F) == 0);  // zeros map by sign
      CHECK((rt.bits & 0x80) == (b & 0x80));
    } else {
      CHECK(rt.bits == static_cast<std::uint8_t>(b));
    }
  }
}

TEST_CASE("e4m3 encode: frozen examples and saturation") {
  CHECK(e4m3_decode(e4m3_encode(448.0f)) == 448.0f);
  CHECK(e4m3_decode(e4m3_encode(0.0f)) == 0.0f);
  CHECK(e4m3_decode(e4m3_encode(500.0f)) == 448.0f);
  CHECK(e4m3_decode(e4m3_encode(-500.0f)) == -448.0f);
  CHECK(e4m3_decode(e4m3_encode(1e30f)) == 448.0f);
  // Tie between subnormal steps 1 and 2 resolves to the even code.
  CHECK(e4m3_encode(1.5f * 0x1p-9f).bits == 0x02);
  // Deep underflow rounds to zero: nearest grid point of 2^-11 is 0.
  CHECK(e4m3_encode(0x1p-11f).bits == 0x00);
  CHECK_THROWS_AS(e4m3_encode(INFINITY), Error);
  CHECK_THROWS_AS(e4m3_encode(std::nanf("")), Error);
}

TEST_CASE("e4m3 encode equals brute-force oracle on seeded samples") {
  Rng rng(77);
  for (int i = 0; i < 100000; ++i) {
    float x;
    switch (i % 3) {
      case 0: x = rng.uniform(-500.0f, 500.0f); break;
      case 1: x = rng.uniform(-1.0f, 1.0f); break;
      default: x = rng.uniform(-0.02f, 0.02f); break;  // subnormal territory
    }
    E4m3Value got = e4m3_encode(x);
    std::uint8_t want = e4m3_oracle_encode(x);
    CAPTURE(x);
    if (e4m3_decode(got) == 0.0f && e4m3_oracle_decode(want) == 0.0) {
      CHECK((got.bits & 0x80) == (want & 0x80));
    } else {
      CHECK(got.bits == want);
    }
  }
}

TEST_CASE("e8m0 encode floors log2 and rejects non-positive input") {
  CHECK(e8m0_encode(1.0f).exponent == 0);
  CHECK(e8m0_encode(5.0f).exponent == 2);
  CHECK(e8m0_encode(0.3f).exponent == -2);
  CHECK(e8m0_encode(0.5f).exponent == -1);
  CHECK(e8m0_encode(0x1p-130f).exponent == -127);  // clamped
  CHECK(e8m0_encode(3e38f).exponent == 127);
  CHECK_THROWS_AS(e8m0_encode(0.0f), Error);
  CHECK_THROWS_AS(e8m0_encode(-1.0f), Error);
  CHECK_THROWS_AS(e8m0_encode(INFINITY), Error);
}

TEST_CASE("e8m0 decode is a positive power of two; byte form round-trips") {
  for (int e = -127; e <= 127; ++e) {
    E8m0Scale s{static_cast<std::int16_t>(e)};
    float v = e8m0_decode(s);
    CHECK(v > 0.0f);
    CHECK(std::ldexp(1.0f, std::ilogb(v)) == v);  // exact power of two
    CHECK(e8m0_from_byte(e8m0_to_byte(s)) == s);
  }
  CHECK_THROWS_AS(e8m0_from_byte(255), Error);
}

TEST_CASE("e8m0 floor rounding leaves x / scale in [1, 2)") {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    float x = rng.uniform(1e-6f, 1e6f);
    float s = e8m0_decode(e8m0_encode(x));
    CHECK(x / s >= 1.0f);
    CHECK(x / s < 2.0f);
  }
}
