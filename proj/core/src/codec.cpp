// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/codec.hpp"

#include <cmath>

#include "nvqad/check.hpp"

namespace nvqad {

namespace {

// E2M1 magnitudes indexed by the low 3 bits (exponent<<1 | mantissa).
// Exponent 0 is the subnormal row: {0, 0.5}; normals are (1 + m/2) * 2^(e-1).
constexpr float kE2m1Grid[8] = {0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 3.0f, 4.0f, 6.0f};

// Round a nonnegative value to the nearest integer, ties to even. Exact for
// the inputs used here (value and 0.5 fractions are representable).
long round_nearest_even(float v) {
  float fl = std::floor(v);
  long lo = static_cast<long>(fl);
  float frac = v - fl;
  if (frac > 0.5f) return lo + 1;
  if (frac < 0.5f) return lo;
  return (lo % 2 == 0) ? lo : lo + 1;
}

}  // namespace

float e2m1_decode(Fp4Code code) noexcept {
  float mag = kE2m1Grid[code.bits & 0x7];
  return (code.bits & 0x8) ? -mag : mag;
}

Fp4Code e2m1_encode(float x, RoundingMode /*mode*/) {
  NVQAD_CHECK(std::isfinite(x), "non-finite value " << x);
  std::uint8_t sign = std::signbit(x) ? 0x8 : 0x0;
  float a = std::fabs(x);
  // Threshold chain over grid midpoints. At an exact midpoint the candidate
  // with mantissa bit 0 wins (0, 1, 2, 4 are the even-mantissa magnitudes).
  std::uint8_t mag;
  if (a <= 0.25f)      mag = 0;  // 0.0
  else if (a < 0.75f)  mag = 1;  // 0.5
  else if (a <= 1.25f) mag = 2;  // 1.0
  else if (a < 1.75f)  mag = 3;  // 1.5
  else if (a <= 2.5f)  mag = 4;  // 2.0
  else if (a < 3.5f)   mag = 5;  // 3.0
  else if (a <= 5.0f)  mag = 6;  // 4.0
  else                 mag = 7;  // 6.0, including saturation of |x| > 6
  return Fp4Code{static_cast<std::uint8_t>(sign | mag)};
}

Fp4Code fp4_negate(Fp4Code code) noexcept {
  return Fp4Code{static_cast<std::uint8_t>((code.bits ^ 0x8) & 0xF)};
}

float e4m3_decode(E4m3Value v) noexcept {
  int sign = (v.bits >> 7) & 1;
  int e = (v.bits >> 3) & 0xF;
  int m = v.bits & 0x7;
  float mag;
  if (e == 15 && m == 7) return std::nanf("");  // never produced by encode
  if (e == 0) {
    mag = static_cast<float>(m) * 0x1p-9f;  // subnormal: m * 2^-9
  } else {
    // (1 + m/8) * 2^(e-7) == (8 + m) * 2^(e-10), exact in fp32
    mag = static_cast<float>(8 + m) * std::ldexp(1.0f, e - 10);
  }
  return sign ? -mag : mag;
}

E4m3Value e4m3_encode(float x) {
  NVQAD_CHECK(std::isfinite(x), "non-finite value " << x);
  std::uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
  float a = std::fabs(x);
  if (a == 0.0f) return E4m3Value{sign};
  if (a > kE4m3Max) return E4m3Value{static_cast<std::uint8_t>(sign | 0x7E)};
  int e = std::ilogb(a);  // a = f * 2^e with f in [1, 2)
  if (e < -6) {
    // Subnormal target: quantize a / 2^-9 to an integer step in [0, 8].
    long q = round_nearest_even(std::ldexp(a, 9));
    if (q == 0) return E4m3Value{sign};
    if (q >= 8) return E4m3Value{static_cast<std::uint8_t>(sign | 0x08)};  // min normal
    return E4m3Value{static_cast<std::uint8_t>(sign | static_cast<std::uint8_t>(q))};
  }
  // Normal target: mantissa steps of 2^(e-3), so scale to units of it.
  long q = round_nearest_even(std::ldexp(a, 3 - e));  // in [8, 16]
  if (q == 16) {
    q = 8;
    ++e;
  }
  if (e > 8) return E4m3Value{static_cast<std::uint8_t>(sign | 0x7E)};  // saturate at 448
  return E4m3Value{static_cast<std::uint8_t>(sign | ((e + 7) << 3) | static_cast<std::uint8_t>(q - 8))};
}

float e8m0_decode(E8m0Scale s) noexcept {
  return std::ldexp(1.0f, s.exponent);
}

E8m0Scale e8m0_encode(float x) {
  NVQAD_CHECK(std::isfinite(x) && x > 0.0f, "scale must be positive and finite, got " << x);
  int e = std::ilogb(x);  // floor(log2 x)
  if (e < -127) e = -127;
  if (e > 127) e = 127;
  return E8m0Scale{static_cast<std::int16_t>(e)};
}

std::uint8_t e8m0_to_byte(E8m0Scale s) noexcept {
  return static_cast<std::uint8_t>(s.exponent + 127);
}

E8m0Scale e8m0_from_byte(std::uint8_t b) {
  NVQAD_CHECK(b != 255, "byte 255 is not a valid biased exponent");
  return E8m0Scale{static_cast<std::int16_t>(static_cast<int>(b) - 127)};
}

}  // namespace nvqad
