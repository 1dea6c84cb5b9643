// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace nvqad {

// Scalar codecs for the three storage formats used by block quantization:
//   E2M1  4-bit element values, grid +-{0, 0.5, 1, 1.5, 2, 3, 4, 6}
//   E4M3  8-bit block scales, bias 7, max finite 448, no infinities
//   E8M0  power-of-two block scales, exponent in [-127, 127]
// Encodes round to nearest with ties to the even mantissa bit and saturate
// at the top of the grid. All functions are pure and thread-safe.

enum class RoundingMode : std::uint8_t { NearestEven };

// 1 sign, 2 exponent (bias 1), 1 mantissa; only the low 4 bits are used.
struct Fp4Code {
  std::uint8_t bits = 0;
  friend bool operator==(Fp4Code a, Fp4Code b) { return (a.bits & 0xF) == (b.bits & 0xF); }
};

// 1 sign, 4 exponent (bias 7), 3 mantissa. 0x7F/0xFF are NaN encodings;
// e4m3_encode never produces them.
struct E4m3Value {
  std::uint8_t bits = 0;
  friend bool operator==(E4m3Value a, E4m3Value b) { return a.bits == b.bits; }
};

// Unsigned power-of-two scale 2^exponent.
struct E8m0Scale {
  std::int16_t exponent = 0;
  friend bool operator==(E8m0Scale a, E8m0Scale b) { return a.exponent == b.exponent; }
};

inline constexpr float kFp4Max = 6.0f;    // top of the E2M1 grid
inline constexpr float kE4m3Max = 448.0f; // max finite E4M3 value

float e2m1_decode(Fp4Code code) noexcept;
Fp4Code e2m1_encode(float x, RoundingMode mode = RoundingMode::NearestEven);
Fp4Code fp4_negate(Fp4Code code) noexcept;

float e4m3_decode(E4m3Value v) noexcept;
E4m3Value e4m3_encode(float x);

float e8m0_decode(E8m0Scale s) noexcept;
E8m0Scale e8m0_encode(float x);

// Serialized byte form of an E8M0 exponent: biased by +127, range [0, 254].
std::uint8_t e8m0_to_byte(E8m0Scale s) noexcept;
E8m0Scale e8m0_from_byte(std::uint8_t b);

}  // namespace nvqad
