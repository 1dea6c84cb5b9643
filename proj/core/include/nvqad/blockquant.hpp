// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvqad/codec.hpp"

namespace nvqad {

// Two-level block quantization along the last (contiguous) dimension.
//
//   NVFP4: blocks of 16, E4M3 block scales, per-tensor FP32 scale
//          tensor_scale = amax / (6 * 448).
//   MXFP4: blocks of 32, E8M0 (power-of-two) block scales, tensor_scale 1.
//
// Per block: raw_scale = blockmax / fp4_max / tensor_scale, rounded onto the
// scale grid (nearest-even for E4M3, floor for E8M0); elements are divided by
// decode(block_scale) * tensor_scale and rounded onto the E2M1 grid, with
// post-rounding saturation at +-6. All-zero blocks store the smallest
// positive scale and zero codes. A positive raw scale that would round to
// zero is clamped to the smallest positive scale so dequantize stays finite.
//
// The arithmetic convention is fixed so independent implementations agree
// bitwise: every division and product above is a single fp32 rounding, in the
// order written, and the effective divisor is max(scale * tensor_scale,
// 2^-126). Quantize-dequantize at a fixed tensor_scale is bit-exact
// idempotent whenever block scales land at or above the E4M3 normal range
// (blockmax / amax >= 2^-6 / 448 for NVFP4); deeper subnormal scales can
// re-round by one grid step on the second pass.

enum class QuantFormat : std::uint8_t { NVFP4 = 0, MXFP4 = 1 };

const char* quant_format_name(QuantFormat f);

struct QuantConfig {
  QuantFormat format = QuantFormat::NVFP4;
  int block_size = 16;
  float fp4_max = kFp4Max;
  float scale_max = kE4m3Max;  // meaningful for NVFP4 only

  static QuantConfig nvfp4() { return QuantConfig{QuantFormat::NVFP4, 16, kFp4Max, kE4m3Max}; }
  static QuantConfig mxfp4() { return QuantConfig{QuantFormat::MXFP4, 32, kFp4Max, kE4m3Max}; }
};

// Codes are packed two per byte, low nibble first, over the padded row
// (last dimension rounded up to a block multiple; padding codes are zero).
// block_scales holds E4M3 bits for NVFP4 and biased E8M0 bytes for MXFP4.
struct QuantizedTensor {
  std::vector<std::int64_t> shape;
  QuantConfig config;
  float tensor_scale = 1.0f;
  std::vector<std::uint8_t> block_scales;
  std::vector<std::uint8_t> packed;

  std::int64_t n_elements() const;
  std::int64_t last_dim() const { return shape.empty() ? 0 : shape.back(); }
  std::int64_t rows() const;
  std::int64_t padded_last() const;
  std::int64_t blocks_per_row() const;
  std::int64_t n_blocks() const { return rows() * blocks_per_row(); }

  Fp4Code code_at(std::int64_t padded_index) const;
  float block_scale_value(std::int64_t block_index) const;
  // Largest magnitude representable inside a block: fp4_max * scale * tensor_scale.
  float block_repr_max(std::int64_t block_index) const;
};

struct CalibrationState {
  float amax = 0.0f;
  std::uint64_t samples_seen = 0;
};

struct ErrorStats {
  double mse = 0.0;
  double sqnr_db = 0.0;        // 10*log10(sum x^2 / sum err^2); +inf sentinel when err == 0
  double clip_fraction = 0.0;  // fraction of elements with |x| > their block's repr max
  float amax_in = 0.0f;
};

CalibrationState calibrate_update(CalibrationState state, std::span<const float> x);

float tensor_scale_from_amax(float amax, const QuantConfig& config);

QuantizedTensor quantize_tensor(std::span<const float> x, std::vector<std::int64_t> shape,
                                const QuantConfig& config, float tensor_scale);

std::vector<float> dequantize_tensor(const QuantizedTensor& q);

// Reference composition dequantize(quantize(x)); treats x as [n/last_dim, last_dim].
std::vector<float> fake_quantize(std::span<const float> x, std::int64_t last_dim,
                                 const QuantConfig& config, float tensor_scale);

// Fused kernel equivalent of fake_quantize, bit-exact against it. When
// sat_mask is non-null it receives one byte per element: 1 where the element
// is inside its block's representable range (|x/divisor| <= fp4_max), 0 where
// it saturated. dst may alias src.
void fake_quantize_into(float* dst, const float* src, std::int64_t n, std::int64_t last_dim,
                        const QuantConfig& config, float tensor_scale,
                        std::uint8_t* sat_mask = nullptr);

// amax of x (error on non-finite); the dynamic per-batch calibration scan.
float abs_max(std::span<const float> x);

ErrorStats error_stats(std::span<const float> x, std::span<const float> xhat);
ErrorStats error_stats(std::span<const float> x, const QuantizedTensor& q);

void write_nvqt(const std::string& path, const QuantizedTensor& q);
QuantizedTensor read_nvqt(const std::string& path);

}  // namespace nvqad
