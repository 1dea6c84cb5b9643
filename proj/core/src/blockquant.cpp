// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/blockquant.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "nvqad/check.hpp"
#include "nvqad/kernels.hpp"
#include "nvqad/parallel.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#define NVQAD_AVX512 1
#endif

namespace nvqad {

namespace {

constexpr float kDivisorFloor = 0x1p-126f;  // keeps x / divisor finite-by-construction

// Nearest E2M1 grid magnitude for a = |x/divisor|, ties to the even mantissa
// bit. NaN falls through every comparison to 0; callers reject non-finite
// input separately. Infinite a saturates to 6.
inline float e2m1_chain(float a) {
  if (a <= 0.25f) return 0.0f;
  if (a < 0.75f) return 0.5f;
  if (a <= 1.25f) return 1.0f;
  if (a < 1.75f) return 1.5f;
  if (a <= 2.5f) return 2.0f;
  if (a < 3.5f) return 3.0f;
  if (a <= 5.0f) return 4.0f;
  return 6.0f;
}

inline std::uint8_t e2m1_chain_code(float a) {
  if (a <= 0.25f) return 0;
  if (a < 0.75f) return 1;
  if (a <= 1.25f) return 2;
  if (a < 1.75f) return 3;
  if (a <= 2.5f) return 4;
  if (a < 3.5f) return 5;
  if (a <= 5.0f) return 6;
  return 7;
}

// Normative block-scale derivation: raw = (blockmax / fp4_max) / tensor_scale
// with one fp32 rounding per division, encoded on the format's scale grid; a
// scale that decodes to zero (all-zero block, or rounding underflow) is
// clamped to the smallest positive representable scale.
inline std::uint8_t derive_scale_byte(float bmax, const QuantConfig& cfg, float tensor_scale) {
  float raw = (bmax / cfg.fp4_max) / tensor_scale;
  if (cfg.format == QuantFormat::NVFP4) {
    E4m3Value s = e4m3_encode(raw);
    if (e4m3_decode(s) == 0.0f) s = E4m3Value{0x01};
    return s.bits;
  }
  if (raw <= 0.0f) return e8m0_to_byte(E8m0Scale{-127});
  return e8m0_to_byte(e8m0_encode(raw));
}

inline float scale_value_from_byte(std::uint8_t byte, QuantFormat format) {
  return format == QuantFormat::NVFP4 ? e4m3_decode(E4m3Value{byte})
                                      : e8m0_decode(e8m0_from_byte(byte));
}

inline float effective_divisor(float scale_value, float tensor_scale) {
  float d = scale_value * tensor_scale;
  return d < kDivisorFloor ? kDivisorFloor : d;
}

void validate_quant_args(std::int64_t n, std::int64_t last_dim, const QuantConfig& cfg,
                         float tensor_scale) {
  NVQAD_CHECK(last_dim > 0, "last dimension must be positive, got " << last_dim);
  NVQAD_CHECK(n % last_dim == 0, "element count " << n << " not divisible by last dimension " << last_dim);
  NVQAD_CHECK(cfg.block_size > 0 && cfg.block_size % 2 == 0,
              "block_size must be positive and even, got " << cfg.block_size);
  NVQAD_CHECK(std::isfinite(tensor_scale) && tensor_scale > 0.0f,
              "tensor_scale must be positive and finite, got " << tensor_scale);
  if (cfg.format == QuantFormat::MXFP4)
    NVQAD_CHECK(tensor_scale == 1.0f, "MXFP4 has no tensor-level scale; got " << tensor_scale);
}

#ifdef NVQAD_AVX512

// Lanes holding finite values (NaN compares unordered, inf exceeds max).
inline __mmask16 finite_lanes(__m512 x) {
  const __m512 abs = _mm512_andnot_ps(_mm512_castsi512_ps(_mm512_set1_epi32(0x80000000)), x);
  return _mm512_cmp_ps_mask(abs, _mm512_set1_ps(std::numeric_limits<float>::max()), _CMP_LE_OQ);
}

// One vector's worth of the element pipeline: divide, snap to the grid,
// reconstruct. Returns the reconstruction and the lanes inside the
// representable range.
struct LaneResult {
  __m512 xhat;
  __mmask16 in_range;
};

inline LaneResult quant_lanes(__m512 x, __m512 d) {
  const __m512 sign_mask = _mm512_castsi512_ps(_mm512_set1_epi32(0x80000000));
  __m512 q = _mm512_div_ps(x, d);
  __m512 a = _mm512_andnot_ps(sign_mask, q);
  __m512 v = _mm512_setzero_ps();
  const __m512 half = _mm512_set1_ps(0.5f);
  const __m512 one = _mm512_set1_ps(1.0f);
  const __m512 two = _mm512_set1_ps(2.0f);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(0.25f), _CMP_GT_OQ), v, half);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(0.75f), _CMP_GE_OQ), v, half);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(1.25f), _CMP_GT_OQ), v, half);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(1.75f), _CMP_GE_OQ), v, half);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(2.5f), _CMP_GT_OQ), v, one);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(3.5f), _CMP_GE_OQ), v, one);
  v = _mm512_mask_add_ps(v, _mm512_cmp_ps_mask(a, _mm512_set1_ps(5.0f), _CMP_GT_OQ), v, two);
  LaneResult r;
  r.xhat = _mm512_or_ps(_mm512_mul_ps(v, d), _mm512_and_ps(q, sign_mask));
  r.in_range = _mm512_cmp_ps_mask(a, _mm512_set1_ps(6.0f), _CMP_LE_OQ);
  return r;
}

inline void store_mask_bytes(std::uint8_t* dst, __mmask16 ok, int len) {
#if defined(__AVX512BW__) && defined(__AVX512VL__)
  __m128i bytes = _mm_maskz_set1_epi8(ok, 1);
  _mm_mask_storeu_epi8(dst, static_cast<__mmask16>((1u << len) - 1), bytes);
#else
  for (int j = 0; j < len; ++j) dst[j] = static_cast<std::uint8_t>((ok >> j) & 1);
#endif
}

// Fused rows for the two shipped block sizes (16 = one vector, 32 = two).
bool fused_rows_avx512(float* dst, const float* src, std::int64_t row_begin, std::int64_t row_end,
                       std::int64_t last, const QuantConfig& cfg, float tensor_scale,
                       std::uint8_t* sat_mask) {
  if (cfg.block_size != 16 && cfg.block_size != 32) return false;
  const int bs = cfg.block_size;
  const std::int64_t blocks = (last + bs - 1) / bs;
  const __m512 sign_mask = _mm512_castsi512_ps(_mm512_set1_epi32(0x80000000));
  __mmask16 bad = 0;
  for (std::int64_t r = row_begin; r < row_end; ++r) {
    const float* row = src + r * last;
    float* out = dst + r * last;
    std::uint8_t* mrow = sat_mask ? sat_mask + r * last : nullptr;
    for (std::int64_t b = 0; b < blocks; ++b) {
      std::int64_t off = b * bs;
      std::int64_t rem = last - off;
      if (bs == 16) {
        int len = rem >= 16 ? 16 : static_cast<int>(rem);
        __mmask16 lane = len >= 16 ? static_cast<__mmask16>(0xFFFF) : static_cast<__mmask16>((1u << len) - 1);
        __m512 x = _mm512_maskz_loadu_ps(lane, row + off);
        __mmask16 ok = finite_lanes(x);
        bad |= lane & ~ok;
        float bmax = _mm512_reduce_max_ps(_mm512_maskz_mov_ps(ok, _mm512_andnot_ps(sign_mask, x)));
        float d = effective_divisor(scale_value_from_byte(derive_scale_byte(bmax, cfg, tensor_scale), cfg.format), tensor_scale);
        LaneResult lr = quant_lanes(x, _mm512_set1_ps(d));
        _mm512_mask_storeu_ps(out + off, lane, lr.xhat);
        if (mrow) store_mask_bytes(mrow + off, lr.in_range, len);
      } else {
        int len0 = rem >= 16 ? 16 : static_cast<int>(std::max<std::int64_t>(rem, 0));
        int len1 = rem >= 32 ? 16 : static_cast<int>(std::max<std::int64_t>(rem - 16, 0));
        __mmask16 lane0 = len0 >= 16 ? static_cast<__mmask16>(0xFFFF) : static_cast<__mmask16>((1u << len0) - 1);
        __mmask16 lane1 = len1 >= 16 ? static_cast<__mmask16>(0xFFFF) : static_cast<__mmask16>((1u << len1) - 1);
        __m512 x0 = _mm512_maskz_loadu_ps(lane0, row + off);
        __m512 x1 = len1 ? _mm512_maskz_loadu_ps(lane1, row + off + 16) : _mm512_setzero_ps();
        __mmask16 ok0 = finite_lanes(x0), ok1 = finite_lanes(x1);
        bad |= (lane0 & ~ok0) | (lane1 & ~ok1);
        __m512 a0 = _mm512_maskz_mov_ps(ok0, _mm512_andnot_ps(sign_mask, x0));
        __m512 a1 = _mm512_maskz_mov_ps(ok1, _mm512_andnot_ps(sign_mask, x1));
        float bmax = _mm512_reduce_max_ps(_mm512_max_ps(a0, a1));
        float d = effective_divisor(scale_value_from_byte(derive_scale_byte(bmax, cfg, tensor_scale), cfg.format), tensor_scale);
        __m512 dv = _mm512_set1_ps(d);
        LaneResult l0 = quant_lanes(x0, dv);
        _mm512_mask_storeu_ps(out + off, lane0, l0.xhat);
        if (mrow) store_mask_bytes(mrow + off, l0.in_range, len0);
        if (len1) {
          LaneResult l1 = quant_lanes(x1, dv);
          _mm512_mask_storeu_ps(out + off + 16, lane1, l1.xhat);
          if (mrow) store_mask_bytes(mrow + off + 16, l1.in_range, len1);
        }
      }
    }
  }
  NVQAD_CHECK(bad == 0, "non-finite value in fake_quantize input");
  return true;
}

#endif  // NVQAD_AVX512

// Scalar mirror of the fused pipeline; also the general-block-size path.
void fused_rows_scalar(float* dst, const float* src, std::int64_t row_begin, std::int64_t row_end,
                       std::int64_t last, const QuantConfig& cfg, float tensor_scale,
                       std::uint8_t* sat_mask) {
  const int bs = cfg.block_size;
  const std::int64_t blocks = (last + bs - 1) / bs;
  bool ok = true;
  for (std::int64_t r = row_begin; r < row_end; ++r) {
    const float* row = src + r * last;
    float* out = dst + r * last;
    std::uint8_t* mrow = sat_mask ? sat_mask + r * last : nullptr;
    for (std::int64_t b = 0; b < blocks; ++b) {
      std::int64_t off = b * bs;
      std::int64_t len = std::min<std::int64_t>(bs, last - off);
      float bmax = 0.0f;
      for (std::int64_t j = 0; j < len; ++j) {
        float x = row[off + j];
        bool fin = x - x == 0.0f;  // false for NaN and inf
        ok = ok && fin;
        float a = std::fabs(x);
        if (fin && a > bmax) bmax = a;
      }
      float d = effective_divisor(scale_value_from_byte(derive_scale_byte(bmax, cfg, tensor_scale), cfg.format), tensor_scale);
      for (std::int64_t j = 0; j < len; ++j) {
        float q = row[off + j] / d;
        float v = e2m1_chain(std::fabs(q));
        float xh = v * d;
        out[off + j] = std::signbit(q) ? -xh : xh;
        if (mrow) mrow[off + j] = std::fabs(q) <= 6.0f ? 1 : 0;
      }
    }
  }
  NVQAD_CHECK(ok, "non-finite value in fake_quantize input");
}

}  // namespace

const char* quant_format_name(QuantFormat f) {
  return f == QuantFormat::NVFP4 ? "nvfp4" : "mxfp4";
}

std::int64_t QuantizedTensor::n_elements() const {
  if (shape.empty()) return 0;
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::int64_t QuantizedTensor::rows() const {
  std::int64_t last = last_dim();
  return last > 0 ? n_elements() / last : 0;
}

std::int64_t QuantizedTensor::padded_last() const {
  std::int64_t bs = config.block_size;
  return (last_dim() + bs - 1) / bs * bs;
}

std::int64_t QuantizedTensor::blocks_per_row() const {
  return padded_last() / config.block_size;
}

Fp4Code QuantizedTensor::code_at(std::int64_t padded_index) const {
  std::uint8_t byte = packed[static_cast<std::size_t>(padded_index >> 1)];
  return Fp4Code{static_cast<std::uint8_t>((padded_index & 1) ? (byte >> 4) : (byte & 0xF))};
}

float QuantizedTensor::block_scale_value(std::int64_t block_index) const {
  return scale_value_from_byte(block_scales[static_cast<std::size_t>(block_index)], config.format);
}

float QuantizedTensor::block_repr_max(std::int64_t block_index) const {
  return static_cast<float>(static_cast<double>(config.fp4_max) * block_scale_value(block_index) * tensor_scale);
}

CalibrationState calibrate_update(CalibrationState state, std::span<const float> x) {
  if (!x.empty()) {
    float m = kernels::reduce_absmax(x.data(), static_cast<std::int64_t>(x.size()));
    if (m > state.amax) state.amax = m;
  }
  state.samples_seen += x.size();
  return state;
}

float tensor_scale_from_amax(float amax, const QuantConfig& config) {
  NVQAD_CHECK(std::isfinite(amax) && amax >= 0.0f, "amax must be nonnegative and finite, got " << amax);
  if (config.format == QuantFormat::MXFP4) return 1.0f;
  if (amax == 0.0f) return 1.0f;
  float ts = amax / (config.fp4_max * config.scale_max);
  return ts > 0.0f ? ts : 1.0f;  // deep-denormal amax underflows; fall back to neutral
}

QuantizedTensor quantize_tensor(std::span<const float> x, std::vector<std::int64_t> shape,
                                const QuantConfig& config, float tensor_scale) {
  NVQAD_CHECK(!shape.empty(), "shape must have at least one dimension");
  std::int64_t n = 1;
  for (auto d : shape) {
    NVQAD_CHECK(d > 0, "dimensions must be positive, got " << d);
    n *= d;
  }
  NVQAD_CHECK(n == static_cast<std::int64_t>(x.size()),
              "shape wants " << n << " elements, buffer has " << x.size());
  std::int64_t last = shape.back();
  validate_quant_args(n, last, config, tensor_scale);
  NVQAD_CHECK(kernels::all_finite(x.data(), n), "non-finite value in quantize input");

  QuantizedTensor q;
  q.shape = std::move(shape);
  q.config = config;
  q.tensor_scale = tensor_scale;
  const std::int64_t rows = q.rows();
  const std::int64_t padded = q.padded_last();
  const std::int64_t bpr = q.blocks_per_row();
  const int bs = config.block_size;
  q.block_scales.assign(static_cast<std::size_t>(rows * bpr), 0);
  q.packed.assign(static_cast<std::size_t>(rows * padded / 2), 0);

  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = x.data() + r * last;
    for (std::int64_t b = 0; b < bpr; ++b) {
      std::int64_t off = b * bs;
      std::int64_t len = std::min<std::int64_t>(bs, last - off);
      float bmax = 0.0f;
      for (std::int64_t j = 0; j < len; ++j) bmax = std::max(bmax, std::fabs(row[off + j]));
      std::uint8_t sb = derive_scale_byte(bmax, config, tensor_scale);
      q.block_scales[static_cast<std::size_t>(r * bpr + b)] = sb;
      float d = effective_divisor(scale_value_from_byte(sb, config.format), tensor_scale);
      for (std::int64_t j = 0; j < len; ++j) {
        float qv = row[off + j] / d;
        std::uint8_t code = e2m1_chain_code(std::fabs(qv));
        if (std::signbit(qv)) code |= 0x8;
        std::int64_t pi = r * padded + off + j;
        std::uint8_t& byte = q.packed[static_cast<std::size_t>(pi >> 1)];
        if (pi & 1)
          byte = static_cast<std::uint8_t>((byte & 0x0F) | (code << 4));
        else
          byte = static_cast<std::uint8_t>((byte & 0xF0) | code);
      }
    }
  }
  return q;
}

std::vector<float> dequantize_tensor(const QuantizedTensor& q) {
  const std::int64_t rows = q.rows();
  const std::int64_t last = q.last_dim();
  const std::int64_t padded = q.padded_last();
  const std::int64_t bpr = q.blocks_per_row();
  const int bs = q.config.block_size;
  std::vector<float> out(static_cast<std::size_t>(rows * last));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t b = 0; b < bpr; ++b) {
      float d = effective_divisor(q.block_scale_value(r * bpr + b), q.tensor_scale);
      std::int64_t off = b * bs;
      std::int64_t len = std::min<std::int64_t>(bs, last - off);
      for (std::int64_t j = 0; j < len; ++j) {
        float c = e2m1_decode(q.code_at(r * padded + off + j));
        float v = std::fabs(c) * d;
        out[static_cast<std::size_t>(r * last + off + j)] = std::signbit(c) ? -v : v;
      }
    }
  }
  return out;
}

std::vector<float> fake_quantize(std::span<const float> x, std::int64_t last_dim,
                                 const QuantConfig& config, float tensor_scale) {
  validate_quant_args(static_cast<std::int64_t>(x.size()), last_dim, config, tensor_scale);
  std::vector<std::int64_t> shape{static_cast<std::int64_t>(x.size()) / last_dim, last_dim};
  if (x.empty()) return {};
  return dequantize_tensor(quantize_tensor(x, std::move(shape), config, tensor_scale));
}

void fake_quantize_into(float* dst, const float* src, std::int64_t n, std::int64_t last_dim,
                        const QuantConfig& config, float tensor_scale, std::uint8_t* sat_mask) {
  validate_quant_args(n, last_dim, config, tensor_scale);
  if (n == 0) return;
  const std::int64_t rows = n / last_dim;
  ThreadPool::instance().parallel_for(0, rows, 64, [&](std::int64_t lo, std::int64_t hi) {
#ifdef NVQAD_AVX512
    if (fused_rows_avx512(dst, src, lo, hi, last_dim, config, tensor_scale, sat_mask)) return;
#endif
    fused_rows_scalar(dst, src, lo, hi, last_dim, config, tensor_scale, sat_mask);
  });
}

float abs_max(std::span<const float> x) {
  if (x.empty()) return 0.0f;
  return kernels::reduce_absmax(x.data(), static_cast<std::int64_t>(x.size()));
}

ErrorStats error_stats(std::span<const float> x, std::span<const float> xhat) {
  NVQAD_CHECK(x.size() == xhat.size(), "size mismatch: " << x.size() << " vs " << xhat.size());
  ErrorStats s;
  if (x.empty()) return s;
  double se = 0.0, sx = 0.0;
  float amax = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double e = static_cast<double>(x[i]) - xhat[i];
    se += e * e;
    sx += static_cast<double>(x[i]) * x[i];
    amax = std::max(amax, std::fabs(x[i]));
  }
  s.mse = se / static_cast<double>(x.size());
  s.sqnr_db = se == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(sx / se);
  s.clip_fraction = 0.0;  // no block structure available in this overload
  s.amax_in = amax;
  return s;
}

ErrorStats error_stats(std::span<const float> x, const QuantizedTensor& q) {
  NVQAD_CHECK(static_cast<std::int64_t>(x.size()) == q.n_elements(),
              "size mismatch: " << x.size() << " vs " << q.n_elements());
  std::vector<float> xhat = dequantize_tensor(q);
  ErrorStats s = error_stats(x, xhat);
  const std::int64_t rows = q.rows();
  const std::int64_t last = q.last_dim();
  const std::int64_t bpr = q.blocks_per_row();
  const int bs = q.config.block_size;
  std::int64_t clipped = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t b = 0; b < bpr; ++b) {
      double repr = q.block_repr_max(r * bpr + b);
      std::int64_t off = b * bs;
      std::int64_t len = std::min<std::int64_t>(bs, last - off);
      for (std::int64_t j = 0; j < len; ++j)
        if (std::fabs(static_cast<double>(x[static_cast<std::size_t>(r * last + off + j)])) > repr) ++clipped;
    }
  }
  s.clip_fraction = static_cast<double>(clipped) / static_cast<double>(x.size());
  return s;
}

// --- NVQT serialization -----------------------------------------------------

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::uint8_t u8() {
    NVQAD_CHECK(pos + 1 <= buf.size(), "truncated file");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void bytes(std::uint8_t* dst, std::size_t n) {
    NVQAD_CHECK(pos + n <= buf.size(), "truncated file");
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
};

constexpr std::uint16_t kNvqtVersion = 1;

}  // namespace

void write_nvqt(const std::string& path, const QuantizedTensor& q) {
  std::string buf;
  buf += "NVQT";
  put_u16(buf, kNvqtVersion);
  buf.push_back(static_cast<char>(q.config.format));
  put_u32(buf, static_cast<std::uint32_t>(q.shape.size()));
  for (auto d : q.shape) {
    NVQAD_CHECK(d > 0 && d <= 0xFFFFFFFFll, "dimension out of range: " << d);
    put_u32(buf, static_cast<std::uint32_t>(d));
  }
  put_f32(buf, q.tensor_scale);
  buf.append(reinterpret_cast<const char*>(q.block_scales.data()), q.block_scales.size());
  buf.append(reinterpret_cast<const char*>(q.packed.data()), q.packed.size());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  NVQAD_CHECK(f.good(), "cannot open " << path << " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  NVQAD_CHECK(f.good(), "write failed: " << path);
}

QuantizedTensor read_nvqt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NVQAD_CHECK(f.good(), "cannot open " << path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  NVQAD_CHECK(buf.size() >= 4 && buf.compare(0, 4, "NVQT") == 0, "bad magic in " << path);
  r.pos = 4;
  std::uint16_t version = r.u16();
  NVQAD_CHECK(version == kNvqtVersion, "unsupported version " << version);
  std::uint8_t fmt = r.u8();
  NVQAD_CHECK(fmt <= 1, "unknown format tag " << static_cast<int>(fmt));
  QuantizedTensor q;
  q.config = fmt == 0 ? QuantConfig::nvfp4() : QuantConfig::mxfp4();
  std::uint32_t rank = r.u32();
  NVQAD_CHECK(rank >= 1 && rank <= 8, "rank out of range: " << rank);
  q.shape.resize(rank);
  for (auto& d : q.shape) {
    d = r.u32();
    NVQAD_CHECK(d > 0, "zero dimension in " << path);
  }
  q.tensor_scale = r.f32();
  NVQAD_CHECK(std::isfinite(q.tensor_scale) && q.tensor_scale > 0.0f,
              "bad tensor_scale " << q.tensor_scale);
  if (q.config.format == QuantFormat::MXFP4)
    NVQAD_CHECK(q.tensor_scale == 1.0f, "MXFP4 tensor_scale must be 1");
  q.block_scales.resize(static_cast<std::size_t>(q.n_blocks()));
  r.bytes(q.block_scales.data(), q.block_scales.size());
  if (q.config.format == QuantFormat::MXFP4) {
    for (auto b : q.block_scales) NVQAD_CHECK(b != 255, "invalid scale byte 255");
  } else {
    for (auto b : q.block_scales)
      NVQAD_CHECK(b != 0x7F && b != 0xFF, "NaN scale byte in " << path);
  }
  q.packed.resize(static_cast<std::size_t>(q.rows() * q.padded_last() / 2));
  r.bytes(q.packed.data(), q.packed.size());
  NVQAD_CHECK(r.pos == buf.size(), "trailing bytes in " << path);
  return q;
}

}  // namespace nvqad
