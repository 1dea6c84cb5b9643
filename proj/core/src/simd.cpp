// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "nvqad/check.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#define NVQAD_AVX512 1
#endif

#if defined(__SSE__)
#include <xmmintrin.h>
#define NVQAD_MXCSR 1
#endif

namespace nvqad::kernels {

namespace {

// Degree-5 polynomial for e^r on |r| <= ln2/2, with Cody-Waite
// argument reduction. Same constants and evaluation order in both paths.
constexpr float kLog2e = 1.44269504088896341f;
constexpr float kLn2Hi = 0.693359375f;
constexpr float kLn2Lo = -2.12194440e-4f;
constexpr float kExpLo = -87.0f;
constexpr float kExpHi = 88.0f;
constexpr float kP0 = 1.9875691500e-4f;
constexpr float kP1 = 1.3981999507e-3f;
constexpr float kP2 = 8.3334519073e-3f;
constexpr float kP3 = 4.1665795894e-2f;
constexpr float kP4 = 1.6666665459e-1f;
constexpr float kP5 = 5.0000001201e-1f;

inline float exp_scalar(float x) {
  // Below kExpLo the true result is within a hair of the smallest normal
  // float; return exact zero instead of letting gradual underflow seed
  // subnormals. A subnormal operand costs a ~100x microcode assist on every
  // FMA that later touches it, and softmax feeds this into GEMM directly.
  if (x < kExpLo) return 0.0f;
  if (x > kExpHi) x = kExpHi;
  float nf = std::rint(x * kLog2e);
  float r = std::fma(nf, -kLn2Hi, x);
  r = std::fma(nf, -kLn2Lo, r);
  float p = kP0;
  p = std::fma(p, r, kP1);
  p = std::fma(p, r, kP2);
  p = std::fma(p, r, kP3);
  p = std::fma(p, r, kP4);
  p = std::fma(p, r, kP5);
  float y = std::fma(p * r, r, r) + 1.0f;
  int n = static_cast<int>(nf);
  // 2^n via exponent bits; n is confined to [-126, 127] by the clamp.
  float two_n;
  std::uint32_t bits = static_cast<std::uint32_t>(n + 127) << 23;
  __builtin_memcpy(&two_n, &bits, 4);
  return y * two_n;
}

inline float tanh_scalar(float x) {
  float a = std::fabs(x);
  if (a > 44.0f) a = 44.0f;
  float e = exp_scalar(2.0f * a);
  float t = (e - 1.0f) / (e + 1.0f);
  return std::signbit(x) ? -t : t;
}

#ifdef NVQAD_AVX512

inline __m512 exp_vec(__m512 x) {
  // Mirrors exp_scalar: lanes below kExpLo produce exact zero.
  __mmask16 under = _mm512_cmp_ps_mask(x, _mm512_set1_ps(kExpLo), _CMP_LT_OS);
  x = _mm512_max_ps(x, _mm512_set1_ps(kExpLo));
  x = _mm512_min_ps(x, _mm512_set1_ps(kExpHi));
  __m512 nf = _mm512_roundscale_ps(_mm512_mul_ps(x, _mm512_set1_ps(kLog2e)), 0x08);
  __m512 r = _mm512_fmadd_ps(nf, _mm512_set1_ps(-kLn2Hi), x);
  r = _mm512_fmadd_ps(nf, _mm512_set1_ps(-kLn2Lo), r);
  __m512 p = _mm512_set1_ps(kP0);
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(kP1));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(kP2));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(kP3));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(kP4));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(kP5));
  __m512 y = _mm512_add_ps(_mm512_fmadd_ps(_mm512_mul_ps(p, r), r, r), _mm512_set1_ps(1.0f));
  __m512i n = _mm512_cvtps_epi32(nf);
  __m512i bits = _mm512_slli_epi32(_mm512_add_epi32(n, _mm512_set1_epi32(127)), 23);
  __m512 r5 = _mm512_mul_ps(y, _mm512_castsi512_ps(bits));
  return _mm512_maskz_mov_ps(_knot_mask16(under), r5);
}

inline __m512 tanh_vec(__m512 x) {
  const __m512 sign_mask = _mm512_castsi512_ps(_mm512_set1_epi32(0x80000000));
  __m512 a = _mm512_andnot_ps(sign_mask, x);
  a = _mm512_min_ps(a, _mm512_set1_ps(44.0f));
  __m512 e = exp_vec(_mm512_mul_ps(a, _mm512_set1_ps(2.0f)));
  __m512 one = _mm512_set1_ps(1.0f);
  __m512 t = _mm512_div_ps(_mm512_sub_ps(e, one), _mm512_add_ps(e, one));
  return _mm512_or_ps(t, _mm512_and_ps(x, sign_mask));
}

#endif  // NVQAD_AVX512

}  // namespace

void vexp(float* dst, const float* src, std::int64_t n) {
  std::int64_t i = 0;
#ifdef NVQAD_AVX512
  for (; i + 16 <= n; i += 16) _mm512_storeu_ps(dst + i, exp_vec(_mm512_loadu_ps(src + i)));
  if (i < n) {
    __mmask16 m = static_cast<__mmask16>((1u << (n - i)) - 1);
    __m512 v = _mm512_maskz_loadu_ps(m, src + i);
    _mm512_mask_storeu_ps(dst + i, m, exp_vec(v));
    i = n;
  }
#endif
  for (; i < n; ++i) dst[i] = exp_scalar(src[i]);
}

void vtanh(float* dst, const float* src, std::int64_t n) {
  std::int64_t i = 0;
#ifdef NVQAD_AVX512
  for (; i + 16 <= n; i += 16) _mm512_storeu_ps(dst + i, tanh_vec(_mm512_loadu_ps(src + i)));
  if (i < n) {
    __mmask16 m = static_cast<__mmask16>((1u << (n - i)) - 1);
    __m512 v = _mm512_maskz_loadu_ps(m, src + i);
    _mm512_mask_storeu_ps(dst + i, m, tanh_vec(v));
    i = n;
  }
#endif
  for (; i < n; ++i) dst[i] = tanh_scalar(src[i]);
}

bool all_finite(const float* x, std::int64_t n) {
  std::int64_t i = 0;
#ifdef NVQAD_AVX512
  __mmask16 bad = 0;
  __m512 big = _mm512_set1_ps(3.4028235e38f);
  for (; i + 16 <= n; i += 16) {
    __m512 v = _mm512_loadu_ps(x + i);
    bad |= _mm512_cmp_ps_mask(v, v, _CMP_UNORD_Q);
    const __m512 sign_mask = _mm512_castsi512_ps(_mm512_set1_epi32(0x80000000));
    bad |= _mm512_cmp_ps_mask(_mm512_andnot_ps(sign_mask, v), big, _CMP_GT_OQ);
  }
  if (bad) return false;
#endif
  for (; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

float reduce_absmax(const float* x, std::int64_t n) {
  NVQAD_CHECK(all_finite(x, n), "non-finite value in buffer of " << n << " elements");
  float m = 0.0f;
  std::int64_t i = 0;
#ifdef NVQAD_AVX512
  const __m512 sign_mask = _mm512_castsi512_ps(_mm512_set1_epi32(0x80000000));
  __m512 vm = _mm512_setzero_ps();
  for (; i + 16 <= n; i += 16) vm = _mm512_max_ps(vm, _mm512_andnot_ps(sign_mask, _mm512_loadu_ps(x + i)));
  m = _mm512_reduce_max_ps(vm);
#endif
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

// ---------------------------------------------------------------------------
// GEMM. The AVX-512 kernel works on 4-row by 64-column output tiles with 16
// accumulators; tails fall back to masked single-row strips. The scalar
// kernel keeps the same i-k-j loop nest, which the autovectorizer handles.

namespace {

#ifdef NVQAD_AVX512

// One row strip: C[row, n0:n0+width) for width <= 64, masked at the edge.
inline void gemm_nn_row_tail(std::int64_t n0, std::int64_t nw, std::int64_t k,
                             const float* a_row, const float* b, std::int64_t ldb,
                             float* c_row, bool accumulate) {
  __m512 acc[4];
  __mmask16 masks[4];
  int nv = static_cast<int>((nw + 15) / 16);
  for (int v = 0; v < nv; ++v) {
    std::int64_t rem = nw - v * 16;
    masks[v] = rem >= 16 ? static_cast<__mmask16>(0xFFFF) : static_cast<__mmask16>((1u << rem) - 1);
    acc[v] = accumulate ? _mm512_maskz_loadu_ps(masks[v], c_row + n0 + v * 16) : _mm512_setzero_ps();
  }
  const float* bp = b + n0;
  for (std::int64_t kk = 0; kk < k; ++kk) {
    __m512 va = _mm512_set1_ps(a_row[kk]);
    for (int v = 0; v < nv; ++v)
      acc[v] = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(masks[v], bp + v * 16), acc[v]);
    bp += ldb;
  }
  for (int v = 0; v < nv; ++v) _mm512_mask_storeu_ps(c_row + n0 + v * 16, masks[v], acc[v]);
}

// One 4x64 C tile over k in [k0, k1). Partial sums round-trip through C
// between k blocks; a float store/reload is exact, so blocking keeps each
// element's accumulation in ascending-k order, bit-identical to one pass.
// Accumulators are individually named: indexed arrays here make the compiler
// spill the tile to the stack instead of holding it in registers.
inline void gemm_nn_tile4x4(const float* a0, std::int64_t lda, std::int64_t k0, std::int64_t k1,
                            const float* bp, std::int64_t ldb, float* c0, std::int64_t ldc,
                            bool load_c) {
  const float* a1 = a0 + lda;
  const float* a2 = a1 + lda;
  const float* a3 = a2 + lda;
  float* c1 = c0 + ldc;
  float* c2 = c1 + ldc;
  float* c3 = c2 + ldc;
  __m512 acc00, acc01, acc02, acc03, acc10, acc11, acc12, acc13;
  __m512 acc20, acc21, acc22, acc23, acc30, acc31, acc32, acc33;
  if (load_c) {
    acc00 = _mm512_loadu_ps(c0);
    acc01 = _mm512_loadu_ps(c0 + 16);
    acc02 = _mm512_loadu_ps(c0 + 32);
    acc03 = _mm512_loadu_ps(c0 + 48);
    acc10 = _mm512_loadu_ps(c1);
    acc11 = _mm512_loadu_ps(c1 + 16);
    acc12 = _mm512_loadu_ps(c1 + 32);
    acc13 = _mm512_loadu_ps(c1 + 48);
    acc20 = _mm512_loadu_ps(c2);
    acc21 = _mm512_loadu_ps(c2 + 16);
    acc22 = _mm512_loadu_ps(c2 + 32);
    acc23 = _mm512_loadu_ps(c2 + 48);
    acc30 = _mm512_loadu_ps(c3);
    acc31 = _mm512_loadu_ps(c3 + 16);
    acc32 = _mm512_loadu_ps(c3 + 32);
    acc33 = _mm512_loadu_ps(c3 + 48);
  } else {
    acc00 = acc01 = acc02 = acc03 = _mm512_setzero_ps();
    acc10 = acc11 = acc12 = acc13 = _mm512_setzero_ps();
    acc20 = acc21 = acc22 = acc23 = _mm512_setzero_ps();
    acc30 = acc31 = acc32 = acc33 = _mm512_setzero_ps();
  }
  for (std::int64_t kk = k0; kk < k1; ++kk) {
    __m512 b0 = _mm512_loadu_ps(bp);
    __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 b2 = _mm512_loadu_ps(bp + 32);
    __m512 b3 = _mm512_loadu_ps(bp + 48);
    __m512 va;
    va = _mm512_set1_ps(a0[kk]);
    acc00 = _mm512_fmadd_ps(va, b0, acc00);
    acc01 = _mm512_fmadd_ps(va, b1, acc01);
    acc02 = _mm512_fmadd_ps(va, b2, acc02);
    acc03 = _mm512_fmadd_ps(va, b3, acc03);
    va = _mm512_set1_ps(a1[kk]);
    acc10 = _mm512_fmadd_ps(va, b0, acc10);
    acc11 = _mm512_fmadd_ps(va, b1, acc11);
    acc12 = _mm512_fmadd_ps(va, b2, acc12);
    acc13 = _mm512_fmadd_ps(va, b3, acc13);
    va = _mm512_set1_ps(a2[kk]);
    acc20 = _mm512_fmadd_ps(va, b0, acc20);
    acc21 = _mm512_fmadd_ps(va, b1, acc21);
    acc22 = _mm512_fmadd_ps(va, b2, acc22);
    acc23 = _mm512_fmadd_ps(va, b3, acc23);
    va = _mm512_set1_ps(a3[kk]);
    acc30 = _mm512_fmadd_ps(va, b0, acc30);
    acc31 = _mm512_fmadd_ps(va, b1, acc31);
    acc32 = _mm512_fmadd_ps(va, b2, acc32);
    acc33 = _mm512_fmadd_ps(va, b3, acc33);
    bp += ldb;
  }
  _mm512_storeu_ps(c0, acc00);
  _mm512_storeu_ps(c0 + 16, acc01);
  _mm512_storeu_ps(c0 + 32, acc02);
  _mm512_storeu_ps(c0 + 48, acc03);
  _mm512_storeu_ps(c1, acc10);
  _mm512_storeu_ps(c1 + 16, acc11);
  _mm512_storeu_ps(c1 + 32, acc12);
  _mm512_storeu_ps(c1 + 48, acc13);
  _mm512_storeu_ps(c2, acc20);
  _mm512_storeu_ps(c2 + 16, acc21);
  _mm512_storeu_ps(c2 + 32, acc22);
  _mm512_storeu_ps(c2 + 48, acc23);
  _mm512_storeu_ps(c3, acc30);
  _mm512_storeu_ps(c3 + 16, acc31);
  _mm512_storeu_ps(c3 + 32, acc32);
  _mm512_storeu_ps(c3 + 48, acc33);
}

// Same tile at 4x32: covers attention-head widths without the masked strip.
inline void gemm_nn_tile4x2(const float* a0, std::int64_t lda, std::int64_t k0, std::int64_t k1,
                            const float* bp, std::int64_t ldb, float* c0, std::int64_t ldc,
                            bool load_c) {
  const float* a1 = a0 + lda;
  const float* a2 = a1 + lda;
  const float* a3 = a2 + lda;
  float* c1 = c0 + ldc;
  float* c2 = c1 + ldc;
  float* c3 = c2 + ldc;
  __m512 acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
  if (load_c) {
    acc00 = _mm512_loadu_ps(c0);
    acc01 = _mm512_loadu_ps(c0 + 16);
    acc10 = _mm512_loadu_ps(c1);
    acc11 = _mm512_loadu_ps(c1 + 16);
    acc20 = _mm512_loadu_ps(c2);
    acc21 = _mm512_loadu_ps(c2 + 16);
    acc30 = _mm512_loadu_ps(c3);
    acc31 = _mm512_loadu_ps(c3 + 16);
  } else {
    acc00 = acc01 = _mm512_setzero_ps();
    acc10 = acc11 = _mm512_setzero_ps();
    acc20 = acc21 = _mm512_setzero_ps();
    acc30 = acc31 = _mm512_setzero_ps();
  }
  for (std::int64_t kk = k0; kk < k1; ++kk) {
    __m512 b0 = _mm512_loadu_ps(bp);
    __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 va;
    va = _mm512_set1_ps(a0[kk]);
    acc00 = _mm512_fmadd_ps(va, b0, acc00);
    acc01 = _mm512_fmadd_ps(va, b1, acc01);
    va = _mm512_set1_ps(a1[kk]);
    acc10 = _mm512_fmadd_ps(va, b0, acc10);
    acc11 = _mm512_fmadd_ps(va, b1, acc11);
    va = _mm512_set1_ps(a2[kk]);
    acc20 = _mm512_fmadd_ps(va, b0, acc20);
    acc21 = _mm512_fmadd_ps(va, b1, acc21);
    va = _mm512_set1_ps(a3[kk]);
    acc30 = _mm512_fmadd_ps(va, b0, acc30);
    acc31 = _mm512_fmadd_ps(va, b1, acc31);
    bp += ldb;
  }
  _mm512_storeu_ps(c0, acc00);
  _mm512_storeu_ps(c0 + 16, acc01);
  _mm512_storeu_ps(c1, acc10);
  _mm512_storeu_ps(c1 + 16, acc11);
  _mm512_storeu_ps(c2, acc20);
  _mm512_storeu_ps(c2 + 16, acc21);
  _mm512_storeu_ps(c3, acc30);
  _mm512_storeu_ps(c3 + 16, acc31);
}

void gemm_nn_avx512(std::int64_t m, std::int64_t n, std::int64_t k,
                    const float* a, std::int64_t lda,
                    const float* b, std::int64_t ldb,
                    float* c, std::int64_t ldc, bool accumulate) {
  // Block k so the active B panel (kb rows x 64 columns = 32 KB at kb = 128)
  // stays cache-resident across the whole row sweep; short k runs in one
  // pass and skips the C round-trip entirely.
  const std::int64_t kb = k <= 256 ? k : 128;
  const std::int64_t m4 = m & ~std::int64_t{3};
  std::int64_t n0 = 0;
  for (; n0 + 64 <= n; n0 += 64) {
    for (std::int64_t k0 = 0; k0 < k; k0 += kb) {
      const std::int64_t k1 = std::min(k, k0 + kb);
      const bool load_c = accumulate || k0 > 0;
      const float* bp = b + k0 * ldb + n0;
      for (std::int64_t m0 = 0; m0 < m4; m0 += 4)
        gemm_nn_tile4x4(a + m0 * lda, lda, k0, k1, bp, ldb, c + m0 * ldc + n0, ldc, load_c);
    }
    for (std::int64_t m0 = m4; m0 < m; ++m0)
      gemm_nn_row_tail(n0, 64, k, a + m0 * lda, b, ldb, c + m0 * ldc, accumulate);
  }
  if (n0 + 32 <= n) {
    for (std::int64_t k0 = 0; k0 < k; k0 += kb) {
      const std::int64_t k1 = std::min(k, k0 + kb);
      const bool load_c = accumulate || k0 > 0;
      const float* bp = b + k0 * ldb + n0;
      for (std::int64_t m0 = 0; m0 < m4; m0 += 4)
        gemm_nn_tile4x2(a + m0 * lda, lda, k0, k1, bp, ldb, c + m0 * ldc + n0, ldc, load_c);
    }
    for (std::int64_t m0 = m4; m0 < m; ++m0)
      gemm_nn_row_tail(n0, 32, k, a + m0 * lda, b, ldb, c + m0 * ldc, accumulate);
    n0 += 32;
  }
  if (n0 < n) {
    for (std::int64_t m0 = 0; m0 < m; ++m0)
      gemm_nn_row_tail(n0, n - n0, k, a + m0 * lda, b, ldb, c + m0 * ldc, accumulate);
  }
}

// C = A^T B with A stored [k, m]: both operands stream row-wise along k and
// the four row broadcasts read adjacent floats, so no transpose pack is
// needed. Each C element still sums in ascending-k order — bit-identical to
// packing A^T and running the nn kernel.
inline void gemm_tn_tile4x4(const float* ap, std::int64_t lda, std::int64_t ksteps,
                            const float* bp, std::int64_t ldb, float* c0, std::int64_t ldc,
                            bool load_c) {
  float* c1 = c0 + ldc;
  float* c2 = c1 + ldc;
  float* c3 = c2 + ldc;
  __m512 acc00, acc01, acc02, acc03, acc10, acc11, acc12, acc13;
  __m512 acc20, acc21, acc22, acc23, acc30, acc31, acc32, acc33;
  if (load_c) {
    acc00 = _mm512_loadu_ps(c0);
    acc01 = _mm512_loadu_ps(c0 + 16);
    acc02 = _mm512_loadu_ps(c0 + 32);
    acc03 = _mm512_loadu_ps(c0 + 48);
    acc10 = _mm512_loadu_ps(c1);
    acc11 = _mm512_loadu_ps(c1 + 16);
    acc12 = _mm512_loadu_ps(c1 + 32);
    acc13 = _mm512_loadu_ps(c1 + 48);
    acc20 = _mm512_loadu_ps(c2);
    acc21 = _mm512_loadu_ps(c2 + 16);
    acc22 = _mm512_loadu_ps(c2 + 32);
    acc23 = _mm512_loadu_ps(c2 + 48);
    acc30 = _mm512_loadu_ps(c3);
    acc31 = _mm512_loadu_ps(c3 + 16);
    acc32 = _mm512_loadu_ps(c3 + 32);
    acc33 = _mm512_loadu_ps(c3 + 48);
  } else {
    acc00 = acc01 = acc02 = acc03 = _mm512_setzero_ps();
    acc10 = acc11 = acc12 = acc13 = _mm512_setzero_ps();
    acc20 = acc21 = acc22 = acc23 = _mm512_setzero_ps();
    acc30 = acc31 = acc32 = acc33 = _mm512_setzero_ps();
  }
  for (std::int64_t kk = 0; kk < ksteps; ++kk) {
    __m512 b0 = _mm512_loadu_ps(bp);
    __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 b2 = _mm512_loadu_ps(bp + 32);
    __m512 b3 = _mm512_loadu_ps(bp + 48);
    __m512 va;
    va = _mm512_set1_ps(ap[0]);
    acc00 = _mm512_fmadd_ps(va, b0, acc00);
    acc01 = _mm512_fmadd_ps(va, b1, acc01);
    acc02 = _mm512_fmadd_ps(va, b2, acc02);
    acc03 = _mm512_fmadd_ps(va, b3, acc03);
    va = _mm512_set1_ps(ap[1]);
    acc10 = _mm512_fmadd_ps(va, b0, acc10);
    acc11 = _mm512_fmadd_ps(va, b1, acc11);
    acc12 = _mm512_fmadd_ps(va, b2, acc12);
    acc13 = _mm512_fmadd_ps(va, b3, acc13);
    va = _mm512_set1_ps(ap[2]);
    acc20 = _mm512_fmadd_ps(va, b0, acc20);
    acc21 = _mm512_fmadd_ps(va, b1, acc21);
    acc22 = _mm512_fmadd_ps(va, b2, acc22);
    acc23 = _mm512_fmadd_ps(va, b3, acc23);
    va = _mm512_set1_ps(ap[3]);
    acc30 = _mm512_fmadd_ps(va, b0, acc30);
    acc31 = _mm512_fmadd_ps(va, b1, acc31);
    acc32 = _mm512_fmadd_ps(va, b2, acc32);
    acc33 = _mm512_fmadd_ps(va, b3, acc33);
    ap += lda;
    bp += ldb;
  }
  _mm512_storeu_ps(c0, acc00);
  _mm512_storeu_ps(c0 + 16, acc01);
  _mm512_storeu_ps(c0 + 32, acc02);
  _mm512_storeu_ps(c0 + 48, acc03);
  _mm512_storeu_ps(c1, acc10);
  _mm512_storeu_ps(c1 + 16, acc11);
  _mm512_storeu_ps(c1 + 32, acc12);
  _mm512_storeu_ps(c1 + 48, acc13);
  _mm512_storeu_ps(c2, acc20);
  _mm512_storeu_ps(c2 + 16, acc21);
  _mm512_storeu_ps(c2 + 32, acc22);
  _mm512_storeu_ps(c2 + 48, acc23);
  _mm512_storeu_ps(c3, acc30);
  _mm512_storeu_ps(c3 + 16, acc31);
  _mm512_storeu_ps(c3 + 32, acc32);
  _mm512_storeu_ps(c3 + 48, acc33);
}

inline void gemm_tn_tile4x2(const float* ap, std::int64_t lda, std::int64_t ksteps,
                            const float* bp, std::int64_t ldb, float* c0, std::int64_t ldc,
                            bool load_c) {
  float* c1 = c0 + ldc;
  float* c2 = c1 + ldc;
  float* c3 = c2 + ldc;
  __m512 acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
  if (load_c) {
    acc00 = _mm512_loadu_ps(c0);
    acc01 = _mm512_loadu_ps(c0 + 16);
    acc10 = _mm512_loadu_ps(c1);
    acc11 = _mm512_loadu_ps(c1 + 16);
    acc20 = _mm512_loadu_ps(c2);
    acc21 = _mm512_loadu_ps(c2 + 16);
    acc30 = _mm512_loadu_ps(c3);
    acc31 = _mm512_loadu_ps(c3 + 16);
  } else {
    acc00 = acc01 = _mm512_setzero_ps();
    acc10 = acc11 = _mm512_setzero_ps();
    acc20 = acc21 = _mm512_setzero_ps();
    acc30 = acc31 = _mm512_setzero_ps();
  }
  for (std::int64_t kk = 0; kk < ksteps; ++kk) {
    __m512 b0 = _mm512_loadu_ps(bp);
    __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 va;
    va = _mm512_set1_ps(ap[0]);
    acc00 = _mm512_fmadd_ps(va, b0, acc00);
    acc01 = _mm512_fmadd_ps(va, b1, acc01);
    va = _mm512_set1_ps(ap[1]);
    acc10 = _mm512_fmadd_ps(va, b0, acc10);
    acc11 = _mm512_fmadd_ps(va, b1, acc11);
    va = _mm512_set1_ps(ap[2]);
    acc20 = _mm512_fmadd_ps(va, b0, acc20);
    acc21 = _mm512_fmadd_ps(va, b1, acc21);
    va = _mm512_set1_ps(ap[3]);
    acc30 = _mm512_fmadd_ps(va, b0, acc30);
    acc31 = _mm512_fmadd_ps(va, b1, acc31);
    ap += lda;
    bp += ldb;
  }
  _mm512_storeu_ps(c0, acc00);
  _mm512_storeu_ps(c0 + 16, acc01);
  _mm512_storeu_ps(c1, acc10);
  _mm512_storeu_ps(c1 + 16, acc11);
  _mm512_storeu_ps(c2, acc20);
  _mm512_storeu_ps(c2 + 16, acc21);
  _mm512_storeu_ps(c3, acc30);
  _mm512_storeu_ps(c3 + 16, acc31);
}

// One output row of A^T B: C[m0, n0:n0+nw), masked at the edge.
inline void gemm_tn_row_tail(std::int64_t n0, std::int64_t nw, std::int64_t k,
                             const float* a_col, std::int64_t lda, const float* b,
                             std::int64_t ldb, float* c_row, bool accumulate) {
  __m512 acc[4];
  __mmask16 masks[4];
  int nv = static_cast<int>((nw + 15) / 16);
  for (int v = 0; v < nv; ++v) {
    std::int64_t rem = nw - v * 16;
    masks[v] = rem >= 16 ? static_cast<__mmask16>(0xFFFF) : static_cast<__mmask16>((1u << rem) - 1);
    acc[v] = accumulate ? _mm512_maskz_loadu_ps(masks[v], c_row + n0 + v * 16) : _mm512_setzero_ps();
  }
  const float* bp = b + n0;
  for (std::int64_t kk = 0; kk < k; ++kk) {
    __m512 va = _mm512_set1_ps(a_col[kk * lda]);
    for (int v = 0; v < nv; ++v)
      acc[v] = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(masks[v], bp + v * 16), acc[v]);
    bp += ldb;
  }
  for (int v = 0; v < nv; ++v) _mm512_mask_storeu_ps(c_row + n0 + v * 16, masks[v], acc[v]);
}

void gemm_tn_avx512(std::int64_t m, std::int64_t n, std::int64_t k,
                    const float* a, std::int64_t lda,
                    const float* b, std::int64_t ldb,
                    float* c, std::int64_t ldc, bool accumulate) {
  const std::int64_t kb = k <= 256 ? k : 128;
  const std::int64_t m4 = m & ~std::int64_t{3};
  std::int64_t n0 = 0;
  for (; n0 + 64 <= n; n0 += 64) {
    for (std::int64_t k0 = 0; k0 < k; k0 += kb) {
      const std::int64_t k1 = std::min(k, k0 + kb);
      const bool load_c = accumulate || k0 > 0;
      const float* bp = b + k0 * ldb + n0;
      const float* ap = a + k0 * lda;
      for (std::int64_t m0 = 0; m0 < m4; m0 += 4)
        gemm_tn_tile4x4(ap + m0, lda, k1 - k0, bp, ldb, c + m0 * ldc + n0, ldc, load_c);
    }
    for (std::int64_t m0 = m4; m0 < m; ++m0)
      gemm_tn_row_tail(n0, 64, k, a + m0, lda, b, ldb, c + m0 * ldc, accumulate);
  }
  if (n0 + 32 <= n) {
    for (std::int64_t k0 = 0; k0 < k; k0 += kb) {
      const std::int64_t k1 = std::min(k, k0 + kb);
      const bool load_c = accumulate || k0 > 0;
      const float* bp = b + k0 * ldb + n0;
      const float* ap = a + k0 * lda;
      for (std::int64_t m0 = 0; m0 < m4; m0 += 4)
        gemm_tn_tile4x2(ap + m0, lda, k1 - k0, bp, ldb, c + m0 * ldc + n0, ldc, load_c);
    }
    for (std::int64_t m0 = m4; m0 < m; ++m0)
      gemm_tn_row_tail(n0, 32, k, a + m0, lda, b, ldb, c + m0 * ldc, accumulate);
    n0 += 32;
  }
  if (n0 < n) {
    for (std::int64_t m0 = 0; m0 < m; ++m0)
      gemm_tn_row_tail(n0, n - n0, k, a + m0, lda, b, ldb, c + m0 * ldc, accumulate);
  }
}

#else  // !NVQAD_AVX512

void gemm_nn_scalar(std::int64_t m, std::int64_t n, std::int64_t k,
                    const float* a, std::int64_t lda,
                    const float* b, std::int64_t ldb,
                    float* c, std::int64_t ldc, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    float* ci = c + i * ldc;
    if (!accumulate)
      for (std::int64_t j = 0; j < n; ++j) ci[j] = 0.0f;
    const float* ai = a + i * lda;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      float av = ai[kk];
      const float* bk = b + kk * ldb;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void gemm_nt_scalar(std::int64_t m, std::int64_t n, std::int64_t k,
                    const float* a, std::int64_t lda,
                    const float* b, std::int64_t ldb,
                    float* c, std::int64_t ldc, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    const float* ai = a + i * lda;
    for (std::int64_t j = 0; j < n; ++j) {
      const float* bj = b + j * ldb;
      float s = 0.0f;
      for (std::int64_t kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
      float* cij = c + i * ldc + j;
      *cij = accumulate ? *cij + s : s;
    }
  }
}


#endif  // NVQAD_AVX512

}  // namespace

void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate) {
  ScopedFlushDenormals ftz;
#ifdef NVQAD_AVX512
  gemm_nn_avx512(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#else
  gemm_nn_scalar(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#endif
}

void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate) {
  ScopedFlushDenormals ftz;
#ifdef NVQAD_AVX512
  // Pack B^T so the tuned tile kernel streams contiguous panels; the pack
  // is a small fraction of the multiply for the shapes used here.
  thread_local std::vector<float> packed_bt;
  packed_bt.resize(static_cast<std::size_t>(k) * n);
  for (std::int64_t j = 0; j < n; ++j) {
    const float* bj = b + j * ldb;
    for (std::int64_t kk = 0; kk < k; ++kk) packed_bt[static_cast<std::size_t>(kk) * n + j] = bj[kk];
  }
  gemm_nn_avx512(m, n, k, a, lda, packed_bt.data(), n, c, ldc, accumulate);
#else
  gemm_nt_scalar(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#endif
}

void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate) {
  ScopedFlushDenormals ftz;
#ifdef NVQAD_AVX512
  gemm_tn_avx512(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#else
  // Pack A^T once so the inner kernel streams contiguous rows. The pack is a
  // small fraction of the multiply cost for the shapes used here.
  thread_local std::vector<float> packed;
  packed.resize(static_cast<std::size_t>(m) * k);
  for (std::int64_t kk = 0; kk < k; ++kk) {
    const float* arow = a + kk * lda;
    for (std::int64_t i = 0; i < m; ++i) packed[static_cast<std::size_t>(i) * k + kk] = arow[i];
  }
  gemm_nn(m, n, k, packed.data(), k, b, ldb, c, ldc, accumulate);
#endif
}

}  // namespace nvqad::kernels
