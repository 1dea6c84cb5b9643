// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#if defined(__SSE__)
#include <xmmintrin.h>
#define NVQAD_MXCSR 1
#endif

namespace nvqad::kernels {

// Runs the enclosing scope in flush-to-zero / denormals-are-zero mode and
// restores the caller's MXCSR on exit. A subnormal operand costs a microcode
// assist of roughly 100x the pipelined FMA latency, and both the attention
// probabilities and late-backprop gradients sit near the underflow boundary.
// Quantization encode paths must NOT run under this guard: they rely on exact
// gradual-underflow arithmetic.
#ifdef NVQAD_MXCSR
class ScopedFlushDenormals {
 public:
  ScopedFlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~ScopedFlushDenormals() { _mm_setcsr(saved_); }
  ScopedFlushDenormals(const ScopedFlushDenormals&) = delete;
  ScopedFlushDenormals& operator=(const ScopedFlushDenormals&) = delete;

 private:
  unsigned saved_;
};
#else
class ScopedFlushDenormals {};
#endif

// Compute kernels shared by the tensor engine and the quantizer. The SIMD
// and scalar paths execute the same operation sequence (fused
// multiply-adds, identical polynomial order), so results are bit-identical
// across the two builds of a given libm-free function.

// exp with input clamped to 88 above; below -87 the result is exact zero
// (never a subnormal — see ScopedFlushDenormals). Callers only pass
// max-subtracted exponents, so neither edge is hit with meaningful magnitudes.
void vexp(float* dst, const float* src, std::int64_t n);

// tanh via (e^{2|x|} - 1) / (e^{2|x|} + 1) with the sign restored.
void vtanh(float* dst, const float* src, std::int64_t n);

// max |x|; throws on NaN or infinity anywhere in the buffer.
float reduce_absmax(const float* x, std::int64_t n);

bool all_finite(const float* x, std::int64_t n);

// C[m,n] = A[m,k] * B[k,n] (+= when accumulate). Row-major with leading
// dimensions; deterministic fixed-order accumulation.
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate);

// C[m,n] = A[m,k] * B[n,k]^T (+= when accumulate).
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate);

// C[m,n] = A[k,m]^T * B[k,n] (+= when accumulate).
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k,
             const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb,
             float* c, std::int64_t ldc, bool accumulate);

}  // namespace nvqad::kernels
