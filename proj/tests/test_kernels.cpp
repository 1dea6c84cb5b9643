// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "nvqad/check.hpp"
#include "nvqad/kernels.hpp"
#include "nvqad/parallel.hpp"
#include "nvqad/rng.hpp"

using namespace nvqad;

namespace {

// Straightforward triple loop in double; the reference for every gemm layout.
void gemm_ref(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
              const float* b, std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate,
              bool ta, bool tb) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * ldc + j] : 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        float av = ta ? a[p * lda + i] : a[i * lda + p];
        float bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += static_cast<double>(av) * bv;
      }
      c[i * ldc + j] = static_cast<float>(acc);
    }
  }
}

std::vector<float> random_vec(Rng& r, std::int64_t n, float scale = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(r.normal()) * scale;
  return v;
}

void check_close(const std::vector<float>& got, const std::vector<float>& want, double tol) {
  REQUIRE(got.size() == want.size());
  double scale = 0.0;
  for (float w : want) scale = std::max(scale, static_cast<double>(std::fabs(w)));
  scale = std::max(scale, 1.0);
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(std::fabs(static_cast<double>(got[i]) - want[i]) <= tol * scale);
  }
}

}  // namespace

TEST_CASE("vexp tracks std::exp over the clamped domain") {
  std::vector<float> x;
  for (float v = -87.0f; v <= 88.0f; v += 0.37f) x.push_back(v);
  Rng rng(1, 0);
  for (int i = 0; i < 2000; ++i) x.push_back(static_cast<float>(rng.normal()) * 20.0f);
  x.push_back(0.0f);
  x.push_back(-0.0f);
  x.push_back(1.0f);
  x.push_back(-1.0f);
  std::vector<float> y(x.size());
  kernels::vexp(y.data(), x.data(), static_cast<std::int64_t>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double want = std::exp(static_cast<double>(x[i]));
    double rel = std::fabs(y[i] - want) / want;
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("vexp underflows to exact zero and clamps overflow") {
  std::vector<float> x{-1000.0f, -88.0f, -87.0f, 89.0f, 1000.0f};
  std::vector<float> y(x.size());
  kernels::vexp(y.data(), x.data(), 5);
  // Deep underflow must be exact zero, never a subnormal: these values feed
  // straight into GEMM, where a subnormal operand costs a microcode assist.
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] > 0.0f);  // the floor itself still evaluates normally
  CHECK(std::isnormal(y[2]));
  CHECK(std::isfinite(y[3]));
  CHECK(y[3] == y[4]);  // overflow side still clamps
  CHECK(y[3] > 1e38f);
}

TEST_CASE("vtanh tracks std::tanh including saturation") {
  std::vector<float> x;
  for (float v = -50.0f; v <= 50.0f; v += 0.11f) x.push_back(v);
  x.push_back(0.0f);
  x.push_back(-0.0f);
  x.push_back(1e-8f);
  x.push_back(-1e-8f);
  std::vector<float> y(x.size());
  kernels::vtanh(y.data(), x.data(), static_cast<std::int64_t>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double want = std::tanh(static_cast<double>(x[i]));
    CHECK(std::fabs(y[i] - want) < 1e-6);
  }
  CHECK(std::signbit(y[x.size() - 1]));  // tiny negative keeps its sign
}

TEST_CASE("vexp and vtanh handle ragged lengths identically to one-at-a-time") {
  Rng rng(2, 0);
  for (std::int64_t n : {1, 2, 15, 16, 17, 31, 33, 100}) {
    auto x = random_vec(rng, n, 3.0f);
    std::vector<float> batch(x.size()), single(x.size());
    kernels::vexp(batch.data(), x.data(), n);
    for (std::int64_t i = 0; i < n; ++i) kernels::vexp(single.data() + i, x.data() + i, 1);
    for (std::int64_t i = 0; i < n; ++i) CHECK(batch[static_cast<std::size_t>(i)] == single[static_cast<std::size_t>(i)]);
    kernels::vtanh(batch.data(), x.data(), n);
    for (std::int64_t i = 0; i < n; ++i) kernels::vtanh(single.data() + i, x.data() + i, 1);
    for (std::int64_t i = 0; i < n; ++i) CHECK(batch[static_cast<std::size_t>(i)] == single[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("reduce_absmax and all_finite") {
  std::vector<float> x{1.0f, -7.5f, 3.0f, 0.0f};
  CHECK(kernels::reduce_absmax(x.data(), 4) == 7.5f);
  CHECK(kernels::all_finite(x.data(), 4));

  std::vector<float> big(1000, 0.25f);
  big[777] = -123.0f;
  CHECK(kernels::reduce_absmax(big.data(), 1000) == 123.0f);

  big[777] = std::numeric_limits<float>::quiet_NaN();
  CHECK(!kernels::all_finite(big.data(), 1000));
  CHECK_THROWS_AS(kernels::reduce_absmax(big.data(), 1000), Error);
  big[777] = std::numeric_limits<float>::infinity();
  CHECK(!kernels::all_finite(big.data(), 1000));
  CHECK_THROWS_AS(kernels::reduce_absmax(big.data(), 1000), Error);
  big[777] = -std::numeric_limits<float>::infinity();
  CHECK(!kernels::all_finite(big.data(), 1000));

  CHECK(kernels::reduce_absmax(x.data(), 0) == 0.0f);
  CHECK(kernels::all_finite(x.data(), 0));
}

TEST_CASE("gemm layouts match the reference on varied shapes") {
  Rng rng(3, 1);
  struct Shape { std::int64_t m, n, k; };
  const Shape shapes[] = {{1, 1, 1},   {2, 3, 4},    {4, 64, 16},  {5, 65, 17},
                          {3, 63, 31}, {17, 100, 9}, {64, 64, 64}, {33, 129, 40},
                          {8, 256, 128}};
  for (const auto& s : shapes) {
    auto a = random_vec(rng, s.m * s.k);
    auto b = random_vec(rng, s.k * s.n);
    auto at = std::vector<float>(static_cast<std::size_t>(s.m * s.k));
    auto bt = std::vector<float>(static_cast<std::size_t>(s.k * s.n));
    for (std::int64_t i = 0; i < s.m; ++i)
      for (std::int64_t p = 0; p < s.k; ++p)
        at[static_cast<std::size_t>(p * s.m + i)] = a[static_cast<std::size_t>(i * s.k + p)];
    for (std::int64_t p = 0; p < s.k; ++p)
      for (std::int64_t j = 0; j < s.n; ++j)
        bt[static_cast<std::size_t>(j * s.k + p)] = b[static_cast<std::size_t>(p * s.n + j)];

    std::vector<float> want(static_cast<std::size_t>(s.m * s.n));
    gemm_ref(s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, want.data(), s.n, false, false, false);
    double tol = 1e-6 * std::sqrt(static_cast<double>(s.k)) * 10.0;

    std::vector<float> c(static_cast<std::size_t>(s.m * s.n), 777.0f);
    kernels::gemm_nn(s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, c.data(), s.n, false);
    check_close(c, want, tol);

    std::fill(c.begin(), c.end(), 777.0f);
    kernels::gemm_nt(s.m, s.n, s.k, a.data(), s.k, bt.data(), s.k, c.data(), s.n, false);
    check_close(c, want, tol);

    std::fill(c.begin(), c.end(), 777.0f);
    kernels::gemm_tn(s.m, s.n, s.k, at.data(), s.m, b.data(), s.n, c.data(), s.n, false);
    check_close(c, want, tol);

    // Accumulation adds on top of existing C for every layout.
    std::vector<float> base = random_vec(rng, s.m * s.n);
    std::vector<float> want_acc = base;
    gemm_ref(s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, want_acc.data(), s.n, true, false, false);
    c = base;
    kernels::gemm_nn(s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, c.data(), s.n, true);
    check_close(c, want_acc, tol);
    c = base;
    kernels::gemm_nt(s.m, s.n, s.k, a.data(), s.k, bt.data(), s.k, c.data(), s.n, true);
    check_close(c, want_acc, tol);
    c = base;
    kernels::gemm_tn(s.m, s.n, s.k, at.data(), s.m, b.data(), s.n, c.data(), s.n, true);
    check_close(c, want_acc, tol);
  }
}

TEST_CASE("gemm respects leading dimensions wider than the logical shape") {
  Rng rng(4, 0);
  const std::int64_t m = 5, n = 20, k = 7, lda = 12, ldb = 31, ldc = 26;
  std::vector<float> a(static_cast<std::size_t>(m * lda), -9.0f);
  std::vector<float> b(static_cast<std::size_t>(k * ldb), -9.0f);
  std::vector<float> apack(static_cast<std::size_t>(m * k)), bpack(static_cast<std::size_t>(k * n));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      float v = static_cast<float>(rng.normal());
      a[static_cast<std::size_t>(i * lda + p)] = v;
      apack[static_cast<std::size_t>(i * k + p)] = v;
    }
  for (std::int64_t p = 0; p < k; ++p)
    for (std::int64_t j = 0; j < n; ++j) {
      float v = static_cast<float>(rng.normal());
      b[static_cast<std::size_t>(p * ldb + j)] = v;
      bpack[static_cast<std::size_t>(p * n + j)] = v;
    }
  std::vector<float> want(static_cast<std::size_t>(m * n));
  gemm_ref(m, n, k, apack.data(), k, bpack.data(), n, want.data(), n, false, false, false);
  std::vector<float> c(static_cast<std::size_t>(m * ldc), 5.5f);
  kernels::gemm_nn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc, false);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j)
      CHECK(c[static_cast<std::size_t>(i * ldc + j)] ==
            doctest::Approx(want[static_cast<std::size_t>(i * n + j)]).epsilon(1e-4));
    for (std::int64_t j = n; j < ldc; ++j)
      CHECK(c[static_cast<std::size_t>(i * ldc + j)] == 5.5f);  // padding untouched
  }
}

TEST_CASE("gemm is deterministic across repeated calls") {
  Rng rng(5, 0);
  auto a = random_vec(rng, 37 * 53);
  auto b = random_vec(rng, 53 * 71);
  std::vector<float> c1(static_cast<std::size_t>(37 * 71)), c2(c1.size());
  kernels::gemm_nn(37, 71, 53, a.data(), 53, b.data(), 71, c1.data(), 71, false);
  kernels::gemm_nn(37, 71, 53, a.data(), 53, b.data(), 71, c2.data(), 71, false);
  CHECK(c1 == c2);
}

TEST_CASE("parallel_for covers the range exactly once") {
  const std::int64_t n = 100000;
  std::vector<std::uint8_t> hit(n, 0);
  ThreadPool::instance().parallel_for(0, n, 1, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) ++hit[static_cast<std::size_t>(i)];
  });
  CHECK(std::count(hit.begin(), hit.end(), 1) == n);

  // Empty and tiny ranges.
  std::atomic<int> calls{0};
  ThreadPool::instance().parallel_for(5, 5, 1, [&](std::int64_t, std::int64_t) { ++calls; });
  CHECK(calls.load() == 0);
  std::atomic<std::int64_t> sum{0};
  ThreadPool::instance().parallel_for(10, 13, 1, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) sum += i;
  });
  CHECK(sum.load() == 33);
}

TEST_CASE("parallel_for propagates exceptions from workers") {
  CHECK_THROWS_AS(ThreadPool::instance().parallel_for(
                      0, 10000, 1,
                      [&](std::int64_t lo, std::int64_t) {
                        if (lo >= 0) throw Error("worker failure");
                      }),
                  Error);
  // The pool survives and keeps working afterwards.
  std::atomic<std::int64_t> count{0};
  ThreadPool::instance().parallel_for(0, 1000, 1, [&](std::int64_t lo, std::int64_t hi) {
    count += hi - lo;
  });
  CHECK(count.load() == 1000);
}
