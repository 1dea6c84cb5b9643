// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nvqad/rng.hpp"

using namespace nvqad;

TEST_CASE("same seed and stream reproduce the sequence") {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct seeds and streams diverge") {
  Rng a(42), b(43), c(42, 1);
  int equal_ab = 0, equal_ac = 0;
  for (int i = 0; i < 64; ++i) {
    std::uint64_t x = a.next_u64();
    if (x == b.next_u64()) ++equal_ab;
    Rng probe(42, 1);
    (void)probe;
  }
  Rng a2(42), c2(42, 1);
  for (int i = 0; i < 64; ++i)
    if (a2.next_u64() == c2.next_u64()) ++equal_ac;
  CHECK(equal_ab == 0);
  CHECK(equal_ac == 0);
  (void)c;
}

TEST_CASE("at(index) equals the sequential draw at that index") {
  Rng a(99);
  std::vector<std::uint64_t> seq;
  for (int i = 0; i < 100; ++i) seq.push_back(a.next_u64());
  Rng b(99);
  for (int i = 99; i >= 0; --i) CHECK(b.at(static_cast<std::uint64_t>(i)) == seq[static_cast<std::size_t>(i)]);
}

TEST_CASE("next_unit stays in (0,1); uniform respects bounds") {
  Rng r(3);
  for (int i = 0; i < 100000; ++i) {
    double u = r.next_unit();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 10000; ++i) {
    float x = r.uniform(-2.0f, 5.0f);
    CHECK(x >= -2.0f);
    CHECK(x <= 5.0f);
  }
}

TEST_CASE("next_below covers [0, n) roughly uniformly") {
  Rng r(8);
  const std::uint32_t n = 17;
  std::vector<int> counts(n, 0);
  const int draws = 170000;
  for (int i = 0; i < draws; ++i) {
    std::uint32_t v = r.next_below(n);
    REQUIRE(v < n);
    ++counts[v];
  }
  for (std::uint32_t v = 0; v < n; ++v) {
    CHECK(counts[v] > draws / static_cast<int>(n) / 2);
    CHECK(counts[v] < draws * 2 / static_cast<int>(n));
  }
}

TEST_CASE("normal has near-zero mean and unit variance") {
  Rng r(123);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 1.0) < 0.02);
}
