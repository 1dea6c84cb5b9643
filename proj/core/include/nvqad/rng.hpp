// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace nvqad {

// Counter-based generator: output i of stream (seed, stream) is a pure
// function of (seed, stream, i), so corpora are reproducible across
// platforms and parallel generation by index matches sequential output.
//
// mix64 is the splitmix64 finalizer: add the golden-gamma constant
// 0x9E3779B97F4A7C15 per step, then xor-shift-multiply with
// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : base_(mix64(seed ^ mix64(stream + 0x6A09E667F3BCC909ull))) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Output at an absolute index, independent of generator state.
  std::uint64_t at(std::uint64_t index) const { return mix64(base_ + index * 0x9E3779B97F4A7C15ull); }

  std::uint64_t next_u64() { return at(counter_++); }

  // Uniform in (0, 1); offset by half a step so 0 is never returned.
  double next_unit() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53; }

  float uniform(float lo, float hi) { return lo + static_cast<float>(next_unit()) * (hi - lo); }

  // Unbiased-enough integer draw via 128-bit multiply-shift.
  std::uint32_t next_below(std::uint32_t n) {
    return static_cast<std::uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller, one fresh pair of draws per call.
  float normal() {
    double u1 = next_unit();
    double u2 = next_unit();
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace nvqad
