// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nvqad {

// Dense row-major float tensor. Plain value type: ops and gradients live on
// the Tape, this is just shaped storage.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<float> d, bool rg = false);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, float v);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t i) const { return shape[i]; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
};

std::int64_t shape_numel(std::span<const std::int64_t> shape);
std::string shape_str(std::span<const std::int64_t> shape);

// Checkpoint container: insertion order is preserved and significant (it is
// the parameter flattening order).
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_nvck(const std::string& path, const NamedTensors& tensors);
NamedTensors read_nvck(const std::string& path);

// 64-bit FNV-1a over shapes and raw float payloads; order-sensitive.
// Cheap fingerprint for teacher-frozenness and zero-step identity checks.
std::uint64_t checksum(const NamedTensors& tensors);

}  // namespace nvqad
