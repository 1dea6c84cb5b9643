// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nvqad/blockquant.hpp"
#include "nvqad/tensor.hpp"

namespace nvqad {

using NodeId = std::int32_t;

// Reverse-mode tape. Define-by-run: each op records its forward value and a
// backward closure; backward(root) walks the recorded nodes once in reverse
// creation order (creation order is a topological order by construction) and
// sum-accumulates gradients into every contributing input.
//
// A tape is single-threaded; build a fresh one per training step (or call
// reset). Values are float32 row-major; reductions inside an op may use
// wider accumulators, but node values are always float32.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() participates in backward; constant() never does.
  NodeId input(const Tensor& t);
  NodeId constant(const Tensor& t);

  // A[..., m, k] @ B -> [..., m, n]. B is either rank-2 [k, n] (applied to
  // every row of the flattened batch) or has identical leading dims.
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);  // same shape
  NodeId mul(NodeId a, NodeId b);  // same shape, elementwise
  NodeId scale(NodeId a, float c);

  // table[V, d] gathered by token id; output shape = ids_shape ++ [d].
  NodeId embedding_lookup(NodeId table, std::span<const std::int32_t> ids,
                          std::vector<std::int64_t> ids_shape);

  NodeId softmax(NodeId a);  // last dim, max-subtracted
  NodeId rmsnorm(NodeId x, NodeId gain, float eps = 1e-5f);
  NodeId gelu(NodeId a);  // tanh form
  NodeId transpose(NodeId a, std::vector<int> perm);
  NodeId reshape(NodeId a, std::vector<std::int64_t> shape);
  // x[..., s, s]: adds -1e9 to strictly-upper-triangular positions so softmax
  // zeroes attention to the future; stays finite everywhere.
  NodeId causal_mask_add(NodeId a);
  NodeId reduce_mean(NodeId a);  // -> scalar [1]

  // Forward: blockquant fake_quantize with a dynamic per-call tensor scale
  // (amax-derived for scaled formats, 1 otherwise). Backward: clipped
  // straight-through; upstream gradient passes where the element stayed in
  // its block's representable range and is zeroed where it saturated.
  NodeId ste_fake_quant(NodeId a, const QuantConfig& config);

  // Escape hatch for ops defined outside the tape (losses). The closure
  // receives the tape and the node's own id; it reads grad(id) and
  // accumulates into grad_buf(input).
  NodeId custom(std::vector<std::int64_t> shape, std::vector<float> value,
                std::vector<NodeId> inputs, std::function<void(Tape&, NodeId)> backward);

  // Seeds d(root)/d(root) = 1 (root must be scalar) and runs every recorded
  // backward once, newest first. Callable once per forward build.
  void backward(NodeId root);

  std::span<const float> value(NodeId id) const;
  const std::vector<std::int64_t>& shape(NodeId id) const;
  bool requires_grad(NodeId id) const;
  // Gradient of the last backward() w.r.t. this node; empty span if the node
  // did not participate.
  std::span<const float> grad(NodeId id) const;

  // Zero-initialized on first touch; backward closures accumulate here.
  std::vector<float>& grad_buf(NodeId id);

  std::int64_t n_nodes() const { return static_cast<std::int64_t>(nodes_.size()); }
  void reset();

 private:
  struct Node {
    std::vector<std::int64_t> shape;
    std::vector<float> value;
    std::vector<float> grad;
    std::function<void(Tape&, NodeId)> backward;
    bool requires_grad = false;
  };

  NodeId push(std::vector<std::int64_t> shape, std::vector<float> value, bool requires_grad,
              std::function<void(Tape&, NodeId)> backward);
  const Node& node(NodeId id) const;
  Node& node(NodeId id);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// Max over coordinates of |analytic - central_difference| / max(1, |analytic|).
// fn(x, grad_out) returns the scalar; when grad_out is non-null it must be
// filled with the analytic gradient (same length as x).
double grad_check(const std::function<double(std::span<const float>, std::vector<float>*)>& fn,
                  std::span<const float> point, double eps);

}  // namespace nvqad
