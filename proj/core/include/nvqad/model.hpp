// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nvqad/blockquant.hpp"
#include "nvqad/tape.hpp"
#include "nvqad/tensor.hpp"

namespace nvqad {

struct ModelConfig {
  std::int64_t vocab = 256;
  std::int64_t d_model = 128;
  std::int64_t n_layers = 4;
  std::int64_t n_heads = 4;
  std::int64_t max_seq_len = 64;
  float ffn_mult = 2.0f;

  std::int64_t d_head() const { return d_model / n_heads; }
  std::int64_t d_ff() const { return static_cast<std::int64_t>(static_cast<double>(d_model) * ffn_mult); }
  // Throws Error unless every field is positive, d_model divides evenly into
  // heads, and the vocabulary fits the u16 token id width.
  void validate() const;
};

// Which linears run through fake quantization. Selection is by transformer
// block: a block is kept full-precision when its index falls in the first
// keep_first_k or last keep_last_k blocks. Within a selected block,
// skip_attention_linears restricts quantization to the FFN. The override map
// (keyed by the audit name, e.g. "block1.ffn.w1") wins over all of that.
// Token embedding and the LM head stay full precision unless
// quantize_embeddings is set; block selection never applies to them.
struct QuantPolicy {
  bool quantize_weights = true;
  bool quantize_activations = true;
  int keep_first_k = 0;
  int keep_last_k = 0;
  bool skip_attention_linears = false;
  bool quantize_embeddings = false;
  QuantConfig format = QuantConfig::nvfp4();
  std::map<std::string, bool> overrides;

  // block < 0 means "outside the block stack" (embedding table, LM head).
  bool selects(const std::string& name, int block, int n_layers, bool attention) const;
  bool is_noop() const { return !quantize_weights && !quantize_activations; }
};

// Never-quantize-anything policy, used for teachers and reference paths.
QuantPolicy full_precision_policy();

struct LinearAudit {
  std::string name;
  bool attention = false;
  bool quantized = false;
};

struct ForwardResult {
  NodeId logits = -1;                // [batch, seq, vocab]
  std::vector<NodeId> params;       // aligned with ToyTransformer::params()
};

struct SampleParams {
  float temperature = 1.0f;
  float top_p = 1.0f;
  std::uint64_t seed = 0;
  bool argmax = false;  // greedy decoding, ignores temperature/top_p/seed
};

// Decoder-only transformer: learned token + position embeddings, pre-norm
// blocks of causal multi-head attention and a GELU FFN, RMSNorm throughout,
// no biases. Teacher and student share this code and differ only in policy
// and trainability.
class ToyTransformer {
 public:
  ToyTransformer(ModelConfig config, QuantPolicy policy, std::uint64_t seed);

  // Rebuilds a model from checkpoint tensors; names and shapes must match the
  // layout for `config` exactly. The result is bit-identical to the source.
  static ToyTransformer from_checkpoint(ModelConfig config, QuantPolicy policy,
                                        const NamedTensors& tensors);

  const ModelConfig& config() const { return config_; }
  const QuantPolicy& policy() const { return policy_; }
  void set_policy(QuantPolicy p) { policy_ = std::move(p); }

  NamedTensors& params() { return params_; }
  const NamedTensors& params() const { return params_; }
  std::int64_t n_params() const;
  // Marks every parameter as trainable or frozen (teachers are frozen, so
  // backward never touches their buffers).
  void set_trainable(bool trainable);

  // Registers parameters on the tape and builds the full graph. ids is a
  // row-major [batch, seq] batch; every id must be in [0, vocab) and
  // seq <= max_seq_len.
  ForwardResult forward(Tape& tape, std::span<const std::int32_t> ids,
                        std::int64_t batch, std::int64_t seq) const;

  const NamedTensors::value_type& param(std::size_t i) const { return params_[i]; }

 private:
  ToyTransformer(ModelConfig config, QuantPolicy policy);

  ModelConfig config_;
  QuantPolicy policy_;
  NamedTensors params_;
};

// Autoregressive nucleus sampling; deterministic given params.seed. Appends
// `steps` tokens to a non-empty prefix, windowing the context to the model's
// max_seq_len. temperature must be > 0 unless argmax is set.
std::vector<std::int32_t> sample(const ToyTransformer& model,
                                 std::span<const std::int32_t> prefix, int steps,
                                 const SampleParams& params);

// One row per GEMM weight (attention, FFN, LM head) with its policy decision,
// in forward order. The audit is the ground truth for quantized-layer counts.
std::vector<LinearAudit> count_quantized_layers(const ToyTransformer& model);

}  // namespace nvqad
