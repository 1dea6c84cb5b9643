// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nvqad/check.hpp"
#include "nvqad/rng.hpp"

namespace nvqad {

namespace {

struct ParamSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  bool is_norm_gain;
};

// Single source of truth for parameter order, names, and shapes. Fresh
// initialization, checkpoint loading, and forward indexing all walk this.
std::vector<ParamSpec> param_layout(const ModelConfig& c) {
  std::vector<ParamSpec> out;
  out.push_back({"tok_emb", {c.vocab, c.d_model}, false});
  out.push_back({"pos_emb", {c.max_seq_len, c.d_model}, false});
  for (std::int64_t b = 0; b < c.n_layers; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.push_back({p + "attn_norm", {c.d_model}, true});
    out.push_back({p + "attn.wq", {c.d_model, c.d_model}, false});
    out.push_back({p + "attn.wk", {c.d_model, c.d_model}, false});
    out.push_back({p + "attn.wv", {c.d_model, c.d_model}, false});
    out.push_back({p + "attn.wo", {c.d_model, c.d_model}, false});
    out.push_back({p + "ffn_norm", {c.d_model}, true});
    out.push_back({p + "ffn.w1", {c.d_model, c.d_ff()}, false});
    out.push_back({p + "ffn.w2", {c.d_ff(), c.d_model}, false});
  }
  out.push_back({"final_norm", {c.d_model}, true});
  out.push_back({"lm_head", {c.d_model, c.vocab}, false});
  return out;
}

// Parameter indices relative to param_layout: two embedding tables, then
// eight tensors per block, then the final norm and head.
constexpr std::size_t kParamsPerBlock = 8;
std::size_t block_base(std::int64_t b) { return 2 + static_cast<std::size_t>(b) * kParamsPerBlock; }

constexpr float kInitStd = 0.02f;

}  // namespace

void ModelConfig::validate() const {
  NVQAD_CHECK(vocab >= 2 && vocab <= 65536, "vocab must be in [2, 65536], got " << vocab);
  NVQAD_CHECK(d_model > 0 && n_layers > 0 && n_heads > 0 && max_seq_len > 0,
              "model dims must be positive");
  NVQAD_CHECK(d_model % n_heads == 0,
              "d_model " << d_model << " not divisible by n_heads " << n_heads);
  NVQAD_CHECK(ffn_mult > 0.0f && d_ff() > 0, "ffn_mult must be positive, got " << ffn_mult);
}

bool QuantPolicy::selects(const std::string& name, int block, int n_layers, bool attention) const {
  auto it = overrides.find(name);
  if (it != overrides.end()) return it->second;
  if (block < 0) return quantize_embeddings;
  if (block < keep_first_k || block >= n_layers - keep_last_k) return false;
  if (attention && skip_attention_linears) return false;
  return true;
}

QuantPolicy full_precision_policy() {
  QuantPolicy p;
  p.quantize_weights = false;
  p.quantize_activations = false;
  return p;
}

ToyTransformer::ToyTransformer(ModelConfig config, QuantPolicy policy)
    : config_(config), policy_(std::move(policy)) {
  config_.validate();
}

ToyTransformer::ToyTransformer(ModelConfig config, QuantPolicy policy, std::uint64_t seed)
    : ToyTransformer(config, std::move(policy)) {
  const auto layout = param_layout(config_);
  params_.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout[i];
    if (spec.is_norm_gain) {
      params_.emplace_back(spec.name, Tensor::full(spec.shape, 1.0f));
    } else {
      Rng rng(seed, i);
      std::vector<float> data(static_cast<std::size_t>(shape_numel(spec.shape)));
      for (float& v : data) v = kInitStd * rng.normal();
      params_.emplace_back(spec.name, Tensor(spec.shape, std::move(data)));
    }
    params_.back().second.requires_grad = true;
  }
}

ToyTransformer ToyTransformer::from_checkpoint(ModelConfig config, QuantPolicy policy,
                                               const NamedTensors& tensors) {
  ToyTransformer m(config, std::move(policy));
  const auto layout = param_layout(m.config_);
  NVQAD_CHECK(tensors.size() == layout.size(), "checkpoint has " << tensors.size()
                                                                 << " tensors, model needs "
                                                                 << layout.size());
  m.params_.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, t] = tensors[i];
    NVQAD_CHECK(name == layout[i].name,
                "checkpoint tensor " << i << " is '" << name << "', expected '" << layout[i].name
                                     << "'");
    NVQAD_CHECK(t.shape == layout[i].shape, "checkpoint tensor '" << name << "' has shape "
                                                                  << shape_str(t.shape));
    m.params_.emplace_back(name, t);
    m.params_.back().second.requires_grad = true;
  }
  return m;
}

std::int64_t ToyTransformer::n_params() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ToyTransformer::set_trainable(bool trainable) {
  for (auto& [name, t] : params_) t.requires_grad = trainable;
}

ForwardResult ToyTransformer::forward(Tape& tape, std::span<const std::int32_t> ids,
                                      std::int64_t batch, std::int64_t seq) const {
  NVQAD_CHECK(batch >= 1 && seq >= 1, "empty batch");
  NVQAD_CHECK(static_cast<std::int64_t>(ids.size()) == batch * seq,
              "ids size " << ids.size() << " != " << batch << "x" << seq);
  NVQAD_CHECK(seq <= config_.max_seq_len,
              "seq " << seq << " exceeds max_seq_len " << config_.max_seq_len);
  for (std::int32_t id : ids)
    NVQAD_CHECK(id >= 0 && id < config_.vocab, "token id " << id << " out of range [0, "
                                                           << config_.vocab << ")");

  ForwardResult r;
  r.params.reserve(params_.size());
  for (const auto& [name, t] : params_) r.params.push_back(tape.input(t));

  const int L = static_cast<int>(config_.n_layers);
  const std::int64_t d = config_.d_model;
  const std::int64_t heads = config_.n_heads;
  const std::int64_t dh = config_.d_head();

  auto quant_w = [&](NodeId w, const std::string& name, int block, bool attn) {
    if (policy_.quantize_weights && policy_.selects(name, block, L, attn))
      return tape.ste_fake_quant(w, policy_.format);
    return w;
  };
  auto quant_a = [&](NodeId x, const std::string& name, int block, bool attn) {
    if (policy_.quantize_activations && policy_.selects(name, block, L, attn))
      return tape.ste_fake_quant(x, policy_.format);
    return x;
  };
  // A selected GEMM runs with both operands through fake quantization: the
  // weight and the incoming activation. The output stays full precision.
  auto linear = [&](NodeId in, std::size_t pidx, const std::string& name, int block, bool attn) {
    return tape.matmul(quant_a(in, name, block, attn), quant_w(r.params[pidx], name, block, attn));
  };

  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  NodeId x = tape.embedding_lookup(quant_w(r.params[0], "tok_emb", -1, false), idv, {batch, seq});
  std::vector<std::int32_t> pos(static_cast<std::size_t>(batch * seq));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t s = 0; s < seq; ++s) pos[static_cast<std::size_t>(b * seq + s)] = static_cast<std::int32_t>(s);
  x = tape.add(x, tape.embedding_lookup(r.params[1], pos, {batch, seq}));

  for (int b = 0; b < L; ++b) {
    const std::size_t base = block_base(b);
    const std::string pfx = "block" + std::to_string(b) + ".";

    NodeId h = tape.rmsnorm(x, r.params[base + 0]);
    NodeId q = linear(h, base + 1, pfx + "attn.wq", b, true);
    NodeId k = linear(h, base + 2, pfx + "attn.wk", b, true);
    NodeId v = linear(h, base + 3, pfx + "attn.wv", b, true);
    auto split_heads = [&](NodeId z) {
      return tape.transpose(tape.reshape(z, {batch, seq, heads, dh}), {0, 2, 1, 3});
    };
    NodeId scores = tape.matmul(split_heads(q), tape.transpose(split_heads(k), {0, 1, 3, 2}));
    scores = tape.causal_mask_add(
        tape.scale(scores, 1.0f / std::sqrt(static_cast<float>(dh))));
    NodeId ctx = tape.matmul(tape.softmax(scores), split_heads(v));
    ctx = tape.reshape(tape.transpose(ctx, {0, 2, 1, 3}), {batch, seq, d});
    x = tape.add(x, linear(ctx, base + 4, pfx + "attn.wo", b, true));

    NodeId h2 = tape.rmsnorm(x, r.params[base + 5]);
    NodeId f = tape.gelu(linear(h2, base + 6, pfx + "ffn.w1", b, false));
    x = tape.add(x, linear(f, base + 7, pfx + "ffn.w2", b, false));
  }

  x = tape.rmsnorm(x, r.params[block_base(L)]);
  r.logits = linear(x, block_base(L) + 1, "lm_head", -1, false);
  return r;
}

std::vector<std::int32_t> sample(const ToyTransformer& model,
                                 std::span<const std::int32_t> prefix, int steps,
                                 const SampleParams& params) {
  NVQAD_CHECK(!prefix.empty(), "sample needs a non-empty prefix");
  NVQAD_CHECK(steps >= 0, "steps must be >= 0, got " << steps);
  NVQAD_CHECK(params.argmax || params.temperature > 0.0f,
              "temperature must be > 0, got " << params.temperature);
  NVQAD_CHECK(params.argmax || (params.top_p > 0.0f && params.top_p <= 1.0f),
              "top_p must be in (0, 1], got " << params.top_p);

  const auto& cfg = model.config();
  const std::int64_t vocab = cfg.vocab;
  std::vector<std::int32_t> out(prefix.begin(), prefix.end());
  Rng rng(params.seed, 0);
  std::vector<double> p(static_cast<std::size_t>(vocab));
  std::vector<int> order(static_cast<std::size_t>(vocab));

  for (int step = 0; step < steps; ++step) {
    const std::int64_t len = static_cast<std::int64_t>(out.size());
    const std::int64_t start = std::max<std::int64_t>(0, len - cfg.max_seq_len);
    std::span<const std::int32_t> window(out.data() + start,
                                         static_cast<std::size_t>(len - start));
    Tape tape;
    ForwardResult fr = model.forward(tape, window, 1, static_cast<std::int64_t>(window.size()));
    const float* last = tape.value(fr.logits).data() + (window.size() - 1) * vocab;

    std::int32_t next = 0;
    if (params.argmax) {
      for (std::int64_t i = 1; i < vocab; ++i)
        if (last[i] > last[next]) next = static_cast<std::int32_t>(i);
    } else {
      double mx = last[0];
      for (std::int64_t i = 1; i < vocab; ++i) mx = std::max(mx, static_cast<double>(last[i]));
      double sum = 0.0;
      for (std::int64_t i = 0; i < vocab; ++i) {
        p[static_cast<std::size_t>(i)] =
            std::exp((static_cast<double>(last[i]) - mx) / params.temperature);
        sum += p[static_cast<std::size_t>(i)];
      }
      for (double& v : p) v /= sum;
      // Nucleus: the smallest prefix of the probability-sorted vocabulary
      // whose mass reaches top_p, renormalized. Ties break on lower id.
      for (std::int64_t i = 0; i < vocab; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)]
                   ? p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]
                   : a < b;
      });
      std::size_t keep = order.size();
      double cum = 0.0;
      for (std::size_t i = 0; i < order.size(); ++i) {
        cum += p[static_cast<std::size_t>(order[i])];
        if (cum >= static_cast<double>(params.top_p) - 1e-12) {
          keep = i + 1;
          break;
        }
      }
      double kept_mass = 0.0;
      for (std::size_t i = 0; i < keep; ++i) kept_mass += p[static_cast<std::size_t>(order[i])];
      const double r = rng.next_unit() * kept_mass;
      double acc = 0.0;
      next = order[keep - 1];
      for (std::size_t i = 0; i < keep; ++i) {
        acc += p[static_cast<std::size_t>(order[i])];
        if (r < acc) {
          next = order[i];
          break;
        }
      }
    }
    out.push_back(next);
  }
  return out;
}

std::vector<LinearAudit> count_quantized_layers(const ToyTransformer& model) {
  const auto& policy = model.policy();
  const int L = static_cast<int>(model.config().n_layers);
  const bool active = !policy.is_noop();
  std::vector<LinearAudit> rows;
  for (int b = 0; b < L; ++b) {
    const std::string pfx = "block" + std::to_string(b) + ".";
    for (const char* nm : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      rows.push_back({pfx + nm, true, active && policy.selects(pfx + nm, b, L, true)});
    for (const char* nm : {"ffn.w1", "ffn.w2"})
      rows.push_back({pfx + nm, false, active && policy.selects(pfx + nm, b, L, false)});
  }
  rows.push_back({"lm_head", false, active && policy.selects("lm_head", -1, L, false)});
  return rows;
}

}  // namespace nvqad
