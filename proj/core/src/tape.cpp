// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "nvqad/check.hpp"
#include "nvqad/kernels.hpp"

namespace nvqad {

namespace {

#ifndef NDEBUG
void debug_check_finite(const std::vector<float>& v, const char* op) {
  NVQAD_CHECK(kernels::all_finite(v.data(), static_cast<std::int64_t>(v.size())),
              "non-finite value produced by " << op);
}
#define NVQAD_FINITE(v, op) debug_check_finite(v, op)
#else
#define NVQAD_FINITE(v, op) (void)0
#endif

std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& shape) {
  std::vector<std::int64_t> s(shape.size());
  std::int64_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// Node buffers recycle through a thread-local pool: one training step churns
// through hundreds of MB of short-lived value/grad vectors, and handing the
// pages back to the allocator would bounce every step through mmap and
// kernel page-zeroing. take() hands out zeroed, warm storage.
class BufferPool {
 public:
  std::vector<float> take(std::size_t n) {
    auto it = free_.lower_bound(n);
    std::vector<float> v;
    if (it != free_.end()) {
      held_ -= it->first;
      v = std::move(it->second);
      free_.erase(it);
    }
    v.resize(n);  // value-initializes: a pooled buffer comes back zeroed
    return v;
  }

  void give(std::vector<float>&& v) {
    const std::size_t cap = v.capacity();
    if (cap == 0 || held_ + cap > kMaxHeldFloats) return;
    held_ += cap;
    v.clear();
    free_.emplace(cap, std::move(v));
  }

 private:
  static constexpr std::size_t kMaxHeldFloats = (std::size_t{512} << 20) / sizeof(float);
  std::multimap<std::size_t, std::vector<float>> free_;
  std::size_t held_ = 0;
};

thread_local BufferPool g_pool;

std::vector<float> pooled(std::size_t n) { return g_pool.take(n); }

std::vector<float> pooled_copy(const float* p, std::size_t n) {
  auto v = g_pool.take(n);
  std::copy(p, p + n, v.begin());
  return v;
}

}  // namespace

NodeId Tape::push(std::vector<std::int64_t> shape, std::vector<float> value, bool requires_grad,
                  std::function<void(Tape&, NodeId)> backward) {
  NVQAD_CHECK(!ran_backward_, "tape already ran backward; reset before building more nodes");
  NVQAD_CHECK(shape_numel(shape) == static_cast<std::int64_t>(value.size()),
              "node shape " << shape_str(shape) << " wants " << shape_numel(shape)
                            << " values, got " << value.size());
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = requires_grad ? std::move(backward) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(NodeId id) const {
  NVQAD_CHECK(id >= 0 && id < static_cast<NodeId>(nodes_.size()), "bad node id " << id);
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(NodeId id) {
  NVQAD_CHECK(id >= 0 && id < static_cast<NodeId>(nodes_.size()), "bad node id " << id);
  return nodes_[static_cast<std::size_t>(id)];
}

NodeId Tape::input(const Tensor& t) {
  return push(t.shape, pooled_copy(t.data.data(), t.data.size()), t.requires_grad, nullptr);
}

NodeId Tape::constant(const Tensor& t) {
  return push(t.shape, pooled_copy(t.data.data(), t.data.size()), false, nullptr);
}

std::span<const float> Tape::value(NodeId id) const { return node(id).value; }

const std::vector<std::int64_t>& Tape::shape(NodeId id) const { return node(id).shape; }

bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

std::span<const float> Tape::grad(NodeId id) const { return node(id).grad; }

std::vector<float>& Tape::grad_buf(NodeId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad = pooled(n.value.size());
  return n.grad;
}

void Tape::reset() {
  for (Node& n : nodes_) {
    g_pool.give(std::move(n.value));
    g_pool.give(std::move(n.grad));
  }
  nodes_.clear();
  ran_backward_ = false;
}

Tape::~Tape() { reset(); }

void Tape::backward(NodeId root) {
  NVQAD_CHECK(!ran_backward_, "backward already ran on this tape");
  const Node& r = node(root);
  NVQAD_CHECK(r.value.size() == 1, "backward root must be scalar, got " << shape_str(r.shape));
  ran_backward_ = true;
  grad_buf(root)[0] = 1.0f;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad.empty() && n.backward) n.backward(*this, id);
  }
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const auto& ash = shape(a);
  const auto& bsh = shape(b);
  NVQAD_CHECK(ash.size() >= 2, "matmul lhs must have rank >= 2, got " << shape_str(ash));
  const std::int64_t m = ash[ash.size() - 2];
  const std::int64_t k = ash.back();
  bool b_is_weight = bsh.size() == 2;
  if (!b_is_weight) {
    NVQAD_CHECK(bsh.size() == ash.size() &&
                    std::equal(ash.begin(), ash.end() - 2, bsh.begin()),
                "matmul batch dims differ: " << shape_str(ash) << " vs " << shape_str(bsh));
  }
  NVQAD_CHECK(bsh[bsh.size() - 2] == k,
              "matmul inner dims differ: " << shape_str(ash) << " vs " << shape_str(bsh));
  const std::int64_t n = bsh.back();
  std::vector<std::int64_t> osh(ash.begin(), ash.end() - 1);
  osh.push_back(n);
  const std::int64_t batch = shape_numel(ash) / (m * k);  // rows of the flattened batch / m

  auto out = pooled(static_cast<std::size_t>(batch * m * n));
  const float* av = value(a).data();
  const float* bv = value(b).data();
  if (b_is_weight) {
    kernels::gemm_nn(batch * m, n, k, av, k, bv, n, out.data(), n, false);
  } else {
    for (std::int64_t s = 0; s < batch; ++s)
      kernels::gemm_nn(m, n, k, av + s * m * k, k, bv + s * k * n, n, out.data() + s * m * n, n,
                       false);
  }
  NVQAD_FINITE(out, "matmul");

  bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(osh), std::move(out), rg,
              [a, b, m, n, k, batch, b_is_weight](Tape& t, NodeId self) {
                const float* g = t.grad(self).data();
                const float* av = t.value(a).data();
                const float* bv = t.value(b).data();
                if (b_is_weight) {
                  if (t.requires_grad(a))
                    kernels::gemm_nt(batch * m, k, n, g, n, bv, n, t.grad_buf(a).data(), k, true);
                  if (t.requires_grad(b))
                    kernels::gemm_tn(k, n, batch * m, av, k, g, n, t.grad_buf(b).data(), n, true);
                } else {
                  if (t.requires_grad(a)) {
                    float* ga = t.grad_buf(a).data();
                    for (std::int64_t s = 0; s < batch; ++s)
                      kernels::gemm_nt(m, k, n, g + s * m * n, n, bv + s * k * n, n,
                                       ga + s * m * k, k, true);
                  }
                  if (t.requires_grad(b)) {
                    float* gb = t.grad_buf(b).data();
                    for (std::int64_t s = 0; s < batch; ++s)
                      kernels::gemm_tn(k, n, m, av + s * m * k, k, g + s * m * n, n,
                                       gb + s * k * n, n, true);
                  }
                }
              });
}

NodeId Tape::add(NodeId a, NodeId b) {
  NVQAD_CHECK(shape(a) == shape(b),
              "add shapes differ: " << shape_str(shape(a)) << " vs " << shape_str(shape(b)));
  auto av = value(a);
  auto bv = value(b);
  auto out = pooled(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NVQAD_FINITE(out, "add");
  return push(shape(a), std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, NodeId self) {
                auto g = t.grad(self);
                if (t.requires_grad(a)) {
                  auto& ga = t.grad_buf(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (t.requires_grad(b)) {
                  auto& gb = t.grad_buf(b);
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
              });
}

NodeId Tape::mul(NodeId a, NodeId b) {
  NVQAD_CHECK(shape(a) == shape(b),
              "mul shapes differ: " << shape_str(shape(a)) << " vs " << shape_str(shape(b)));
  auto av = value(a);
  auto bv = value(b);
  auto out = pooled(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NVQAD_FINITE(out, "mul");
  return push(shape(a), std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, NodeId self) {
                auto g = t.grad(self);
                auto av = t.value(a);
                auto bv = t.value(b);
                if (t.requires_grad(a)) {
                  auto& ga = t.grad_buf(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (t.requires_grad(b)) {
                  auto& gb = t.grad_buf(b);
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
              });
}

NodeId Tape::scale(NodeId a, float c) {
  auto av = value(a);
  auto out = pooled(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  NVQAD_FINITE(out, "scale");
  return push(shape(a), std::move(out), requires_grad(a), [a, c](Tape& t, NodeId self) {
    auto g = t.grad(self);
    auto& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

NodeId Tape::embedding_lookup(NodeId table, std::span<const std::int32_t> ids,
                              std::vector<std::int64_t> ids_shape) {
  const auto& tsh = shape(table);
  NVQAD_CHECK(tsh.size() == 2, "embedding table must be rank 2, got " << shape_str(tsh));
  const std::int64_t v = tsh[0], d = tsh[1];
  NVQAD_CHECK(shape_numel(ids_shape) == static_cast<std::int64_t>(ids.size()),
              "ids shape " << shape_str(ids_shape) << " wants " << shape_numel(ids_shape)
                           << " ids, got " << ids.size());
  auto out = pooled(ids.size() * static_cast<std::size_t>(d));
  const float* tv = value(table).data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::int32_t id = ids[i];
    NVQAD_CHECK(id >= 0 && id < v, "token id " << id << " out of range [0, " << v << ")");
    std::copy_n(tv + static_cast<std::int64_t>(id) * d, d, out.data() + i * static_cast<std::size_t>(d));
  }
  std::vector<std::int64_t> osh = std::move(ids_shape);
  osh.push_back(d);
  std::vector<std::int32_t> saved_ids(ids.begin(), ids.end());
  return push(std::move(osh), std::move(out), requires_grad(table),
              [table, d, saved_ids = std::move(saved_ids)](Tape& t, NodeId self) {
                auto g = t.grad(self);
                float* gt = t.grad_buf(table).data();
                for (std::size_t i = 0; i < saved_ids.size(); ++i) {
                  float* dst = gt + static_cast<std::int64_t>(saved_ids[i]) * d;
                  const float* src = g.data() + i * static_cast<std::size_t>(d);
                  for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
              });
}

NodeId Tape::softmax(NodeId a) {
  const auto& sh = shape(a);
  NVQAD_CHECK(!sh.empty(), "softmax needs rank >= 1");
  const std::int64_t w = sh.back();
  const std::int64_t rows = shape_numel(sh) / w;
  auto av = value(a);
  auto out = pooled(av.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = av.data() + r * w;
    float* y = out.data() + r * w;
    float mx = x[0];
    for (std::int64_t i = 1; i < w; ++i) mx = std::max(mx, x[i]);
    for (std::int64_t i = 0; i < w; ++i) y[i] = x[i] - mx;
  }
  kernels::vexp(out.data(), out.data(), static_cast<std::int64_t>(out.size()));
  for (std::int64_t r = 0; r < rows; ++r) {
    float* y = out.data() + r * w;
    float sum = 0.0f;
    for (std::int64_t i = 0; i < w; ++i) sum += y[i];
    float inv = 1.0f / sum;
    for (std::int64_t i = 0; i < w; ++i) y[i] *= inv;
  }
  NVQAD_FINITE(out, "softmax");
  return push(sh, std::move(out), requires_grad(a), [a, rows, w](Tape& t, NodeId self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto& ga = t.grad_buf(a);
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* gr = g.data() + r * w;
      const float* yr = y.data() + r * w;
      float dot = 0.0f;
      for (std::int64_t i = 0; i < w; ++i) dot += gr[i] * yr[i];
      float* dst = ga.data() + r * w;
      for (std::int64_t i = 0; i < w; ++i) dst[i] += yr[i] * (gr[i] - dot);
    }
  });
}

NodeId Tape::rmsnorm(NodeId x, NodeId gain, float eps) {
  const auto& sh = shape(x);
  const auto& gsh = shape(gain);
  NVQAD_CHECK(!sh.empty(), "rmsnorm needs rank >= 1");
  const std::int64_t d = sh.back();
  NVQAD_CHECK(gsh.size() == 1 && gsh[0] == d,
              "rmsnorm gain must be [" << d << "], got " << shape_str(gsh));
  const std::int64_t rows = shape_numel(sh) / d;
  auto xv = value(x);
  auto gv = value(gain);
  auto out = pooled(xv.size());
  auto rinv = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * d;
    double ms = 0.0;
    for (std::int64_t i = 0; i < d; ++i) ms += static_cast<double>(xr[i]) * xr[i];
    float ri = 1.0f / std::sqrt(static_cast<float>(ms / d) + eps);
    (*rinv)[static_cast<std::size_t>(r)] = ri;
    float* y = out.data() + r * d;
    for (std::int64_t i = 0; i < d; ++i) y[i] = xr[i] * ri * gv[static_cast<std::size_t>(i)];
  }
  NVQAD_FINITE(out, "rmsnorm");
  return push(sh, std::move(out), requires_grad(x) || requires_grad(gain),
              [x, gain, rows, d, rinv](Tape& t, NodeId self) {
                auto g = t.grad(self);
                auto xv = t.value(x);
                auto gv = t.value(gain);
                bool need_x = t.requires_grad(x);
                bool need_g = t.requires_grad(gain);
                float* gx = need_x ? t.grad_buf(x).data() : nullptr;
                float* gg = need_g ? t.grad_buf(gain).data() : nullptr;
                for (std::int64_t r = 0; r < rows; ++r) {
                  const float* xr = xv.data() + r * d;
                  const float* gr = g.data() + r * d;
                  float ri = (*rinv)[static_cast<std::size_t>(r)];
                  if (need_x) {
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < d; ++i)
                      dot += static_cast<double>(gr[i]) * gv[static_cast<std::size_t>(i)] * xr[i];
                    float c = ri * ri * ri * static_cast<float>(dot) / static_cast<float>(d);
                    float* dst = gx + r * d;
                    for (std::int64_t i = 0; i < d; ++i)
                      dst[i] += ri * gv[static_cast<std::size_t>(i)] * gr[i] - xr[i] * c;
                  }
                  if (need_g)
                    for (std::int64_t i = 0; i < d; ++i) gg[i] += gr[i] * xr[i] * ri;
                }
              });
}

NodeId Tape::gelu(NodeId a) {
  constexpr float kA = 0.7978845608f;  // sqrt(2/pi)
  constexpr float kC = 0.044715f;
  auto av = value(a);
  // The saved tanh buffer is as big as the activation; recycle it too.
  auto t_saved = std::shared_ptr<std::vector<float>>(
      new std::vector<float>(pooled(av.size())),
      [](std::vector<float>* p) {
        g_pool.give(std::move(*p));
        delete p;
      });
  std::vector<float>& th = *t_saved;
  for (std::size_t i = 0; i < av.size(); ++i) {
    float x = av[i];
    th[i] = kA * (x + kC * x * x * x);
  }
  kernels::vtanh(th.data(), th.data(), static_cast<std::int64_t>(th.size()));
  auto out = pooled(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = 0.5f * av[i] * (1.0f + th[i]);
  NVQAD_FINITE(out, "gelu");
  return push(shape(a), std::move(out), requires_grad(a),
              [a, t_saved](Tape& t, NodeId self) {
                auto g = t.grad(self);
                auto xv = t.value(a);
                auto& ga = t.grad_buf(a);
                const std::vector<float>& th = *t_saved;
                for (std::size_t i = 0; i < g.size(); ++i) {
                  float x = xv[i];
                  float tt = th[i];
                  float du = kA * (1.0f + 3.0f * kC * x * x);
                  float dydx = 0.5f * (1.0f + tt) + 0.5f * x * (1.0f - tt * tt) * du;
                  ga[i] += g[i] * dydx;
                }
              });
}

NodeId Tape::transpose(NodeId a, std::vector<int> perm) {
  const auto& ish = shape(a);
  const int r = static_cast<int>(ish.size());
  NVQAD_CHECK(static_cast<int>(perm.size()) == r,
              "perm rank " << perm.size() << " vs tensor rank " << r);
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    NVQAD_CHECK(p >= 0 && p < r && !seen[static_cast<std::size_t>(p)], "invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<std::int64_t> osh(static_cast<std::size_t>(r));
  auto istr = strides_of(ish);
  std::vector<std::int64_t> map(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    osh[static_cast<std::size_t>(i)] = ish[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    map[static_cast<std::size_t>(i)] = istr[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const std::int64_t n = shape_numel(ish);
  auto av = value(a);
  auto out = pooled(static_cast<std::size_t>(n));
  // Odometer walk over output coordinates with an incrementally updated
  // input index; O(n) with no per-element division.
  std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
  std::int64_t in_idx = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    out[static_cast<std::size_t>(o)] = av[static_cast<std::size_t>(in_idx)];
    for (int d2 = r - 1; d2 >= 0; --d2) {
      auto di = static_cast<std::size_t>(d2);
      in_idx += map[di];
      if (++coord[di] < osh[di]) break;
      in_idx -= map[di] * osh[di];
      coord[di] = 0;
    }
  }
  return push(std::move(osh), std::move(out), requires_grad(a),
              [a, map, r](Tape& t, NodeId self) {
                const auto& osh = t.shape(self);
                auto g = t.grad(self);
                auto& ga = t.grad_buf(a);
                std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
                std::int64_t in_idx = 0;
                const std::int64_t n = static_cast<std::int64_t>(g.size());
                for (std::int64_t o = 0; o < n; ++o) {
                  ga[static_cast<std::size_t>(in_idx)] += g[static_cast<std::size_t>(o)];
                  for (int d2 = r - 1; d2 >= 0; --d2) {
                    auto di = static_cast<std::size_t>(d2);
                    in_idx += map[di];
                    if (++coord[di] < osh[di]) break;
                    in_idx -= map[di] * osh[di];
                    coord[di] = 0;
                  }
                }
              });
}

NodeId Tape::reshape(NodeId a, std::vector<std::int64_t> nsh) {
  NVQAD_CHECK(shape_numel(nsh) == shape_numel(shape(a)),
              "reshape " << shape_str(shape(a)) << " -> " << shape_str(nsh)
                         << " changes element count");
  auto av = value(a);
  auto out = pooled_copy(av.data(), av.size());
  return push(std::move(nsh), std::move(out), requires_grad(a), [a](Tape& t, NodeId self) {
    auto g = t.grad(self);
    auto& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

NodeId Tape::causal_mask_add(NodeId a) {
  const auto& sh = shape(a);
  NVQAD_CHECK(sh.size() >= 2 && sh[sh.size() - 1] == sh[sh.size() - 2],
              "causal mask needs [..., s, s], got " << shape_str(sh));
  const std::int64_t s = sh.back();
  const std::int64_t mats = shape_numel(sh) / (s * s);
  auto av = value(a);
  auto out = pooled_copy(av.data(), av.size());
  constexpr float kNeg = -1e9f;
  for (std::int64_t m = 0; m < mats; ++m) {
    float* base = out.data() + m * s * s;
    for (std::int64_t i = 0; i < s; ++i)
      for (std::int64_t j = i + 1; j < s; ++j) base[i * s + j] += kNeg;
  }
  NVQAD_FINITE(out, "causal_mask_add");
  // Adding a constant: gradient passes through everywhere unchanged.
  return push(sh, std::move(out), requires_grad(a), [a](Tape& t, NodeId self) {
    auto g = t.grad(self);
    auto& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

NodeId Tape::reduce_mean(NodeId a) {
  auto av = value(a);
  NVQAD_CHECK(!av.empty(), "reduce_mean of empty tensor");
  double sum = 0.0;
  for (float v : av) sum += v;
  const float inv = 1.0f / static_cast<float>(av.size());
  std::vector<float> out{static_cast<float>(sum / static_cast<double>(av.size()))};
  return push({1}, std::move(out), requires_grad(a), [a, inv](Tape& t, NodeId self) {
    float g = t.grad(self)[0] * inv;
    auto& ga = t.grad_buf(a);
    for (auto& v : ga) v += g;
  });
}

NodeId Tape::ste_fake_quant(NodeId a, const QuantConfig& config) {
  const auto& sh = shape(a);
  NVQAD_CHECK(!sh.empty(), "ste_fake_quant needs rank >= 1");
  auto av = value(a);
  const std::int64_t n = static_cast<std::int64_t>(av.size());
  const std::int64_t last = sh.back();
  float ts = config.format == QuantFormat::NVFP4
                 ? tensor_scale_from_amax(abs_max(av), config)
                 : 1.0f;
  auto out = pooled(av.size());
  auto sat = std::make_shared<std::vector<std::uint8_t>>(av.size());
  fake_quantize_into(out.data(), av.data(), n, last, config, ts, sat->data());
  return push(sh, std::move(out), requires_grad(a), [a, sat](Tape& t, NodeId self) {
    auto g = t.grad(self);
    auto& ga = t.grad_buf(a);
    const std::vector<std::uint8_t>& m = *sat;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (m[i]) ga[i] += g[i];
  });
}

NodeId Tape::custom(std::vector<std::int64_t> shape, std::vector<float> value,
                    std::vector<NodeId> inputs, std::function<void(Tape&, NodeId)> backward) {
  bool rg = false;
  for (NodeId i : inputs) rg = rg || requires_grad(i);
  NVQAD_FINITE(value, "custom");
  return push(std::move(shape), std::move(value), rg, std::move(backward));
}

double grad_check(const std::function<double(std::span<const float>, std::vector<float>*)>& fn,
                  std::span<const float> point, double eps) {
  NVQAD_CHECK(eps > 0.0, "grad_check eps must be positive");
  std::vector<float> x(point.begin(), point.end());
  std::vector<float> analytic;
  fn(x, &analytic);
  NVQAD_CHECK(analytic.size() == x.size(),
              "analytic gradient size " << analytic.size() << " vs point size " << x.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + static_cast<float>(eps);
    double fp = fn(x, nullptr);
    x[i] = orig - static_cast<float>(eps);
    double fm = fn(x, nullptr);
    x[i] = orig;
    double fd = (fp - fm) / (2.0 * eps);
    double rel = std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(static_cast<double>(analytic[i])));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace nvqad
