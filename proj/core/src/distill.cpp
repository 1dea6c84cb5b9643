// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "nvqad/check.hpp"
#include "nvqad/rng.hpp"

namespace nvqad {

namespace {

// Row count of a logits tensor [..., vocab], validating the mask length.
std::int64_t loss_rows(const std::vector<std::int64_t>& shape,
                       std::span<const std::uint8_t> mask) {
  NVQAD_CHECK(shape.size() >= 2, "loss wants [..., vocab] logits, got " << shape_str(shape));
  std::int64_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  NVQAD_CHECK(mask.empty() || static_cast<std::int64_t>(mask.size()) == rows,
              "mask has " << mask.size() << " entries for " << rows << " positions");
  return rows;
}

std::int64_t count_unmasked(std::span<const std::uint8_t> mask, std::int64_t rows) {
  if (mask.empty()) return rows;
  std::int64_t n = 0;
  for (auto m : mask) n += m != 0;
  NVQAD_CHECK(n >= 1, "every position is masked out");
  return n;
}

// log-softmax of one logits row at temperature, in double.
void log_softmax_row(const float* row, std::int64_t v, double inv_t, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::int64_t i = 0; i < v; ++i) mx = std::max(mx, static_cast<double>(row[i]) * inv_t);
  double z = 0.0;
  for (std::int64_t i = 0; i < v; ++i) {
    out[i] = static_cast<double>(row[i]) * inv_t - mx;
    z += std::exp(out[i]);
  }
  const double lz = std::log(z);
  for (std::int64_t i = 0; i < v; ++i) out[i] -= lz;
}

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.95;
constexpr double kAdamEps = 1e-8;

}  // namespace

const char* train_mode_name(TrainMode m) { return m == TrainMode::kQad ? "qad" : "qat"; }

const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kKl: return "kl";
    case LossKind::kCe: return "ce";
    case LossKind::kMse: return "mse";
  }
  throw Error("invalid loss kind");
}

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

LossKind loss_from_name(const std::string& name) {
  for (auto k : {LossKind::kKl, LossKind::kCe, LossKind::kMse})
    if (name == loss_name(k)) return k;
  throw Error("unknown loss: " + name);
}

OptimizerKind optimizer_from_name(const std::string& name) {
  for (auto k : {OptimizerKind::kSgd, OptimizerKind::kAdam})
    if (name == optimizer_name(k)) return k;
  throw Error("unknown optimizer: " + name);
}

void TrainConfig::validate() const {
  NVQAD_CHECK(temperature > 0.0f, "temperature must be > 0, got " << temperature);
  NVQAD_CHECK(learning_rate > 0.0f, "learning_rate must be > 0, got " << learning_rate);
  NVQAD_CHECK(steps >= 0, "steps must be >= 0, got " << steps);
  NVQAD_CHECK(batch_size >= 1, "batch_size must be >= 1, got " << batch_size);
  NVQAD_CHECK(seq_len >= 2, "seq_len must be >= 2 for next-token labels, got " << seq_len);
  NVQAD_CHECK(eval_every >= 1, "eval_every must be >= 1, got " << eval_every);
  NVQAD_CHECK(mode != TrainMode::kQat || loss == LossKind::kCe,
              "label-supervised training uses cross-entropy, got " << loss_name(loss));
}

NodeId kl_loss(Tape& tape, NodeId teacher_logits, NodeId student_logits, float temperature,
               std::span<const std::uint8_t> mask) {
  NVQAD_CHECK(temperature > 0.0f, "temperature must be > 0, got " << temperature);
  const auto& tsh = tape.shape(teacher_logits);
  const auto& ssh = tape.shape(student_logits);
  NVQAD_CHECK(tsh == ssh, "kl_loss shapes differ: " << shape_str(tsh) << " vs "
                                                    << shape_str(ssh));
  const std::int64_t rows = loss_rows(tsh, mask);
  const std::int64_t v = tsh.back();
  const std::int64_t n = count_unmasked(mask, rows);
  const double inv_t = 1.0 / static_cast<double>(temperature);

  const float* tl = tape.value(teacher_logits).data();
  const float* sl = tape.value(student_logits).data();
  std::vector<double> lpt(static_cast<std::size_t>(v)), lps(static_cast<std::size_t>(v));
  // Gradient to the student only: (p_S - p_T) / (T * n) per unmasked row.
  auto diff = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * v), 0.0f);
  const double gscale = inv_t / static_cast<double>(n);
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask.empty() && mask[static_cast<std::size_t>(r)] == 0) continue;
    log_softmax_row(tl + r * v, v, inv_t, lpt.data());
    log_softmax_row(sl + r * v, v, inv_t, lps.data());
    double kl = 0.0;
    for (std::int64_t i = 0; i < v; ++i) {
      const double pt = std::exp(lpt[static_cast<std::size_t>(i)]);
      kl += pt * (lpt[static_cast<std::size_t>(i)] - lps[static_cast<std::size_t>(i)]);
      (*diff)[static_cast<std::size_t>(r * v + i)] = static_cast<float>(
          (std::exp(lps[static_cast<std::size_t>(i)]) - pt) * gscale);
    }
    total += kl;
  }
  const float value = static_cast<float>(total / static_cast<double>(n));
  return tape.custom({1}, {value}, {student_logits},
                     [student_logits, diff](Tape& t, NodeId self) {
                       if (!t.requires_grad(student_logits)) return;
                       const float g = t.grad(self)[0];
                       auto& gs = t.grad_buf(student_logits);
                       for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g * (*diff)[i];
                     });
}

NodeId ce_loss(Tape& tape, NodeId logits, std::span<const std::int32_t> labels,
               std::span<const std::uint8_t> mask) {
  const auto& sh = tape.shape(logits);
  const std::int64_t rows = loss_rows(sh, mask);
  const std::int64_t v = sh.back();
  NVQAD_CHECK(static_cast<std::int64_t>(labels.size()) == rows,
              "labels have " << labels.size() << " entries for " << rows << " positions");
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask.empty() && mask[static_cast<std::size_t>(r)] == 0) continue;
    NVQAD_CHECK(labels[static_cast<std::size_t>(r)] >= 0 && labels[static_cast<std::size_t>(r)] < v,
                "label " << labels[static_cast<std::size_t>(r)] << " out of range [0, " << v
                         << ") at position " << r);
  }
  const std::int64_t n = count_unmasked(mask, rows);

  const float* lv = tape.value(logits).data();
  std::vector<double> lp(static_cast<std::size_t>(v));
  auto diff = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * v), 0.0f);
  const double gscale = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask.empty() && mask[static_cast<std::size_t>(r)] == 0) continue;
    log_softmax_row(lv + r * v, v, 1.0, lp.data());
    const std::int64_t y = labels[static_cast<std::size_t>(r)];
    total -= lp[static_cast<std::size_t>(y)];
    for (std::int64_t i = 0; i < v; ++i)
      (*diff)[static_cast<std::size_t>(r * v + i)] = static_cast<float>(
          (std::exp(lp[static_cast<std::size_t>(i)]) - (i == y ? 1.0 : 0.0)) * gscale);
  }
  const float value = static_cast<float>(total / static_cast<double>(n));
  return tape.custom({1}, {value}, {logits}, [logits, diff](Tape& t, NodeId self) {
    if (!t.requires_grad(logits)) return;
    const float g = t.grad(self)[0];
    auto& gl = t.grad_buf(logits);
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * (*diff)[i];
  });
}

NodeId mse_logit_loss(Tape& tape, NodeId teacher_logits, NodeId student_logits,
                      std::span<const std::uint8_t> mask) {
  const auto& tsh = tape.shape(teacher_logits);
  const auto& ssh = tape.shape(student_logits);
  NVQAD_CHECK(tsh == ssh, "mse_logit_loss shapes differ: " << shape_str(tsh) << " vs "
                                                           << shape_str(ssh));
  const std::int64_t rows = loss_rows(tsh, mask);
  const std::int64_t v = tsh.back();
  const std::int64_t n = count_unmasked(mask, rows);

  const float* tl = tape.value(teacher_logits).data();
  const float* sl = tape.value(student_logits).data();
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(v));
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask.empty() && mask[static_cast<std::size_t>(r)] == 0) continue;
    for (std::int64_t i = 0; i < v; ++i) {
      const double d = static_cast<double>(sl[r * v + i]) - static_cast<double>(tl[r * v + i]);
      total += d * d;
    }
  }
  const float value = static_cast<float>(total * scale);
  // Backward recomputes 2 (s - t) scale from the stored node values.
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return tape.custom(
      {1}, {value}, {student_logits},
      [teacher_logits, student_logits, v, scale, mask_copy = std::move(mask_copy)](Tape& t,
                                                                                   NodeId self) {
        if (!t.requires_grad(student_logits)) return;
        const float g = t.grad(self)[0];
        const float* tl = t.value(teacher_logits).data();
        const float* sl = t.value(student_logits).data();
        auto& gs = t.grad_buf(student_logits);
        const std::int64_t rows = static_cast<std::int64_t>(gs.size()) / v;
        for (std::int64_t r = 0; r < rows; ++r) {
          if (!mask_copy.empty() && mask_copy[static_cast<std::size_t>(r)] == 0) continue;
          for (std::int64_t i = 0; i < v; ++i)
            gs[static_cast<std::size_t>(r * v + i)] +=
                g * static_cast<float>(2.0 * scale *
                                       (static_cast<double>(sl[r * v + i]) -
                                        static_cast<double>(tl[r * v + i])));
        }
      });
}

Optimizer::Optimizer(OptimizerKind kind, float lr) : kind_(kind), lr_(lr) {
  NVQAD_CHECK(lr > 0.0f, "learning rate must be > 0, got " << lr);
}

void Optimizer::step(NamedTensors& params, const std::vector<std::span<const float>>& grads) {
  NVQAD_CHECK(grads.size() == params.size(),
              "optimizer got " << grads.size() << " grads for " << params.size() << " params");
  if (kind_ == OptimizerKind::kAdam && m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].second.data.size(), 0.0f);
      v_[i].assign(params[i].second.data.size(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 / (1.0 - std::pow(kAdamBeta1, static_cast<double>(t_)));
  const double c2 = 1.0 / (1.0 - std::pow(kAdamBeta2, static_cast<double>(t_)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;  // parameter not touched by this graph
    auto& p = params[i].second.data;
    NVQAD_CHECK(grads[i].size() == p.size(), "grad size mismatch on " << params[i].first);
    const float* g = grads[i].data();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
    } else {
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = static_cast<float>(kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j]);
        v[j] = static_cast<float>(kAdamBeta2 * v[j] +
                                  (1.0 - kAdamBeta2) * static_cast<double>(g[j]) * g[j]);
        const double mh = m[j] * c1;
        const double vh = v[j] * c2;
        p[j] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + kAdamEps));
      }
    }
  }
}

namespace {

// Shared batch assembly: inputs are full rows, the label at position t is the
// next token, and the final position of each row carries no label (masked).
void fill_batch(std::span<const std::vector<std::uint16_t>> rows,
                std::span<const std::int64_t> picks, std::int64_t seq,
                std::vector<std::int32_t>& ids, std::vector<std::int32_t>& labels) {
  for (std::size_t b = 0; b < picks.size(); ++b) {
    const auto& row = rows[static_cast<std::size_t>(picks[b])];
    for (std::int64_t t = 0; t < seq; ++t) {
      ids[b * static_cast<std::size_t>(seq) + static_cast<std::size_t>(t)] = row[static_cast<std::size_t>(t)];
      labels[b * static_cast<std::size_t>(seq) + static_cast<std::size_t>(t)] =
          t + 1 < seq ? row[static_cast<std::size_t>(t + 1)] : 0;
    }
  }
}

constexpr std::int64_t kEvalBatch = 32;

std::pair<NamedTensors, MetricsReport> run_training(const ToyTransformer& teacher,
                                                    ToyTransformer& student, const Dataset& data,
                                                    const TrainConfig& cfg) {
  cfg.validate();
  NVQAD_CHECK(teacher.config().vocab == student.config().vocab,
              "teacher/student vocab mismatch: " << teacher.config().vocab << " vs "
                                                 << student.config().vocab);
  NVQAD_CHECK(data.vocab == student.config().vocab,
              "data vocab " << data.vocab << " != model vocab " << student.config().vocab);
  NVQAD_CHECK(data.seq_len == cfg.seq_len,
              "data is packed at seq_len " << data.seq_len << ", config wants " << cfg.seq_len);
  NVQAD_CHECK(cfg.seq_len <= student.config().max_seq_len &&
                  cfg.seq_len <= teacher.config().max_seq_len,
              "seq_len " << cfg.seq_len << " exceeds a model's max_seq_len");
  NVQAD_CHECK(!data.train.empty(), "no training rows");
  NVQAD_CHECK(!data.val.empty(), "no held-out rows for evaluation");
  for (const auto& [name, t] : teacher.params())
    NVQAD_CHECK(!t.requires_grad, "teacher must be frozen (parameter " << name << " is trainable)");
  student.set_trainable(true);

  const std::int64_t batch = cfg.batch_size;
  const std::int64_t seq = cfg.seq_len;
  const std::uint32_t n_rows = static_cast<std::uint32_t>(data.train.size());
  const bool teacher_in_loss = cfg.mode == TrainMode::kQad && cfg.loss != LossKind::kCe;
  const bool select_by_kl = cfg.mode == TrainMode::kQad;

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(batch * seq), 1);
  for (std::int64_t b = 0; b < batch; ++b)
    mask[static_cast<std::size_t>(b * seq + seq - 1)] = 0;

  MetricsReport rep;
  rep.mode = train_mode_name(cfg.mode);
  rep.loss = loss_name(cfg.loss);
  rep.data_provenance = provenance_name(data.provenance);
  rep.train_loss.reserve(static_cast<std::size_t>(cfg.steps));

  NamedTensors best_ckpt;
  double best = std::numeric_limits<double>::infinity();
  int best_step = 0;
  auto run_eval = [&](int step) {
    EvalRecord r = evaluate(student, teacher, data);
    r.step = step;
    rep.records.push_back(r);
    const double metric = select_by_kl ? r.kl_vs_teacher : r.ce_vs_labels;
    if (metric < best) {
      best = metric;
      best_step = step;
      best_ckpt = student.params();
    }
  };
  run_eval(0);  // the pre-training (PTQ) starting point

  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  Rng batch_rng(cfg.seed, 0x7370657473ull);
  std::vector<std::int64_t> picks(static_cast<std::size_t>(batch));
  std::vector<std::int32_t> ids(static_cast<std::size_t>(batch * seq));
  std::vector<std::int32_t> labels(static_cast<std::size_t>(batch * seq));

  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& p : picks) p = batch_rng.next_below(n_rows);
    fill_batch(data.train, picks, seq, ids, labels);

    Tape tape;
    NodeId loss = -1;
    ForwardResult sf;
    if (teacher_in_loss) {
      ForwardResult tf = teacher.forward(tape, ids, batch, seq);
      sf = student.forward(tape, ids, batch, seq);
      loss = cfg.loss == LossKind::kKl
                 ? kl_loss(tape, tf.logits, sf.logits, cfg.temperature, mask)
                 : mse_logit_loss(tape, tf.logits, sf.logits, mask);
    } else {
      sf = student.forward(tape, ids, batch, seq);
      loss = ce_loss(tape, sf.logits, labels, mask);
    }
    const float lv = tape.value(loss)[0];
    NVQAD_CHECK(std::isfinite(lv), "non-finite " << loss_name(cfg.loss) << " loss at step "
                                                 << step);
    rep.train_loss.push_back(lv);

    tape.backward(loss);
    std::vector<std::span<const float>> grads;
    grads.reserve(sf.params.size());
    for (NodeId p : sf.params) grads.push_back(tape.grad(p));
    opt.step(student.params(), grads);

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) run_eval(step + 1);
  }

  rep.final = rep.records.back();
  rep.best_step = best_step;
  rep.best_metric = best;
  return {std::move(best_ckpt), std::move(rep)};
}

}  // namespace

EvalRecord evaluate(const ToyTransformer& student, const ToyTransformer& teacher,
                    const Dataset& data) {
  NVQAD_CHECK(student.config().vocab == teacher.config().vocab,
              "teacher/student vocab mismatch");
  NVQAD_CHECK(data.vocab == student.config().vocab, "data vocab mismatch");
  NVQAD_CHECK(data.seq_len >= 2, "evaluation needs packed rows with seq_len >= 2");
  NVQAD_CHECK(data.seq_len <= student.config().max_seq_len &&
                  data.seq_len <= teacher.config().max_seq_len,
              "rows longer than a model's max_seq_len");
  NVQAD_CHECK(!data.val.empty(), "no held-out rows");

  const std::int64_t seq = data.seq_len;
  const std::int64_t v = data.vocab;
  double ce_sum = 0.0, kl_sum = 0.0;
  std::int64_t n = 0;
  std::vector<double> lpt(static_cast<std::size_t>(v)), lps(static_cast<std::size_t>(v));

  for (std::size_t begin = 0; begin < data.val.size(); begin += kEvalBatch) {
    const std::int64_t bsz =
        std::min<std::int64_t>(kEvalBatch, static_cast<std::int64_t>(data.val.size() - begin));
    std::vector<std::int32_t> ids(static_cast<std::size_t>(bsz * seq));
    for (std::int64_t b = 0; b < bsz; ++b) {
      const auto& row = data.val[begin + static_cast<std::size_t>(b)];
      for (std::int64_t t = 0; t < seq; ++t)
        ids[static_cast<std::size_t>(b * seq + t)] = row[static_cast<std::size_t>(t)];
    }
    Tape tape;
    ForwardResult tf = teacher.forward(tape, ids, bsz, seq);
    ForwardResult sf = student.forward(tape, ids, bsz, seq);
    const float* tl = tape.value(tf.logits).data();
    const float* sl = tape.value(sf.logits).data();
    for (std::int64_t b = 0; b < bsz; ++b) {
      const auto& row = data.val[begin + static_cast<std::size_t>(b)];
      for (std::int64_t t = 0; t + 1 < seq; ++t) {
        const std::int64_t r = b * seq + t;
        log_softmax_row(tl + r * v, v, 1.0, lpt.data());
        log_softmax_row(sl + r * v, v, 1.0, lps.data());
        ce_sum -= lps[row[static_cast<std::size_t>(t + 1)]];
        double kl = 0.0;
        for (std::int64_t i = 0; i < v; ++i)
          kl += std::exp(lpt[static_cast<std::size_t>(i)]) *
                (lpt[static_cast<std::size_t>(i)] - lps[static_cast<std::size_t>(i)]);
        kl_sum += kl;
        ++n;
      }
    }
  }
  EvalRecord r;
  r.ce_vs_labels = ce_sum / static_cast<double>(n);
  r.kl_vs_teacher = kl_sum / static_cast<double>(n);
  r.val_perplexity = std::exp(r.ce_vs_labels);
  return r;
}

std::pair<NamedTensors, MetricsReport> train_qad(const ToyTransformer& teacher,
                                                 ToyTransformer& student, const Dataset& data,
                                                 const TrainConfig& cfg) {
  NVQAD_CHECK(cfg.mode == TrainMode::kQad, "train_qad got a config in "
                                               << train_mode_name(cfg.mode) << " mode");
  return run_training(teacher, student, data, cfg);
}

std::pair<NamedTensors, MetricsReport> train_qat(const ToyTransformer& eval_teacher,
                                                 ToyTransformer& student, const Dataset& data,
                                                 const TrainConfig& cfg) {
  NVQAD_CHECK(cfg.mode == TrainMode::kQat, "train_qat got a config in "
                                               << train_mode_name(cfg.mode) << " mode");
  return run_training(eval_teacher, student, data, cfg);
}

std::vector<SweepRow> lr_sweep(const std::function<MetricsReport(const TrainConfig&)>& runner,
                               const TrainConfig& base, std::span<const float> lrs) {
  std::vector<float> grid(lrs.begin(), lrs.end());
  if (grid.empty()) grid.assign(std::begin(kDefaultLrGrid), std::end(kDefaultLrGrid));
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (float lr : grid) {
    TrainConfig cfg = base;
    cfg.learning_rate = lr;
    MetricsReport rep = runner(cfg);
    rows.push_back({lr, rep.final, rep.best_step, rep.best_metric});
  }
  std::sort(rows.begin(), rows.end(),
            [](const SweepRow& a, const SweepRow& b) { return a.learning_rate < b.learning_rate; });
  return rows;
}

}  // namespace nvqad
