// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvqad/data.hpp"
#include "nvqad/model.hpp"
#include "nvqad/tape.hpp"
#include "nvqad/tensor.hpp"

namespace nvqad {

enum class TrainMode { kQad, kQat };
enum class LossKind { kKl, kCe, kMse };
enum class OptimizerKind { kSgd, kAdam };

const char* train_mode_name(TrainMode m);
const char* loss_name(LossKind k);
const char* optimizer_name(OptimizerKind k);
LossKind loss_from_name(const std::string& name);
OptimizerKind optimizer_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::kQad;
  LossKind loss = LossKind::kKl;
  float learning_rate = 1e-5f;
  int steps = 2000;
  int batch_size = 32;
  std::int64_t seq_len = 64;
  float temperature = 1.0f;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int eval_every = 200;

  // Throws on nonsense; in particular the label-supervised mode trains with
  // cross-entropy only.
  void validate() const;
};

// Learning rates swept when the caller does not name any.
inline constexpr float kDefaultLrGrid[] = {1e-4f, 1e-5f, 5e-6f, 1e-6f};

struct EvalRecord {
  int step = 0;
  double ce_vs_labels = 0.0;
  double kl_vs_teacher = 0.0;
  double val_perplexity = 0.0;
};

struct MetricsReport {
  std::string mode;              // "qad" | "qat" | "eval"
  std::string loss;
  std::string data_provenance;
  std::vector<float> train_loss;  // one entry per optimizer step
  std::vector<EvalRecord> records;
  EvalRecord final;
  int best_step = 0;
  // Selection metric at best_step: held-out KL-vs-teacher when distilling,
  // held-out CE when training against labels.
  double best_metric = 0.0;
};

// ---- Losses as graph nodes -------------------------------------------------
// All three reduce to a scalar mean over unmasked token positions. `mask` is
// one byte per position, row-major [batch * seq]; empty means every position
// counts. Rows are softmaxed over the last (vocab) axis.

// Forward KL: mean over positions of sum_y p_T(y) log(p_T(y)/p_S(y)) with
// p = softmax(logits / T). Computed via log-softmax in double; the gradient
// (p_S - p_T) / (T * n_positions) flows to the student argument only.
NodeId kl_loss(Tape& tape, NodeId teacher_logits, NodeId student_logits, float temperature,
               std::span<const std::uint8_t> mask = {});

// Mean negative log-probability of the labels; gradient (p - onehot) / n.
NodeId ce_loss(Tape& tape, NodeId logits, std::span<const std::int32_t> labels,
               std::span<const std::uint8_t> mask = {});

// Mean squared logit difference over unmasked positions and vocab entries;
// gradient 2 (s - t) / (n * V) to the student argument only.
NodeId mse_logit_loss(Tape& tape, NodeId teacher_logits, NodeId student_logits,
                      std::span<const std::uint8_t> mask = {});

// ---- Optimizer -------------------------------------------------------------

// Plain SGD or Adam(beta1 0.9, beta2 0.95, eps 1e-8) with bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, float lr);
  // grads[i] pairs with params[i]; slots with empty grads are skipped.
  void step(NamedTensors& params, const std::vector<std::span<const float>>& grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  float lr_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// ---- Training and evaluation ----------------------------------------------

// Metrics on held-out rows (data.val), no gradients: CE against the data's
// own next-token labels, KL against the teacher at T=1, and exp(CE) as
// perplexity. Forwards run in bounded batches; sums accumulate in double.
EvalRecord evaluate(const ToyTransformer& student, const ToyTransformer& teacher,
                    const Dataset& data);

// Distillation: per step, teacher forward (frozen), student quantized
// forward, the configured loss against the teacher, one optimizer step on
// every student parameter. The student mutates to its final state; the
// returned checkpoint is the best eval point by held-out KL. Deterministic
// given cfg.seed.
std::pair<NamedTensors, MetricsReport> train_qad(const ToyTransformer& teacher,
                                                 ToyTransformer& student, const Dataset& data,
                                                 const TrainConfig& cfg);

// Label supervision: cross-entropy against the dataset's next tokens, no
// teacher in the loss. The teacher here only scores evaluation-time KL so
// the report stays comparable; checkpoint selection is by held-out CE.
std::pair<NamedTensors, MetricsReport> train_qat(const ToyTransformer& eval_teacher,
                                                 ToyTransformer& student, const Dataset& data,
                                                 const TrainConfig& cfg);

// ---- Sweep -----------------------------------------------------------------

struct SweepRow {
  float learning_rate = 0.0f;
  EvalRecord final;
  int best_step = 0;
  double best_metric = 0.0;
};

// Runs `runner` once per learning rate (base config with only the lr
// replaced), identical seed, and returns rows sorted ascending by lr.
std::vector<SweepRow> lr_sweep(
    const std::function<MetricsReport(const TrainConfig&)>& runner, const TrainConfig& base,
    std::span<const float> lrs);

}  // namespace nvqad
