// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvqad/model.hpp"

namespace nvqad {

enum class Provenance : std::uint8_t {
  kGroundTruth = 0,
  kTeacherGenerated = 1,
  kRandom = 2,
  kFile = 3,
};

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

// Token sequences plus their origin. Fresh generators return variable-length
// sequences in `train` with seq_len == 0; pack_and_split turns that into
// fixed-length windows and a disjoint train/val split.
struct Dataset {
  std::int64_t vocab = 0;
  std::int64_t seq_len = 0;  // 0 until packed
  Provenance provenance = Provenance::kGroundTruth;
  std::vector<std::vector<std::uint16_t>> train;
  std::vector<std::vector<std::uint16_t>> val;

  std::int64_t n_train() const { return static_cast<std::int64_t>(train.size()); }
  std::int64_t n_val() const { return static_cast<std::int64_t>(val.size()); }
  std::int64_t total_tokens() const;
};

// Seeded synthetic corpus family. markov draws each token conditioned on the
// previous two; grammar walks a hidden-state chain that emits terminals. Both
// distributions are fixed functions of (kind, vocab, branching, seed).
struct SyntheticSource {
  enum class Kind { kMarkov, kGrammar };
  Kind kind = Kind::kMarkov;
  std::int64_t vocab = 256;
  int branching = 8;  // sparse successors per context (or per grammar state)
  std::uint64_t seed = 1;
};

// Dense description of the markov source: context (a, b) collapses to class
// (5a + b) mod vocab, and each class owns `branching` distinct successor
// tokens with the stored probabilities. This is the oracle the generated
// corpus must converge to.
struct TransitionTable {
  std::int64_t vocab = 0;
  int branching = 0;
  std::vector<std::uint16_t> successor;  // [vocab * branching]
  std::vector<double> prob;              // rows sum to 1

  std::int64_t context_class(std::int64_t a, std::int64_t b) const {
    return (5 * a + b) % vocab;
  }
  // Full conditional probability of `token` given class `cls` (0 when the
  // token is not a successor of that class).
  double prob_of(std::int64_t cls, std::int64_t token) const;
};

TransitionTable build_transition_table(const SyntheticSource& source);

// One long chain from the synthetic source (single raw sequence), after a
// fixed burn-in so samples start near the stationary distribution.
Dataset gen_ground_truth(const SyntheticSource& source, std::int64_t n_tokens,
                         std::uint64_t seed);

enum class PromptMode { kBosOnly, kPrefixSet };

// Autoregressive corpus from a trained model: sequences of the teacher's
// max_seq_len, each sampled with an independent per-sequence stream derived
// from `seed`. kBosOnly starts every sequence at token 0; kPrefixSet cycles
// through `prompts` (each must fit in max_seq_len). sampling.seed is ignored
// in favor of the derived streams.
Dataset gen_from_teacher(const ToyTransformer& teacher, std::int64_t n_tokens,
                         PromptMode mode,
                         std::span<const std::vector<std::int32_t>> prompts,
                         const SampleParams& sampling, std::uint64_t seed);

// i.i.d. uniform token ids over [0, vocab).
Dataset gen_random(std::int64_t vocab, std::int64_t n_tokens, std::uint64_t seed);

// Concatenate every sequence (train then val, in order) and rechunk into
// floor(total / seq_len) windows; the last llround(val_fraction * windows)
// windows become val. Throws if not even one window fits.
Dataset pack_and_split(const Dataset& raw, std::int64_t seq_len, double val_fraction);

// Serialized pool of fixed-length sequences. Only packed data round-trips;
// callers write the train and val splits as separate files.
void write_nvds(const std::string& path, std::int64_t vocab, std::int64_t seq_len,
                Provenance provenance, std::span<const std::vector<std::uint16_t>> rows);
// Reads a pool back with every sequence in `train` and `val` empty.
Dataset read_nvds(const std::string& path);

// Plain binary loader: the whole file is little-endian u16 token ids, checked
// against vocab and returned as one raw sequence tagged kFile.
Dataset load_token_file(const std::string& path, std::int64_t vocab);

}  // namespace nvqad
