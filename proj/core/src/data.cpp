// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <utility>

#include "nvqad/check.hpp"
#include "nvqad/parallel.hpp"
#include "nvqad/rng.hpp"

namespace nvqad {

namespace {

constexpr std::uint16_t kNvdsVersion = 1;
// Steps discarded before emitting so chains start near stationarity.
constexpr int kBurnIn = 256;
// Hidden-state count for the grammar source.
constexpr std::int64_t kGrammarStates = 16;

void check_vocab(std::int64_t vocab) {
  NVQAD_CHECK(vocab >= 2 && vocab <= 65536, "vocab must be in [2, 65536], got " << vocab);
}

// `branching` distinct ids from [0, n), deterministic in rng state. Rejection
// is fast for sparse rows; dense rows fall back to a partial shuffle.
std::vector<std::uint16_t> distinct_ids(Rng& rng, std::int64_t n, int branching) {
  std::vector<std::uint16_t> out;
  out.reserve(static_cast<std::size_t>(branching));
  if (branching * 3 <= n) {
    while (static_cast<int>(out.size()) < branching) {
      auto id = static_cast<std::uint16_t>(rng.next_below(static_cast<std::uint32_t>(n)));
      if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    }
  } else {
    std::vector<std::uint16_t> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), std::uint16_t{0});
    for (int i = 0; i < branching; ++i) {
      std::size_t j = i + rng.next_below(static_cast<std::uint32_t>(n - i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

// Exponential(1) weights normalized in double: a generic positive row.
std::vector<double> seeded_row_probs(Rng& rng, int branching) {
  std::vector<double> p(static_cast<std::size_t>(branching));
  double sum = 0.0;
  for (auto& v : p) {
    v = -std::log(rng.next_unit());
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t pick_from_row(std::span<const double> probs, double r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return i;
  }
  return probs.size() - 1;
}

// Grammar source: a hidden-state chain where state s emits a terminal and
// moves on, both chosen from its seeded production row.
struct GrammarTable {
  int branching;
  std::vector<std::uint16_t> terminal;    // [kGrammarStates * branching]
  std::vector<std::uint8_t> next_state;   // same layout
  std::vector<double> prob;
};

GrammarTable build_grammar_table(const SyntheticSource& s) {
  GrammarTable g;
  g.branching = s.branching;
  for (std::int64_t st = 0; st < kGrammarStates; ++st) {
    Rng rng(s.seed, static_cast<std::uint64_t>(st));
    auto terms = distinct_ids(rng, s.vocab, s.branching);
    g.terminal.insert(g.terminal.end(), terms.begin(), terms.end());
    for (int i = 0; i < s.branching; ++i)
      g.next_state.push_back(
          static_cast<std::uint8_t>(rng.next_below(static_cast<std::uint32_t>(kGrammarStates))));
    auto probs = seeded_row_probs(rng, s.branching);
    g.prob.insert(g.prob.end(), probs.begin(), probs.end());
  }
  return g;
}

void validate_source(const SyntheticSource& s) {
  check_vocab(s.vocab);
  NVQAD_CHECK(s.branching >= 1 && s.branching <= s.vocab,
              "branching must be in [1, vocab], got " << s.branching);
}

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  std::string buf;
  std::size_t pos = 0;
  std::uint8_t u8() {
    NVQAD_CHECK(pos < buf.size(), "truncated dataset file");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
};

}  // namespace

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kGroundTruth: return "ground_truth";
    case Provenance::kTeacherGenerated: return "teacher_generated";
    case Provenance::kRandom: return "random";
    case Provenance::kFile: return "file";
  }
  throw Error("invalid provenance tag");
}

Provenance provenance_from_name(const std::string& name) {
  for (auto p : {Provenance::kGroundTruth, Provenance::kTeacherGenerated, Provenance::kRandom,
                 Provenance::kFile})
    if (name == provenance_name(p)) return p;
  throw Error("unknown provenance name: " + name);
}

std::int64_t Dataset::total_tokens() const {
  std::int64_t n = 0;
  for (const auto& s : train) n += static_cast<std::int64_t>(s.size());
  for (const auto& s : val) n += static_cast<std::int64_t>(s.size());
  return n;
}

double TransitionTable::prob_of(std::int64_t cls, std::int64_t token) const {
  const std::size_t base = static_cast<std::size_t>(cls) * static_cast<std::size_t>(branching);
  for (int i = 0; i < branching; ++i)
    if (successor[base + static_cast<std::size_t>(i)] == token)
      return prob[base + static_cast<std::size_t>(i)];
  return 0.0;
}

TransitionTable build_transition_table(const SyntheticSource& source) {
  validate_source(source);
  NVQAD_CHECK(source.kind == SyntheticSource::Kind::kMarkov,
              "transition tables exist only for markov sources");
  TransitionTable t;
  t.vocab = source.vocab;
  t.branching = source.branching;
  t.successor.reserve(static_cast<std::size_t>(source.vocab * source.branching));
  t.prob.reserve(t.successor.capacity());
  // One independent stream per context class keeps the table a pure function
  // of (seed, class), independent of build order.
  for (std::int64_t cls = 0; cls < source.vocab; ++cls) {
    Rng rng(source.seed, static_cast<std::uint64_t>(cls));
    auto succ = distinct_ids(rng, source.vocab, source.branching);
    t.successor.insert(t.successor.end(), succ.begin(), succ.end());
    auto probs = seeded_row_probs(rng, source.branching);
    t.prob.insert(t.prob.end(), probs.begin(), probs.end());
  }
  return t;
}

Dataset gen_ground_truth(const SyntheticSource& source, std::int64_t n_tokens,
                         std::uint64_t seed) {
  validate_source(source);
  NVQAD_CHECK(n_tokens > 0, "n_tokens must be positive, got " << n_tokens);
  Dataset ds;
  ds.vocab = source.vocab;
  ds.provenance = Provenance::kGroundTruth;
  std::vector<std::uint16_t> chain;
  chain.reserve(static_cast<std::size_t>(n_tokens));
  // The sampling stream is namespaced away from the table-building streams
  // (which use the source seed), so corpus seed and source seed are
  // independent knobs.
  Rng rng(seed, 0x676e65746f6bull);

  if (source.kind == SyntheticSource::Kind::kMarkov) {
    TransitionTable table = build_transition_table(source);
    std::int64_t a = 0, b = 0;
    for (std::int64_t i = 0; i < kBurnIn + n_tokens; ++i) {
      const std::size_t base = static_cast<std::size_t>(table.context_class(a, b)) *
                               static_cast<std::size_t>(table.branching);
      std::span<const double> row(table.prob.data() + base,
                                  static_cast<std::size_t>(table.branching));
      std::uint16_t next = table.successor[base + pick_from_row(row, rng.next_unit())];
      if (i >= kBurnIn) chain.push_back(next);
      a = b;
      b = next;
    }
  } else {
    GrammarTable g = build_grammar_table(source);
    std::int64_t state = 0;
    for (std::int64_t i = 0; i < kBurnIn + n_tokens; ++i) {
      const std::size_t base =
          static_cast<std::size_t>(state) * static_cast<std::size_t>(g.branching);
      std::span<const double> row(g.prob.data() + base, static_cast<std::size_t>(g.branching));
      std::size_t pick = base + pick_from_row(row, rng.next_unit());
      if (i >= kBurnIn) chain.push_back(g.terminal[pick]);
      state = g.next_state[pick];
    }
  }
  ds.train.push_back(std::move(chain));
  return ds;
}

Dataset gen_from_teacher(const ToyTransformer& teacher, std::int64_t n_tokens,
                         PromptMode mode,
                         std::span<const std::vector<std::int32_t>> prompts,
                         const SampleParams& sampling, std::uint64_t seed) {
  NVQAD_CHECK(n_tokens > 0, "n_tokens must be positive, got " << n_tokens);
  const std::int64_t slen = teacher.config().max_seq_len;
  const std::int64_t n_seq = (n_tokens + slen - 1) / slen;
  if (mode == PromptMode::kPrefixSet) {
    NVQAD_CHECK(!prompts.empty(), "prefix_set mode needs at least one prompt");
    for (const auto& p : prompts)
      NVQAD_CHECK(!p.empty() && static_cast<std::int64_t>(p.size()) <= slen,
                  "prompt length " << p.size() << " outside [1, " << slen << "]");
  }

  Dataset ds;
  ds.vocab = teacher.config().vocab;
  ds.provenance = Provenance::kTeacherGenerated;
  ds.train.resize(static_cast<std::size_t>(n_seq));
  // Sequence i samples under its own derived stream, so generation is a pure
  // function of (seed, i) and parallel order cannot matter.
  const Rng seeder(seed, 0x726568636165ull);
  ThreadPool::instance().parallel_for(0, n_seq, 1, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      std::vector<std::int32_t> prefix =
          mode == PromptMode::kBosOnly
              ? std::vector<std::int32_t>{0}
              : prompts[static_cast<std::size_t>(i) % prompts.size()];
      SampleParams sp = sampling;
      sp.seed = seeder.at(static_cast<std::uint64_t>(i));
      auto toks =
          sample(teacher, prefix, static_cast<int>(slen - static_cast<std::int64_t>(prefix.size())), sp);
      auto& row = ds.train[static_cast<std::size_t>(i)];
      row.reserve(toks.size());
      for (auto t : toks) row.push_back(static_cast<std::uint16_t>(t));
    }
  });
  return ds;
}

Dataset gen_random(std::int64_t vocab, std::int64_t n_tokens, std::uint64_t seed) {
  check_vocab(vocab);
  NVQAD_CHECK(n_tokens > 0, "n_tokens must be positive, got " << n_tokens);
  Dataset ds;
  ds.vocab = vocab;
  ds.provenance = Provenance::kRandom;
  std::vector<std::uint16_t> chain(static_cast<std::size_t>(n_tokens));
  Rng rng(seed, 0x6d6f646e6172ull);
  for (auto& t : chain) t = static_cast<std::uint16_t>(rng.next_below(static_cast<std::uint32_t>(vocab)));
  ds.train.push_back(std::move(chain));
  return ds;
}

Dataset pack_and_split(const Dataset& raw, std::int64_t seq_len, double val_fraction) {
  check_vocab(raw.vocab);
  NVQAD_CHECK(seq_len >= 1, "seq_len must be >= 1, got " << seq_len);
  NVQAD_CHECK(val_fraction > 0.0 && val_fraction < 1.0,
              "val_fraction must be in (0, 1), got " << val_fraction);

  std::vector<std::uint16_t> stream;
  stream.reserve(static_cast<std::size_t>(raw.total_tokens()));
  for (const auto* split : {&raw.train, &raw.val})
    for (const auto& seq : *split)
      for (std::uint16_t t : seq) {
        NVQAD_CHECK(t < raw.vocab, "token id " << t << " >= vocab " << raw.vocab);
        stream.push_back(t);
      }

  const std::int64_t windows = static_cast<std::int64_t>(stream.size()) / seq_len;
  NVQAD_CHECK(windows >= 1, "need at least " << seq_len << " tokens to pack one window, got "
                                             << stream.size());
  const std::int64_t n_val =
      std::min<std::int64_t>(windows, std::llround(val_fraction * static_cast<double>(windows)));

  Dataset out;
  out.vocab = raw.vocab;
  out.seq_len = seq_len;
  out.provenance = raw.provenance;
  for (std::int64_t w = 0; w < windows; ++w) {
    std::vector<std::uint16_t> row(stream.begin() + w * seq_len,
                                   stream.begin() + (w + 1) * seq_len);
    (w < windows - n_val ? out.train : out.val).push_back(std::move(row));
  }
  return out;
}

void write_nvds(const std::string& path, std::int64_t vocab, std::int64_t seq_len,
                Provenance provenance, std::span<const std::vector<std::uint16_t>> rows) {
  check_vocab(vocab);
  NVQAD_CHECK(seq_len >= 1, "only packed datasets serialize; seq_len " << seq_len);
  std::string buf;
  buf += "NVDS";
  put_u16(buf, kNvdsVersion);
  put_u32(buf, static_cast<std::uint32_t>(vocab));
  put_u32(buf, static_cast<std::uint32_t>(seq_len));
  buf.push_back(static_cast<char>(provenance));
  put_u64(buf, rows.size());
  for (const auto& row : rows) {
    NVQAD_CHECK(static_cast<std::int64_t>(row.size()) == seq_len,
                "row length " << row.size() << " != seq_len " << seq_len);
    for (std::uint16_t t : row) {
      NVQAD_CHECK(t < vocab, "token id " << t << " >= vocab " << vocab);
      put_u16(buf, t);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  NVQAD_CHECK(f.good(), "cannot open " << path << " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  NVQAD_CHECK(f.good(), "write failed: " << path);
}

Dataset read_nvds(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NVQAD_CHECK(f.good(), "cannot open " << path);
  Reader r;
  r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  NVQAD_CHECK(r.buf.size() >= 4 && r.buf.compare(0, 4, "NVDS") == 0, "bad magic in " << path);
  r.pos = 4;
  const std::uint16_t version = r.u16();
  NVQAD_CHECK(version == kNvdsVersion, "unsupported dataset version " << version);
  Dataset ds;
  ds.vocab = r.u32();
  check_vocab(ds.vocab);
  ds.seq_len = r.u32();
  NVQAD_CHECK(ds.seq_len >= 1, "bad seq_len " << ds.seq_len << " in " << path);
  const std::uint8_t tag = r.u8();
  NVQAD_CHECK(tag <= static_cast<std::uint8_t>(Provenance::kFile),
              "bad provenance tag " << static_cast<int>(tag) << " in " << path);
  ds.provenance = static_cast<Provenance>(tag);
  const std::uint64_t count = r.u64();
  const std::uint64_t payload = count * static_cast<std::uint64_t>(ds.seq_len) * 2;
  NVQAD_CHECK(r.buf.size() - r.pos == payload,
              "payload size mismatch in " << path << ": have " << (r.buf.size() - r.pos)
                                          << " bytes, header wants " << payload);
  ds.train.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<std::uint16_t> row(static_cast<std::size_t>(ds.seq_len));
    for (auto& t : row) {
      t = r.u16();
      NVQAD_CHECK(t < ds.vocab, "token id " << t << " >= vocab " << ds.vocab << " in " << path);
    }
    ds.train.push_back(std::move(row));
  }
  return ds;
}

Dataset load_token_file(const std::string& path, std::int64_t vocab) {
  check_vocab(vocab);
  std::ifstream f(path, std::ios::binary);
  NVQAD_CHECK(f.good(), "cannot open " << path);
  std::string buf(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>{});
  NVQAD_CHECK(!buf.empty(), "empty token file " << path);
  NVQAD_CHECK(buf.size() % 2 == 0, "token file " << path << " has odd byte count");
  Dataset ds;
  ds.vocab = vocab;
  ds.provenance = Provenance::kFile;
  std::vector<std::uint16_t> chain(buf.size() / 2);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    chain[i] = static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[2 * i]) |
                                          (static_cast<std::uint8_t>(buf[2 * i + 1]) << 8));
    NVQAD_CHECK(chain[i] < vocab, "token id " << chain[i] << " >= vocab " << vocab << " in "
                                              << path);
  }
  ds.train.push_back(std::move(chain));
  return ds;
}

}  // namespace nvqad
