// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "loom/common.hpp"

namespace loom {

// ===========================================================================
// Synthetic translation domains. Content token ids live in [0, vocab); the
// three specials (pad, bos, eos) are appended AFTER the content range, so
// every content id is a legal data token and modular arithmetic on content
// ids never collides with a special.
// ===========================================================================

inline constexpr int64_t kNumSpecials = 3;

inline int64_t pad_id_for(int64_t content_vocab) { return content_vocab; }
inline int64_t bos_id_for(int64_t content_vocab) { return content_vocab + 1; }
inline int64_t eos_id_for(int64_t content_vocab) { return content_vocab + 2; }
inline int64_t model_vocab_for(int64_t content_vocab) { return content_vocab + kNumSpecials; }

enum class DomainTask : uint8_t { copy, reverse, cipher, shift, sort };

inline const char* domain_task_name(DomainTask t) {
  switch (t) {
    case DomainTask::copy: return "copy";
    case DomainTask::reverse: return "reverse";
    case DomainTask::cipher: return "cipher";
    case DomainTask::shift: return "shift";
    case DomainTask::sort: return "sort";
  }
  return "?";
}

inline DomainTask domain_task_from_name(const std::string& s) {
  for (DomainTask t : {DomainTask::copy, DomainTask::reverse, DomainTask::cipher,
                       DomainTask::shift, DomainTask::sort})
    if (s == domain_task_name(t)) return t;
  throw ContractError("unknown task '" + s + "' (expected copy|reverse|cipher|shift|sort)");
}

struct TaskSpec {
  DomainTask task = DomainTask::copy;
  int64_t shift_k = 1;        // shift task: target id = (source id + k) mod vocab
  uint64_t cipher_key = 17;   // cipher task: seed of the substitution table

  // "copy", "reverse", "sort", "shift:3", "cipher:99"
  static TaskSpec parse(const std::string& text) {
    TaskSpec spec;
    const size_t colon = text.find(':');
    const std::string head = text.substr(0, colon);
    spec.task = domain_task_from_name(head);
    if (colon != std::string::npos) {
      const std::string arg = text.substr(colon + 1);
      try {
        if (spec.task == DomainTask::shift)
          spec.shift_k = std::stoll(arg);
        else if (spec.task == DomainTask::cipher)
          spec.cipher_key = std::stoull(arg);
        else
          throw ContractError("task '" + head + "' takes no argument");
      } catch (const std::logic_error&) {
        throw ContractError("bad task argument in '" + text + "'");
      }
    }
    return spec;
  }

  std::string str() const {
    switch (task) {
      case DomainTask::shift: return std::string("shift:") + std::to_string(shift_k);
      case DomainTask::cipher: return std::string("cipher:") + std::to_string(cipher_key);
      default: return domain_task_name(task);
    }
  }
};

inline constexpr uint64_t kCipherStream = 0x63697068;

// Keyed substitution table: a permutation of [0, vocab).
inline std::vector<int64_t> cipher_table(uint64_t key, int64_t vocab) {
  std::vector<int64_t> table(static_cast<size_t>(vocab));
  std::iota(table.begin(), table.end(), 0);
  Rng rng(mix_seed(key, kCipherStream));
  for (size_t i = table.size(); i > 1; --i)
    std::swap(table[i - 1], table[rng.below(i)]);
  return table;
}

// Target sentence for a source under the task.
inline std::vector<int64_t> apply_task(const TaskSpec& spec, int64_t vocab,
                                       const std::vector<int64_t>& src) {
  for (int64_t id : src)
    LOOM_CHECK(id >= 0 && id < vocab, ContractError,
               "source id " + std::to_string(id) + " outside content vocabulary");
  std::vector<int64_t> tgt = src;
  switch (spec.task) {
    case DomainTask::copy:
      break;
    case DomainTask::reverse:
      std::reverse(tgt.begin(), tgt.end());
      break;
    case DomainTask::cipher: {
      const std::vector<int64_t> table = cipher_table(spec.cipher_key, vocab);
      for (int64_t& id : tgt) id = table[static_cast<size_t>(id)];
      break;
    }
    case DomainTask::shift: {
      for (int64_t& id : tgt) id = ((id + spec.shift_k) % vocab + vocab) % vocab;
      break;
    }
    case DomainTask::sort:
      std::sort(tgt.begin(), tgt.end());
      break;
  }
  return tgt;
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

struct SentencePair {
  std::vector<int64_t> src;
  std::vector<int64_t> tgt;
  bool operator==(const SentencePair&) const = default;
};

using Corpus = std::vector<SentencePair>;

inline constexpr uint64_t kDataStream = 0x64617461;

// Random sentence pairs for the task: uniform lengths in [min_len, max_len],
// uniform content ids, targets derived by apply_task.
inline Corpus generate_corpus(const TaskSpec& spec, int64_t vocab, int64_t count, int64_t min_len,
                              int64_t max_len, uint64_t seed) {
  LOOM_CHECK(vocab >= 2, ContractError, "content vocabulary must have at least 2 tokens");
  LOOM_CHECK(count >= 1, ContractError, "corpus size must be >= 1");
  LOOM_CHECK(1 <= min_len && min_len <= max_len, ContractError, "bad sentence length range");
  Rng rng(mix_seed(seed, kDataStream));
  Corpus corpus;
  corpus.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const int64_t len =
        min_len + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
    std::vector<int64_t> src(static_cast<size_t>(len));
    for (int64_t& id : src) id = static_cast<int64_t>(rng.below(static_cast<uint64_t>(vocab)));
    corpus.push_back({src, apply_task(spec, vocab, src)});
  }
  return corpus;
}

inline constexpr uint64_t kNoiseStream = 0x6e6f6973;

// Replaces the target side of a fraction of pairs with uniform random ids of
// the same length. Models annotation noise in small training sets: a model
// with enough capacity will memorize the corrupted pairs at the expense of
// held-out accuracy.
inline Corpus corrupt_corpus(const Corpus& corpus, int64_t vocab, double fraction, uint64_t seed) {
  LOOM_CHECK(vocab >= 2, ContractError, "content vocabulary must have at least 2 tokens");
  LOOM_CHECK(0.0 <= fraction && fraction <= 1.0, ContractError,
             "noise fraction must lie in [0, 1]");
  Rng rng(mix_seed(seed, kNoiseStream));
  Corpus noisy = corpus;
  const auto corrupted = static_cast<size_t>(fraction * static_cast<double>(noisy.size()));
  for (size_t i = 0; i < noisy.size() && i < corrupted; ++i) {
    for (int64_t& id : noisy[i].tgt) {
      id = static_cast<int64_t>(rng.below(static_cast<uint64_t>(vocab)));
    }
  }
  return noisy;
}

// Takes a seeded random subset of floor(fraction * size) pairs, kept in the
// original order. fraction 1 returns the corpus unchanged.
inline Corpus subsample_corpus(const Corpus& corpus, double fraction, uint64_t seed) {
  LOOM_CHECK(0.0 < fraction && fraction <= 1.0, ContractError,
             "subsample fraction must lie in (0, 1]");
  if (fraction == 1.0) return corpus;
  const auto keep = static_cast<size_t>(fraction * static_cast<double>(corpus.size()));
  LOOM_CHECK(keep >= 1, ContractError, "subsample fraction yields an empty corpus");
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(mix_seed(seed, kDataStream));
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  Corpus out;
  out.reserve(keep);
  for (size_t i : order) out.push_back(corpus[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------
//
// A corpus on disk is a pair of UTF-8 text files, one whitespace-tokenized
// sentence per line, line i of the source file paired with line i of the
// target file. Token ids come from a vocab file with one token per line;
// a token's id is its line number, starting at zero.

inline std::string token_text(int64_t id) { return "tok" + std::to_string(id); }

inline void save_vocab(const std::filesystem::path& path, int64_t vocab) {
  LOOM_CHECK(vocab >= 1, ContractError, "vocab file needs at least one token");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (int64_t id = 0; id < vocab; ++id) out << token_text(id) << '\n';
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline std::vector<std::string> load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::string> tokens;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_of(" \t") != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": vocab entries are single non-empty tokens");
    tokens.push_back(line);
  }
  if (tokens.empty()) throw DataError(path.string() + ": empty vocab file");
  return tokens;
}

inline void save_corpus(const std::filesystem::path& src_path,
                        const std::filesystem::path& tgt_path, const Corpus& corpus) {
  for (const auto* path : {&src_path, &tgt_path}) {
    if (path->has_parent_path()) std::filesystem::create_directories(path->parent_path());
  }
  std::ofstream src(src_path, std::ios::trunc);
  if (!src) throw IoError("cannot open '" + src_path.string() + "' for writing");
  std::ofstream tgt(tgt_path, std::ios::trunc);
  if (!tgt) throw IoError("cannot open '" + tgt_path.string() + "' for writing");
  for (const SentencePair& p : corpus) {
    for (size_t i = 0; i < p.src.size(); ++i) src << (i ? " " : "") << token_text(p.src[i]);
    src << '\n';
    for (size_t i = 0; i < p.tgt.size(); ++i) tgt << (i ? " " : "") << token_text(p.tgt[i]);
    tgt << '\n';
  }
  if (!src) throw IoError("short write to '" + src_path.string() + "'");
  if (!tgt) throw IoError("short write to '" + tgt_path.string() + "'");
}

namespace detail {

inline std::vector<std::vector<int64_t>> read_id_lines(
    const std::filesystem::path& path, const std::unordered_map<std::string, int64_t>& ids) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::vector<int64_t>> lines;
  std::string line, tok;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<int64_t> sent;
    std::istringstream words(line);
    while (words >> tok) {
      const auto hit = ids.find(tok);
      if (hit == ids.end())
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown token '" + tok +
                        "'");
      sent.push_back(hit->second);
    }
    if (sent.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty sentence");
    lines.push_back(std::move(sent));
  }
  return lines;
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& src_path,
                          const std::filesystem::path& tgt_path,
                          const std::vector<std::string>& vocab) {
  std::unordered_map<std::string, int64_t> ids;
  for (size_t i = 0; i < vocab.size(); ++i) {
    if (!ids.emplace(vocab[i], static_cast<int64_t>(i)).second)
      throw DataError("duplicate vocab token '" + vocab[i] + "'");
  }
  const auto src = detail::read_id_lines(src_path, ids);
  const auto tgt = detail::read_id_lines(tgt_path, ids);
  if (src.size() != tgt.size())
    throw DataError("'" + src_path.string() + "' has " + std::to_string(src.size()) +
                    " sentences but '" + tgt_path.string() + "' has " + std::to_string(tgt.size()));
  Corpus corpus(src.size());
  for (size_t i = 0; i < src.size(); ++i) corpus[i] = {src[i], tgt[i]};
  return corpus;
}

// ---------------------------------------------------------------------------
// Dataset directory: train/dev/test splits plus a metadata sidecar.
// ---------------------------------------------------------------------------

struct DatasetMeta {
  std::string domain;
  TaskSpec task;
  int64_t vocab = 0;
  int64_t min_len = 0, max_len = 0;
  uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const DatasetMeta& m) {
  j = {{"domain", m.domain}, {"task", m.task.str()},   {"vocab", m.vocab},
       {"min_len", m.min_len}, {"max_len", m.max_len}, {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetMeta& m) {
  m.domain = j.at("domain").get<std::string>();
  m.task = TaskSpec::parse(j.at("task").get<std::string>());
  m.vocab = j.at("vocab").get<int64_t>();
  m.min_len = j.at("min_len").get<int64_t>();
  m.max_len = j.at("max_len").get<int64_t>();
  m.seed = j.at("seed").get<uint64_t>();
}

struct Dataset {
  DatasetMeta meta;
  Corpus train, dev, test;
};

// Generates disjoint splits (distinct seed streams per split).
inline Dataset generate_dataset(const std::string& domain, const TaskSpec& spec, int64_t vocab,
                                int64_t train_n, int64_t dev_n, int64_t test_n, int64_t min_len,
                                int64_t max_len, uint64_t seed) {
  Dataset ds;
  ds.meta = {domain, spec, vocab, min_len, max_len, seed};
  ds.train = generate_corpus(spec, vocab, train_n, min_len, max_len, mix_seed(seed, 1));
  ds.dev = generate_corpus(spec, vocab, dev_n, min_len, max_len, mix_seed(seed, 2));
  ds.test = generate_corpus(spec, vocab, test_n, min_len, max_len, mix_seed(seed, 3));
  return ds;
}

// Layout: meta.json, vocab.txt, and {train,dev,test}.{src,tgt}.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  save_vocab(dir / "vocab.txt", ds.meta.vocab);
  save_corpus(dir / "train.src", dir / "train.tgt", ds.train);
  save_corpus(dir / "dev.src", dir / "dev.tgt", ds.dev);
  save_corpus(dir / "test.src", dir / "test.tgt", ds.test);
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw IoError("cannot open '" + (dir / "meta.json").string() + "' for writing");
  out << nlohmann::json(ds.meta).dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("cannot open '" + (dir / "meta.json").string() + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad dataset metadata in '" + dir.string() + "': " + e.what());
  }
  Dataset ds;
  ds.meta = j.get<DatasetMeta>();
  const std::vector<std::string> vocab = load_vocab(dir / "vocab.txt");
  if (std::cmp_not_equal(vocab.size(), ds.meta.vocab))
    throw DataError("vocab file in '" + dir.string() + "' has " + std::to_string(vocab.size()) +
                    " tokens, metadata says " + std::to_string(ds.meta.vocab));
  ds.train = load_corpus(dir / "train.src", dir / "train.tgt", vocab);
  ds.dev = load_corpus(dir / "dev.src", dir / "dev.tgt", vocab);
  ds.test = load_corpus(dir / "test.src", dir / "test.tgt", vocab);
  return ds;
}

}  // namespace loom
