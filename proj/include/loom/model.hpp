// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "loom/common.hpp"
#include "loom/graph.hpp"
#include "loom/mask.hpp"
#include "loom/param_store.hpp"
#include "loom/tensor.hpp"

namespace loom {

// ===========================================================================
// Sequence-to-sequence transformer: pre-norm encoder/decoder blocks, shared
// source/target embedding tied to the output projection, sinusoidal position
// encodings baked in as constants. Graphs are built per (source, target)
// length pair and cached by the caller.
// ===========================================================================

struct ModelConfig {
  int64_t vocab_size = 0;  // includes the reserved specials below
  int64_t dim = 64;
  int64_t ffn_dim = 128;
  int64_t heads = 2;
  int64_t layers = 2;
  int64_t max_len = 32;
  double ln_eps = 1e-5;
  int64_t adapter_dim = 0;  // 0 disables adapter blocks
  int64_t pad_id = -1;
  int64_t bos_id = -1;
  int64_t eos_id = -1;

  int64_t head_dim() const { return dim / heads; }

  void validate() const {
    LOOM_CHECK(vocab_size > 3, ContractError, "vocab_size must exceed the 3 reserved specials");
    LOOM_CHECK(dim > 0 && dim % 2 == 0, ContractError, "dim must be positive and even");
    LOOM_CHECK(heads > 0 && dim % heads == 0, ContractError, "dim must divide evenly into heads");
    LOOM_CHECK(ffn_dim > 0, ContractError, "ffn_dim must be positive");
    LOOM_CHECK(layers > 0, ContractError, "layers must be positive");
    LOOM_CHECK(max_len > 0, ContractError, "max_len must be positive");
    LOOM_CHECK(ln_eps > 0.0, ContractError, "ln_eps must be positive");
    LOOM_CHECK(adapter_dim >= 0, ContractError, "adapter_dim must be >= 0");
    for (int64_t id : {pad_id, bos_id, eos_id})
      LOOM_CHECK(id >= 0 && id < vocab_size, ContractError, "special token id out of range");
    LOOM_CHECK(pad_id != bos_id && pad_id != eos_id && bos_id != eos_id, ContractError,
               "special token ids must be distinct");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"dim", c.dim},
       {"ffn_dim", c.ffn_dim},       {"heads", c.heads},
       {"layers", c.layers},         {"max_len", c.max_len},
       {"ln_eps", c.ln_eps},         {"adapter_dim", c.adapter_dim},
       {"pad_id", c.pad_id},         {"bos_id", c.bos_id},
       {"eos_id", c.eos_id}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.dim = j.value("dim", d.dim);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.heads = j.value("heads", d.heads);
  c.layers = j.value("layers", d.layers);
  c.max_len = j.value("max_len", d.max_len);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.adapter_dim = j.value("adapter_dim", d.adapter_dim);
  c.pad_id = j.value("pad_id", d.pad_id);
  c.bos_id = j.value("bos_id", d.bos_id);
  c.eos_id = j.value("eos_id", d.eos_id);
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

inline constexpr uint64_t kInitStream = 0x696e6974;     // parameter init draws
inline constexpr uint64_t kAdapterStream = 0x61646170;  // adapter init draws

namespace detail {

inline Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values) v = rng.normal(0.0, stddev);
  return t;
}

inline void add_layer_norm_params(ParamStore& ps, const std::string& prefix, int64_t dim,
                                  Side side, int layer) {
  ParamGroupTag tag{ParamKind::layer_norm, side, layer};
  ps.add(prefix + ".gain", Tensor::full({dim}, 1.0), tag);
  ps.add(prefix + ".bias", Tensor::zeros({dim}), tag);
}

inline void add_attention_params(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t dim,
                                 Side side, int layer) {
  ParamGroupTag tag{ParamKind::attention, side, layer};
  for (const char* w : {"wq", "wk", "wv", "wo"})
    ps.add(prefix + "." + w, normal_tensor(rng, {dim, dim}, 0.02), tag);
  for (const char* b : {"bq", "bk", "bv", "bo"})
    ps.add(prefix + "." + b, Tensor::zeros({dim}), tag);
}

inline void add_ffn_params(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t dim,
                           int64_t ffn_dim, Side side, int layer) {
  ParamGroupTag tag{ParamKind::ffn, side, layer};
  ps.add(prefix + ".w1", normal_tensor(rng, {dim, ffn_dim}, 0.02), tag);
  ps.add(prefix + ".b1", Tensor::zeros({ffn_dim}), tag);
  ps.add(prefix + ".w2", normal_tensor(rng, {ffn_dim, dim}, 0.02), tag);
  ps.add(prefix + ".b2", Tensor::zeros({dim}), tag);
}

}  // namespace detail

// Fresh parameters for the configuration, deterministic in the seed.
// Insertion order is fixed, so checkpoints and masks line up index-wise.
inline ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, kInitStream));
  ParamStore ps;
  ps.add("embedding", detail::normal_tensor(rng, {cfg.vocab_size, cfg.dim}, 0.02),
         {ParamKind::embedding, Side::none, -1});
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    detail::add_layer_norm_params(ps, p + ".ln1", cfg.dim, Side::encoder, l);
    detail::add_attention_params(ps, rng, p + ".attn", cfg.dim, Side::encoder, l);
    detail::add_layer_norm_params(ps, p + ".ln2", cfg.dim, Side::encoder, l);
    detail::add_ffn_params(ps, rng, p + ".ffn", cfg.dim, cfg.ffn_dim, Side::encoder, l);
  }
  detail::add_layer_norm_params(ps, "enc.final_ln", cfg.dim, Side::encoder, -1);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    detail::add_layer_norm_params(ps, p + ".ln1", cfg.dim, Side::decoder, l);
    detail::add_attention_params(ps, rng, p + ".self", cfg.dim, Side::decoder, l);
    detail::add_layer_norm_params(ps, p + ".ln2", cfg.dim, Side::decoder, l);
    detail::add_attention_params(ps, rng, p + ".cross", cfg.dim, Side::decoder, l);
    detail::add_layer_norm_params(ps, p + ".ln3", cfg.dim, Side::decoder, l);
    detail::add_ffn_params(ps, rng, p + ".ffn", cfg.dim, cfg.ffn_dim, Side::decoder, l);
  }
  detail::add_layer_norm_params(ps, "dec.final_ln", cfg.dim, Side::decoder, -1);
  return ps;
}

// Appends one adapter (bottleneck of width cfg.adapter_dim) per block. The
// up-projection and its bias start at zero, so a freshly attached adapter is
// an exact identity and the model's outputs are unchanged until tuning.
inline void attach_adapters(ParamStore& ps, const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  LOOM_CHECK(cfg.adapter_dim > 0, ContractError, "adapter_dim must be positive to attach");
  Rng rng(mix_seed(seed, kAdapterStream));
  for (Side side : {Side::encoder, Side::decoder}) {
    const std::string sp = side == Side::encoder ? "enc" : "dec";
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = sp + ".l" + std::to_string(l) + ".adapter";
      ParamGroupTag tag{ParamKind::adapter, side, l};
      ps.add(p + ".wdown", detail::normal_tensor(rng, {cfg.dim, cfg.adapter_dim}, 0.02), tag);
      ps.add(p + ".bdown", Tensor::zeros({cfg.adapter_dim}), tag);
      ps.add(p + ".wup", Tensor::zeros({cfg.adapter_dim, cfg.dim}), tag);
      ps.add(p + ".bup", Tensor::zeros({cfg.dim}), tag);
    }
  }
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

namespace detail {

inline int param_node(Graph& g, const std::string& name, Shape shape) {
  const int existing = g.find(name);
  return existing >= 0 ? existing : g.add_param(name, name, std::move(shape));
}

inline Tensor position_encoding(int64_t len, int64_t dim) {
  Tensor t = Tensor::zeros({len, dim});
  for (int64_t p = 0; p < len; ++p)
    for (int64_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      t.at(p, 2 * i) = std::sin(static_cast<double>(p) * freq);
      t.at(p, 2 * i + 1) = std::cos(static_cast<double>(p) * freq);
    }
  return t;
}

// Additive attention bias that sends future positions to -1e9 before the
// softmax, which underflows to an exact zero weight.
inline Tensor causal_bias(int64_t len) {
  Tensor t = Tensor::zeros({len, len});
  for (int64_t i = 0; i < len; ++i)
    for (int64_t j = i + 1; j < len; ++j) t.at(i, j) = -1e9;
  return t;
}

// ids -> scaled embedding + position encoding, shape [len, dim].
inline int embed_sequence(Graph& g, const ModelConfig& cfg, const std::string& prefix,
                          int ids_node, int64_t len) {
  const int table = param_node(g, "embedding", {cfg.vocab_size, cfg.dim});
  const int emb = g.add_embedding_lookup(prefix + ".embed", table, ids_node);
  const int scale = g.add_constant(prefix + ".embed_scale",
                                   Tensor::scalar(std::sqrt(static_cast<double>(cfg.dim))));
  const int scaled = g.add_mul(prefix + ".embed_scaled", emb, scale);
  const int pos = g.add_constant(prefix + ".pos_enc", position_encoding(len, cfg.dim));
  return g.add_add(prefix + ".embed_pos", scaled, pos);
}

inline int layer_norm_block(Graph& g, const ModelConfig& cfg, const std::string& prefix,
                            int x) {
  const int normed = g.add_layer_norm(prefix + ".norm", x, cfg.ln_eps);
  const int gained =
      g.add_mul(prefix + ".gained", normed, param_node(g, prefix + ".gain", {cfg.dim}));
  return g.add_add(prefix + ".shifted", gained, param_node(g, prefix + ".bias", {cfg.dim}));
}

// Multi-head attention reading queries from q_src and keys/values from
// kv_src; bias_node, if >= 0, is added to every head's scores.
inline int attention_block(Graph& g, const ModelConfig& cfg, const std::string& prefix,
                           int q_src, int kv_src, int bias_node) {
  const int64_t d = cfg.dim, hd = cfg.head_dim();
  auto proj = [&](const char* w, const char* b, int src) {
    const int mm = g.add_matmul(prefix + "." + w + ".mm", src, param_node(g, prefix + "." + w, {d, d}));
    return g.add_add(prefix + "." + w + ".proj", mm, param_node(g, prefix + "." + b, {d}));
  };
  const int q = proj("wq", "bq", q_src);
  const int k = proj("wk", "bk", kv_src);
  const int v = proj("wv", "bv", kv_src);
  const int scale = g.add_constant(prefix + ".scale",
                                   Tensor::scalar(1.0 / std::sqrt(static_cast<double>(hd))));
  std::vector<int> heads;
  heads.reserve(static_cast<size_t>(cfg.heads));
  for (int64_t h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    const int qh = g.add_slice_cols(hp + ".q", q, h * hd, (h + 1) * hd);
    const int kh = g.add_slice_cols(hp + ".k", k, h * hd, (h + 1) * hd);
    const int vh = g.add_slice_cols(hp + ".v", v, h * hd, (h + 1) * hd);
    int scores = g.add_matmul(hp + ".scores", qh, kh, false, true);
    scores = g.add_mul(hp + ".scaled", scores, scale);
    if (bias_node >= 0) scores = g.add_add(hp + ".biased", scores, bias_node);
    const int weights = g.add_softmax(hp + ".weights", scores);
    heads.push_back(g.add_matmul(hp + ".ctx", weights, vh));
  }
  const int ctx = g.add_concat_cols(prefix + ".ctx", heads);
  const int mm = g.add_matmul(prefix + ".wo.mm", ctx, param_node(g, prefix + ".wo", {d, d}));
  return g.add_add(prefix + ".out", mm, param_node(g, prefix + ".bo", {d}));
}

inline int ffn_block(Graph& g, const ModelConfig& cfg, const std::string& prefix, int x) {
  const int mm1 =
      g.add_matmul(prefix + ".w1.mm", x, param_node(g, prefix + ".w1", {cfg.dim, cfg.ffn_dim}));
  const int h1 = g.add_add(prefix + ".h1", mm1, param_node(g, prefix + ".b1", {cfg.ffn_dim}));
  const int act = g.add_relu(prefix + ".act", h1);
  const int mm2 =
      g.add_matmul(prefix + ".w2.mm", act, param_node(g, prefix + ".w2", {cfg.ffn_dim, cfg.dim}));
  return g.add_add(prefix + ".out", mm2, param_node(g, prefix + ".b2", {cfg.dim}));
}

inline int adapter_block(Graph& g, const ModelConfig& cfg, const std::string& prefix, int x) {
  const int mm1 = g.add_matmul(prefix + ".wdown.mm", x,
                               param_node(g, prefix + ".wdown", {cfg.dim, cfg.adapter_dim}));
  const int h1 =
      g.add_add(prefix + ".h1", mm1, param_node(g, prefix + ".bdown", {cfg.adapter_dim}));
  const int act = g.add_relu(prefix + ".act", h1);
  const int mm2 = g.add_matmul(prefix + ".wup.mm", act,
                               param_node(g, prefix + ".wup", {cfg.adapter_dim, cfg.dim}));
  const int up = g.add_add(prefix + ".up", mm2, param_node(g, prefix + ".bup", {cfg.dim}));
  return g.add_add(prefix + ".out", x, up);
}

inline int encoder_stack(Graph& g, const ModelConfig& cfg, int x) {
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    const int h1 = layer_norm_block(g, cfg, p + ".ln1", x);
    const int att = attention_block(g, cfg, p + ".attn", h1, h1, -1);
    x = g.add_add(p + ".res1", x, att);
    const int h2 = layer_norm_block(g, cfg, p + ".ln2", x);
    const int ff = ffn_block(g, cfg, p + ".ffn", h2);
    x = g.add_add(p + ".res2", x, ff);
    if (cfg.adapter_dim > 0) x = adapter_block(g, cfg, p + ".adapter", x);
  }
  return layer_norm_block(g, cfg, "enc.final_ln", x);
}

inline int decoder_stack(Graph& g, const ModelConfig& cfg, int y, int enc_node, int64_t tgt_len) {
  const int causal = g.add_constant("dec.causal_bias", causal_bias(tgt_len));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    const int h1 = layer_norm_block(g, cfg, p + ".ln1", y);
    const int self_att = attention_block(g, cfg, p + ".self", h1, h1, causal);
    y = g.add_add(p + ".res1", y, self_att);
    const int h2 = layer_norm_block(g, cfg, p + ".ln2", y);
    const int cross_att = attention_block(g, cfg, p + ".cross", h2, enc_node, -1);
    y = g.add_add(p + ".res2", y, cross_att);
    const int h3 = layer_norm_block(g, cfg, p + ".ln3", y);
    const int ff = ffn_block(g, cfg, p + ".ffn", h3);
    y = g.add_add(p + ".res3", y, ff);
    if (cfg.adapter_dim > 0) y = adapter_block(g, cfg, p + ".adapter", y);
  }
  return layer_norm_block(g, cfg, "dec.final_ln", y);
}

// Logits through the transposed embedding (tied output projection).
inline int tied_logits(Graph& g, const ModelConfig& cfg, int dec_node) {
  return g.add_matmul("logits", dec_node, param_node(g, "embedding", {cfg.vocab_size, cfg.dim}),
                      false, true);
}

}  // namespace detail

// Training graph: "src_ids" [S], "tgt_in" [T], "tgt_out" [T] -> node "loss".
// distill_alpha > 0 adds an input "teacher_probs" [T, vocab] and blends
// (1 - alpha) * nll + alpha * KL(teacher || model).
inline Graph build_loss_graph(const ModelConfig& cfg, int64_t src_len, int64_t tgt_len,
                              double label_smoothing = 0.0, double distill_alpha = 0.0) {
  cfg.validate();
  LOOM_CHECK(src_len >= 1 && src_len <= cfg.max_len, ContractError, "source length out of range");
  LOOM_CHECK(tgt_len >= 1 && tgt_len <= cfg.max_len, ContractError, "target length out of range");
  LOOM_CHECK(distill_alpha >= 0.0 && distill_alpha <= 1.0, ContractError,
             "distill_alpha must lie in [0,1]");
  Graph g;
  const int src_ids = g.add_input("src_ids", {src_len});
  const int tgt_in = g.add_input("tgt_in", {tgt_len});
  const int tgt_out = g.add_input("tgt_out", {tgt_len});
  const int src = detail::embed_sequence(g, cfg, "src", src_ids, src_len);
  const int enc = detail::encoder_stack(g, cfg, src);
  const int tgt = detail::embed_sequence(g, cfg, "tgt", tgt_in, tgt_len);
  const int dec = detail::decoder_stack(g, cfg, tgt, enc, tgt_len);
  const int logits = detail::tied_logits(g, cfg, dec);
  if (distill_alpha == 0.0) {
    g.add_cross_entropy("loss", logits, tgt_out, label_smoothing);
  } else {
    const int nll = g.add_cross_entropy("nll", logits, tgt_out, label_smoothing);
    const int probs = g.add_input("teacher_probs", {tgt_len, cfg.vocab_size});
    const int kl = g.add_kl_divergence("kl", logits, probs);
    const int wn = g.add_mul("nll_part", nll,
                             g.add_constant("nll_weight", Tensor::scalar(1.0 - distill_alpha)));
    const int wk =
        g.add_mul("kl_part", kl, g.add_constant("kl_weight", Tensor::scalar(distill_alpha)));
    g.add_add("loss", wn, wk);
  }
  return g;
}

// Encoder-only graph: "src_ids" [S] -> node "enc_out" [S, dim].
inline Graph build_encode_graph(const ModelConfig& cfg, int64_t src_len) {
  cfg.validate();
  LOOM_CHECK(src_len >= 1 && src_len <= cfg.max_len, ContractError, "source length out of range");
  Graph g;
  const int src_ids = g.add_input("src_ids", {src_len});
  const int src = detail::embed_sequence(g, cfg, "src", src_ids, src_len);
  const int enc = detail::encoder_stack(g, cfg, src);
  g.add_reshape("enc_out", enc, {src_len, cfg.dim});
  return g;
}

// Decoder-only graph: "enc_out" [S, dim], "tgt_in" [T] -> node "logits".
inline Graph build_decode_graph(const ModelConfig& cfg, int64_t src_len, int64_t tgt_len) {
  cfg.validate();
  LOOM_CHECK(tgt_len >= 1 && tgt_len <= cfg.max_len, ContractError, "target length out of range");
  Graph g;
  const int enc = g.add_input("enc_out", {src_len, cfg.dim});
  const int tgt_in = g.add_input("tgt_in", {tgt_len});
  const int tgt = detail::embed_sequence(g, cfg, "tgt", tgt_in, tgt_len);
  const int dec = detail::decoder_stack(g, cfg, tgt, enc, tgt_len);
  detail::tied_logits(g, cfg, dec);
  return g;
}

// Graph cache keyed by sequence lengths, so repeated sentences reuse the
// built graphs. One cache per fixed (config, smoothing, alpha) context.
class GraphCache {
public:
  GraphCache(ModelConfig cfg, double label_smoothing = 0.0, double distill_alpha = 0.0)
      : cfg_(std::move(cfg)), smoothing_(label_smoothing), alpha_(distill_alpha) {}

  const ModelConfig& config() const { return cfg_; }

  const Graph& loss_graph(int64_t src_len, int64_t tgt_len) {
    auto key = std::make_pair(src_len, tgt_len);
    auto it = loss_.find(key);
    if (it == loss_.end())
      it = loss_.emplace(key, build_loss_graph(cfg_, src_len, tgt_len, smoothing_, alpha_)).first;
    return it->second;
  }

  const Graph& encode_graph(int64_t src_len) {
    auto it = encode_.find(src_len);
    if (it == encode_.end()) it = encode_.emplace(src_len, build_encode_graph(cfg_, src_len)).first;
    return it->second;
  }

  const Graph& decode_graph(int64_t src_len, int64_t tgt_len) {
    auto key = std::make_pair(src_len, tgt_len);
    auto it = decode_.find(key);
    if (it == decode_.end())
      it = decode_.emplace(key, build_decode_graph(cfg_, src_len, tgt_len)).first;
    return it->second;
  }

private:
  ModelConfig cfg_;
  double smoothing_;
  double alpha_;
  std::map<std::pair<int64_t, int64_t>, Graph> loss_;
  std::map<int64_t, Graph> encode_;
  std::map<std::pair<int64_t, int64_t>, Graph> decode_;
};

// ---------------------------------------------------------------------------
// Sentence plumbing: content token ids in, content token ids out. The
// encoder sees content + eos; the decoder is teacher-forced from bos.
// ---------------------------------------------------------------------------

inline Tensor ids_tensor(const std::vector<int64_t>& ids) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(ids.size())});
  for (size_t i = 0; i < ids.size(); ++i) t.values[i] = static_cast<double>(ids[i]);
  return t;
}

inline NamedTensors make_pair_inputs(const ModelConfig& cfg, const std::vector<int64_t>& src,
                                     const std::vector<int64_t>& tgt) {
  LOOM_CHECK(!src.empty() && !tgt.empty(), ContractError, "empty sentence");
  std::vector<int64_t> s = src;
  s.push_back(cfg.eos_id);
  std::vector<int64_t> ti;
  ti.reserve(tgt.size() + 1);
  ti.push_back(cfg.bos_id);
  ti.insert(ti.end(), tgt.begin(), tgt.end());
  std::vector<int64_t> to = tgt;
  to.push_back(cfg.eos_id);
  return {{"src_ids", ids_tensor(s)}, {"tgt_in", ids_tensor(ti)}, {"tgt_out", ids_tensor(to)}};
}

// Mean per-token negative log-likelihood of one sentence pair.
inline double sentence_nll(GraphCache& cache, const ParamStore& params,
                           const std::vector<int64_t>& src, const std::vector<int64_t>& tgt,
                           const ForwardOptions& opts = {}) {
  const ModelConfig& cfg = cache.config();
  const Graph& g = cache.loss_graph(static_cast<int64_t>(src.size()) + 1,
                                    static_cast<int64_t>(tgt.size()) + 1);
  return forward_one(g, params, make_pair_inputs(cfg, src, tgt), g.find("loss"), opts).at(0);
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct DecodeOptions {
  int beam = 4;
  double length_penalty = 0.6;
  int64_t max_len = 0;  // 0: use the model's max_len
  const BinaryMask* param_mask = nullptr;
};

namespace detail {

inline std::vector<double> log_softmax_row(const Tensor& logits, int64_t row) {
  const int64_t cols = logits.cols();
  const double* x = logits.values.data() + row * cols;
  const double lse = logsumexp_row(x, cols);
  std::vector<double> out(static_cast<size_t>(cols));
  for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(j)] = x[j] - lse;
  return out;
}

struct Beam {
  std::vector<int64_t> tokens;  // emitted tokens, eos excluded
  double logprob = 0.0;
  bool finished = false;
};

inline double beam_final_score(const Beam& b, double alpha) {
  // Length-normalized score: logprob / ((5 + len) / 6)^alpha, counting the
  // closing eos in the length.
  const double len = static_cast<double>(b.tokens.size() + 1);
  return b.logprob / std::pow((5.0 + len) / 6.0, alpha);
}

}  // namespace detail

// Translates one source sentence (content ids). Greedy when beam == 1.
// Returns emitted content ids; ties break toward the lowest token id so
// decoding is deterministic.
inline std::vector<int64_t> translate(GraphCache& cache, const ParamStore& params,
                                      const std::vector<int64_t>& src,
                                      const DecodeOptions& opts = {}) {
  const ModelConfig& cfg = cache.config();
  LOOM_CHECK(opts.beam >= 1, ContractError, "beam width must be >= 1");
  const int64_t limit = opts.max_len > 0 ? std::min(opts.max_len, cfg.max_len - 1)
                                         : cfg.max_len - 1;

  ForwardOptions fwd;
  fwd.param_mask = opts.param_mask;
  std::vector<int64_t> s = src;
  s.push_back(cfg.eos_id);
  const int64_t S = static_cast<int64_t>(s.size());
  const Graph& enc_g = cache.encode_graph(S);
  NamedTensors enc_in = {{"src_ids", ids_tensor(s)}};
  Tensor enc_out = forward_one(enc_g, params, enc_in, enc_g.find("enc_out"), fwd);

  auto next_logprobs = [&](const std::vector<int64_t>& emitted) {
    std::vector<int64_t> ti;
    ti.reserve(emitted.size() + 1);
    ti.push_back(cfg.bos_id);
    ti.insert(ti.end(), emitted.begin(), emitted.end());
    const int64_t T = static_cast<int64_t>(ti.size());
    const Graph& dec_g = cache.decode_graph(S, T);
    NamedTensors in = {{"enc_out", enc_out}, {"tgt_in", ids_tensor(ti)}};
    const Tensor logits = forward_one(dec_g, params, in, dec_g.find("logits"), fwd);
    return detail::log_softmax_row(logits, T - 1);
  };

  if (opts.beam == 1) {
    std::vector<int64_t> out;
    for (int64_t t = 0; t < limit; ++t) {
      const std::vector<double> lp = next_logprobs(out);
      int64_t best = 0;
      for (int64_t j = 1; j < static_cast<int64_t>(lp.size()); ++j)
        if (lp[static_cast<size_t>(j)] > lp[static_cast<size_t>(best)]) best = j;
      if (best == cfg.eos_id) break;
      out.push_back(best);
    }
    return out;
  }

  std::vector<detail::Beam> active{detail::Beam{}};
  std::vector<detail::Beam> finished;
  for (int64_t t = 0; t < limit && !active.empty(); ++t) {
    struct Cand {
      double logprob;
      int parent;
      int64_t token;
    };
    std::vector<Cand> cands;
    for (int b = 0; b < static_cast<int>(active.size()); ++b) {
      const std::vector<double> lp = next_logprobs(active[static_cast<size_t>(b)].tokens);
      for (int64_t j = 0; j < static_cast<int64_t>(lp.size()); ++j)
        cands.push_back({active[static_cast<size_t>(b)].logprob + lp[static_cast<size_t>(j)], b, j});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<detail::Beam> next;
    for (const Cand& c : cands) {
      if (static_cast<int>(next.size()) + static_cast<int>(finished.size()) >= opts.beam) break;
      detail::Beam nb = active[static_cast<size_t>(c.parent)];
      nb.logprob = c.logprob;
      if (c.token == cfg.eos_id) {
        nb.finished = true;
        finished.push_back(std::move(nb));
      } else {
        nb.tokens.push_back(c.token);
        next.push_back(std::move(nb));
      }
    }
    active = std::move(next);
  }
  for (detail::Beam& b : active) finished.push_back(std::move(b));  // ran out of length
  LOOM_CHECK(!finished.empty(), ContractError, "beam search produced no hypotheses");
  const detail::Beam* best = &finished[0];
  double best_score = detail::beam_final_score(finished[0], opts.length_penalty);
  for (size_t i = 1; i < finished.size(); ++i) {
    const double sc = detail::beam_final_score(finished[i], opts.length_penalty);
    const bool better =
        sc > best_score ||
        (sc == best_score && finished[i].tokens.size() < best->tokens.size()) ||
        (sc == best_score && finished[i].tokens.size() == best->tokens.size() &&
         finished[i].tokens < best->tokens);
    if (better) {
      best = &finished[i];
      best_score = sc;
    }
  }
  return best->tokens;
}

}  // namespace loom
