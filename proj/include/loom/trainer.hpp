// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "loom/adam.hpp"
#include "loom/data.hpp"
#include "loom/graph.hpp"
#include "loom/mask.hpp"
#include "loom/metrics.hpp"
#include "loom/model.hpp"
#include "loom/pruning.hpp"

namespace loom {

// ===========================================================================
// One training loop for every strategy. Full tuning, masked tuning, the
// regularized baselines and the pruning phase all run through the same code
// path with the same batch sampling and the same accumulation order, so two
// runs that share a seed and corpus see bit-identical batches.
// ===========================================================================

inline constexpr uint64_t kBatchStream = 0x62617463;

// Quadratic anchoring penalty: lambda/2 * sum_i F_i (theta_i - anchor_i)^2,
// applied through its gradient lambda * F (theta - anchor).
struct EwcPenalty {
  const ParamStore* anchor = nullptr;
  const ParamStore* fisher = nullptr;
  double lambda = 1.0;
};

// Soft-target supervision from a frozen teacher. The student's loss graphs
// must be built with the same blend weight.
struct Distiller {
  const ParamStore* teacher_params = nullptr;
  const BinaryMask* teacher_mask = nullptr;  // optional
  double alpha = 0.5;
};

struct TrainLogEntry {
  int64_t step = 0;  // optimizer step count after the update
  double loss = 0.0;
  double lr = 0.0;
  double dev_accuracy = -1.0;  // -1 when not evaluated this step
  double sparsity = 0.0;
  int64_t pruned = 0;  // elements removed at this step
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double final_loss = 0.0;
};

struct TrainOptions {
  int64_t steps = 100;
  int64_t batch_size = 8;
  uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables clipping

  const BinaryMask* update_mask = nullptr;   // restricts which elements move
  const BinaryMask* forward_mask = nullptr;  // restricts which elements are read
  GradualPruner* pruner = nullptr;  // when set, masks come from the pruner

  EwcPenalty ewc;        // active when ewc.anchor != nullptr
  Distiller distill;     // active when distill.teacher_params != nullptr

  int64_t eval_interval = 100;  // dev decode cadence; 0 disables
  const Corpus* dev = nullptr;
  int64_t eval_samples = 32;

  std::function<void(const TrainLogEntry&)> on_log;
};

namespace detail {

// Greedy-decode accuracy on the first `samples` dev sentences.
inline double dev_accuracy(GraphCache& cache, const ParamStore& params, const Corpus& dev,
                           int64_t samples, const BinaryMask* forward_mask) {
  const size_t n = std::min(dev.size(), static_cast<size_t>(samples));
  if (n == 0) return 0.0;
  std::vector<std::vector<int64_t>> refs, hyps;
  refs.reserve(n);
  hyps.reserve(n);
  DecodeOptions opts;
  opts.beam = 1;
  opts.param_mask = forward_mask;
  for (size_t i = 0; i < n; ++i) {
    refs.push_back(dev[i].tgt);
    hyps.push_back(translate(cache, params, dev[i].src, opts));
  }
  return token_accuracy(refs, hyps);
}

// Row-wise softmax of the teacher's logits for one teacher-forced pair.
inline Tensor teacher_probs(GraphCache& teacher_cache, const Distiller& d,
                            const std::vector<int64_t>& src, const std::vector<int64_t>& tgt) {
  const ModelConfig& cfg = teacher_cache.config();
  const Graph& g = teacher_cache.loss_graph(static_cast<int64_t>(src.size()) + 1,
                                            static_cast<int64_t>(tgt.size()) + 1);
  ForwardOptions fwd;
  fwd.param_mask = d.teacher_mask;
  const Tensor logits = forward_one(g, *d.teacher_params, make_pair_inputs(cfg, src, tgt),
                                    g.find("logits"), fwd);
  Tensor probs = Tensor::zeros(logits.shape);
  softmax_rows(logits.values.data(), probs.values.data(), logits.rows(), logits.cols());
  return probs;
}

inline void accumulate(ParamStore& into, const ParamStore& grads) {
  for (size_t i = 0; i < into.size(); ++i) {
    auto& dst = into.at(i).values;
    const auto& src = grads.at(i).values;
    for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace detail

// Runs `opts.steps` optimizer steps of teacher-forced training on `params`.
// `cache` must be built with the blend weight matching opts.distill (and the
// label smoothing the caller wants); `teacher_cache`, only consulted when
// distilling, must be a plain-loss cache for the same configuration.
inline TrainResult train_loop(GraphCache& cache, ParamStore& params, Adam& adam,
                              const Corpus& train, const TrainOptions& opts,
                              GraphCache* teacher_cache = nullptr) {
  LOOM_CHECK(!train.empty(), ContractError, "training corpus is empty");
  LOOM_CHECK(opts.steps >= 1, ContractError, "steps must be >= 1");
  LOOM_CHECK(opts.batch_size >= 1, ContractError, "batch_size must be >= 1");
  const bool distilling = opts.distill.teacher_params != nullptr;
  LOOM_CHECK(!distilling || teacher_cache != nullptr, ContractError,
             "distillation requires a teacher graph cache");
  if (opts.ewc.anchor != nullptr) {
    LOOM_CHECK(opts.ewc.fisher != nullptr, ContractError, "ewc needs fisher estimates");
    LOOM_CHECK(params.congruent(*opts.ewc.anchor) && params.congruent(*opts.ewc.fisher),
               ShapeError, "ewc anchor/fisher do not match the parameters");
  }
  if (opts.update_mask != nullptr) opts.update_mask->check_congruent(params);
  if (opts.forward_mask != nullptr) opts.forward_mask->check_congruent(params);

  const BinaryMask* update_mask = opts.update_mask;
  const BinaryMask* forward_mask = opts.forward_mask;
  BinaryMask pruner_update;  // storage when masks track the pruner
  if (opts.pruner != nullptr) {
    pruner_update = opts.pruner->alive() & opts.pruner->eligible();
    update_mask = &pruner_update;
    forward_mask = &opts.pruner->alive();
  }

  Rng batch_rng(mix_seed(opts.seed, kBatchStream));
  TrainResult result;
  for (int64_t t = 0; t < opts.steps; ++t) {
    TrainLogEntry entry;
    if (opts.pruner != nullptr) {
      entry.pruned = opts.pruner->maybe_prune(t, params);
      if (entry.pruned > 0)
        pruner_update = opts.pruner->alive() & opts.pruner->eligible();
      entry.sparsity = opts.pruner->achieved_sparsity();
    }

    std::vector<size_t> batch(static_cast<size_t>(opts.batch_size));
    for (size_t& b : batch) b = static_cast<size_t>(batch_rng.below(train.size()));

    int64_t token_total = 0;
    for (size_t b : batch) token_total += static_cast<int64_t>(train[b].tgt.size()) + 1;

    ForwardOptions fwd;
    fwd.param_mask = forward_mask;
    ParamStore grads = params.zeros_like();
    double loss = 0.0;
    for (size_t b : batch) {
      const SentencePair& pair = train[b];
      const double w = static_cast<double>(pair.tgt.size() + 1) / static_cast<double>(token_total);
      const Graph& g = cache.loss_graph(static_cast<int64_t>(pair.src.size()) + 1,
                                        static_cast<int64_t>(pair.tgt.size()) + 1);
      NamedTensors inputs = make_pair_inputs(cache.config(), pair.src, pair.tgt);
      if (distilling)
        inputs.emplace("teacher_probs",
                       detail::teacher_probs(*teacher_cache, opts.distill, pair.src, pair.tgt));
      GradResult gr = backward(g, params, inputs, g.find("loss"), fwd, w);
      loss += w * gr.loss;
      detail::accumulate(grads, gr.grads);
    }

    if (opts.ewc.anchor != nullptr) {
      for (size_t i = 0; i < grads.size(); ++i) {
        auto& gdst = grads.at(i).values;
        const auto& theta = params.at(i).values;
        const auto& anchor = opts.ewc.anchor->at(i).values;
        const auto& fisher = opts.ewc.fisher->at(i).values;
        for (size_t k = 0; k < gdst.size(); ++k)
          gdst[k] += opts.ewc.lambda * fisher[k] * (theta[k] - anchor[k]);
      }
    }
    if (opts.clip_norm > 0.0) clip_grad_norm(grads, opts.clip_norm);

    entry.lr = adam.step(params, grads, update_mask);
    entry.step = adam.step_count();
    entry.loss = loss;

    const bool eval_now = opts.eval_interval > 0 && opts.dev != nullptr &&
                          ((t + 1) % opts.eval_interval == 0 || t + 1 == opts.steps);
    if (eval_now)
      entry.dev_accuracy =
          detail::dev_accuracy(cache, params, *opts.dev, opts.eval_samples, forward_mask);

    if (opts.on_log) opts.on_log(entry);
    result.log.push_back(entry);
    result.final_loss = entry.loss;
  }
  return result;
}

// Diagonal Fisher information estimate: the squared gradients of the
// task loss, averaged over `batches` sampled batches. Sampling follows the
// training loop's conventions so estimates are reproducible.
inline ParamStore estimate_fisher(GraphCache& cache, const ParamStore& params,
                                  const Corpus& corpus, int64_t batches, int64_t batch_size,
                                  uint64_t seed, const BinaryMask* forward_mask = nullptr) {
  LOOM_CHECK(!corpus.empty(), ContractError, "fisher estimation corpus is empty");
  LOOM_CHECK(batches >= 1 && batch_size >= 1, ContractError,
             "fisher estimation needs at least one batch");
  Rng batch_rng(mix_seed(seed, kBatchStream));
  ForwardOptions fwd;
  fwd.param_mask = forward_mask;
  ParamStore fisher = params.zeros_like();
  for (int64_t t = 0; t < batches; ++t) {
    std::vector<size_t> batch(static_cast<size_t>(batch_size));
    for (size_t& b : batch) b = static_cast<size_t>(batch_rng.below(corpus.size()));
    int64_t token_total = 0;
    for (size_t b : batch) token_total += static_cast<int64_t>(corpus[b].tgt.size()) + 1;
    ParamStore grads = params.zeros_like();
    for (size_t b : batch) {
      const SentencePair& pair = corpus[b];
      const double w = static_cast<double>(pair.tgt.size() + 1) / static_cast<double>(token_total);
      const Graph& g = cache.loss_graph(static_cast<int64_t>(pair.src.size()) + 1,
                                        static_cast<int64_t>(pair.tgt.size()) + 1);
      GradResult gr = backward(g, params, make_pair_inputs(cache.config(), pair.src, pair.tgt),
                               g.find("loss"), fwd, w);
      detail::accumulate(grads, gr.grads);
    }
    for (size_t i = 0; i < fisher.size(); ++i) {
      auto& f = fisher.at(i).values;
      const auto& gv = grads.at(i).values;
      for (size_t k = 0; k < f.size(); ++k) f[k] += gv[k] * gv[k];
    }
  }
  for (size_t i = 0; i < fisher.size(); ++i)
    for (double& v : fisher.at(i).values) v /= static_cast<double>(batches);
  return fisher;
}

}  // namespace loom
