// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "loom/adam.hpp"
#include "loom/model.hpp"
#include "loom/trainer.hpp"

namespace loom {

// ===========================================================================
// Reference adaptation strategies. Each takes the general model, adapts a
// copy to the target domain, and returns the adapted parameters; none of
// them preserves the general model, which is exactly the behavior the
// masked pipeline is compared against. All of them run the shared training
// loop, so a fixed seed gives every strategy identical batches.
// ===========================================================================

enum class BaselineStrategy : uint8_t { finetune, ewc, distill, layer_freeze, adapter };

inline const char* baseline_strategy_name(BaselineStrategy s) {
  switch (s) {
    case BaselineStrategy::finetune: return "finetune";
    case BaselineStrategy::ewc: return "ewc";
    case BaselineStrategy::distill: return "distill";
    case BaselineStrategy::layer_freeze: return "layer-freeze";
    case BaselineStrategy::adapter: return "adapter";
  }
  return "?";
}

inline BaselineStrategy baseline_strategy_from_name(const std::string& s) {
  for (BaselineStrategy b : {BaselineStrategy::finetune, BaselineStrategy::ewc,
                             BaselineStrategy::distill, BaselineStrategy::layer_freeze,
                             BaselineStrategy::adapter})
    if (s == baseline_strategy_name(b)) return b;
  throw ContractError("unknown baseline strategy '" + s +
                      "' (expected finetune|ewc|distill|layer-freeze|adapter)");
}

struct BaselineOptions {
  BaselineStrategy strategy = BaselineStrategy::finetune;
  TrainOptions train;
  AdamConfig adam;
  int64_t start_step = 0;  // optimizer steps already taken by the general run
  double label_smoothing = 0.0;

  double ewc_lambda = 1.0;
  int64_t fisher_batches = 50;

  double distill_alpha = 0.5;

  int64_t free_top_layers = 1;

  int64_t adapter_dim = 8;
  uint64_t adapter_seed = 0;
};

struct BaselineRun {
  ModelConfig cfg;   // adapter runs extend the architecture
  ParamStore params; // the adapted model
  TrainResult train;
};

// Trainable set for the freeze strategy: the top `free_top_layers` blocks of
// both stacks, the final layer norms, and the embedding (which doubles as
// the output projection). Everything below stays fixed.
inline BinaryMask layer_freeze_update_mask(const ParamStore& params, const ModelConfig& cfg,
                                           int64_t free_top_layers) {
  LOOM_CHECK(free_top_layers >= 1 && free_top_layers <= cfg.layers, ContractError,
             "free_top_layers must lie in [1, layers]");
  const int threshold = static_cast<int>(cfg.layers - free_top_layers);
  BinaryMask mask = BinaryMask::zeros_like(params);
  for (size_t i = 0; i < params.size(); ++i) {
    const ParamGroupTag& tag = params.tag(i);
    const bool trainable = tag.kind == ParamKind::embedding || tag.layer >= threshold ||
                           (tag.kind == ParamKind::layer_norm && tag.layer < 0);
    if (!trainable) continue;
    Tensor& t = mask.at(params.name(i));
    std::fill(t.values.begin(), t.values.end(), 1.0);
  }
  return mask;
}

// Adapts a copy of `general` to the target domain with the chosen strategy.
inline BaselineRun run_baseline(const ModelConfig& cfg, const ParamStore& general,
                                const Corpus& target_train, const Corpus* target_dev,
                                const Corpus& general_train, const BaselineOptions& opts) {
  cfg.validate();
  BaselineRun run;
  run.cfg = cfg;
  run.params = general;

  TrainOptions train_opts = opts.train;
  train_opts.dev = target_dev;
  LOOM_CHECK(train_opts.update_mask == nullptr && train_opts.forward_mask == nullptr &&
                 train_opts.pruner == nullptr && train_opts.ewc.anchor == nullptr &&
                 train_opts.distill.teacher_params == nullptr,
             ContractError, "baseline strategies configure their own masks and penalties");

  const double alpha =
      opts.strategy == BaselineStrategy::distill ? opts.distill_alpha : 0.0;
  BinaryMask update_mask;
  ParamStore anchor, fisher;
  GraphCache teacher_cache(cfg, 0.0, 0.0);

  switch (opts.strategy) {
    case BaselineStrategy::finetune:
      break;
    case BaselineStrategy::layer_freeze:
      update_mask = layer_freeze_update_mask(run.params, cfg, opts.free_top_layers);
      train_opts.update_mask = &update_mask;
      break;
    case BaselineStrategy::adapter: {
      run.cfg.adapter_dim = opts.adapter_dim;
      attach_adapters(run.params, run.cfg, opts.adapter_seed);
      update_mask = BinaryMask::zeros_like(run.params);
      for (size_t i = 0; i < run.params.size(); ++i)
        if (run.params.tag(i).kind == ParamKind::adapter) {
          Tensor& t = update_mask.at(run.params.name(i));
          std::fill(t.values.begin(), t.values.end(), 1.0);
        }
      train_opts.update_mask = &update_mask;
      break;
    }
    case BaselineStrategy::ewc: {
      LOOM_CHECK(opts.ewc_lambda >= 0.0, ContractError, "ewc_lambda must be >= 0");
      if (opts.ewc_lambda > 0.0) {  // lambda 0 reduces to plain fine-tuning
        anchor = general;
        fisher = estimate_fisher(teacher_cache, general, general_train, opts.fisher_batches,
                                 opts.train.batch_size, opts.train.seed);
        train_opts.ewc.anchor = &anchor;
        train_opts.ewc.fisher = &fisher;
        train_opts.ewc.lambda = opts.ewc_lambda;
      }
      break;
    }
    case BaselineStrategy::distill: {
      LOOM_CHECK(opts.distill_alpha >= 0.0 && opts.distill_alpha < 1.0, ContractError,
                 "distill_alpha must lie in [0,1)");
      if (opts.distill_alpha > 0.0) {  // alpha 0 reduces to plain fine-tuning
        anchor = general;  // the frozen teacher
        train_opts.distill.teacher_params = &anchor;
        train_opts.distill.alpha = opts.distill_alpha;
      }
      break;
    }
  }

  GraphCache cache(run.cfg, opts.label_smoothing, alpha);
  Adam adam(run.params, opts.adam);
  adam.set_step_count(opts.start_step);
  run.train = train_loop(cache, run.params, adam, target_train, train_opts,
                         alpha > 0.0 ? &teacher_cache : nullptr);
  return run;
}

}  // namespace loom
