// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loom/adam.hpp"
#include "loom/mask_registry.hpp"
#include "loom/model.hpp"
#include "loom/pruning.hpp"
#include "loom/trainer.hpp"

namespace loom {

// ===========================================================================
// The adaptation pipeline:
//
//   1. train_general          dense training of the full model
//   2. extract_general_subnet gradual magnitude pruning while training
//                             continues; survivors become the "general"
//                             domain, pruned positions return to the free
//                             pool at value zero
//   3. adapt_domain           per target domain: warm up the free pool,
//                             keep the strongest fraction (its sub-network),
//                             hand the rest back, tune only the owned set
//
// Elements owned by earlier domains are never read by a later domain's
// update step, so earlier domains decode bit-identically forever.
// ===========================================================================

// --- stage 1 ----------------------------------------------------------------

inline TrainResult train_general(GraphCache& cache, ParamStore& params, Adam& adam,
                                 const Corpus& train, const TrainOptions& opts) {
  LOOM_CHECK(opts.update_mask == nullptr && opts.forward_mask == nullptr &&
                 opts.pruner == nullptr,
             ContractError, "general training is dense; masks arrive at extraction");
  return train_loop(cache, params, adam, train, opts);
}

// --- stage 2 ----------------------------------------------------------------

struct ExtractOptions {
  PruneSchedule schedule;
  TrainOptions train;       // masks/pruner fields must be unset; steps should
                            // reach schedule.last_event_step()
  bool multi_domain = true; // freeze embeddings and layer norms for sharing
};

struct ExtractResult {
  MaskRegistry registry;
  TrainResult train;
  double sparsity = 0.0;      // achieved over eligible elements
  int64_t general_owned = 0;  // elements assigned to the general domain
};

// Prunes while training continues, then claims the surviving eligible
// elements for the new "general" domain (ordinal 0).
inline ExtractResult extract_general_subnet(GraphCache& cache, ParamStore& params, Adam& adam,
                                            const Corpus& train, const ExtractOptions& opts) {
  LOOM_CHECK(opts.train.update_mask == nullptr && opts.train.forward_mask == nullptr &&
                 opts.train.pruner == nullptr,
             ContractError, "extraction drives its own masks");
  ExtractResult result;
  result.registry = MaskRegistry(params);
  if (opts.multi_domain) {
    result.registry.freeze_kind(ParamKind::embedding);
    result.registry.freeze_kind(ParamKind::layer_norm);
  }
  GradualPruner pruner(opts.schedule, params, result.registry.eligible_mask());
  TrainOptions train_opts = opts.train;
  train_opts.pruner = &pruner;
  result.train = train_loop(cache, params, adam, train, train_opts);
  pruner.prune_to(params, opts.schedule.final_sparsity);  // catch up if steps ran short
  result.sparsity = pruner.achieved_sparsity();

  const int general = result.registry.add_domain("general");
  const BinaryMask survivors = pruner.alive() & pruner.eligible();
  result.registry.assign_domain(general, survivors);
  result.general_owned = survivors.popcount();
  return result;
}

// --- stage 3 ----------------------------------------------------------------

struct AdaptOptions {
  std::string domain;
  std::vector<std::string> ancestors = {"general"};
  double keep_fraction = 0.1;  // of eligible elements, per tensor
  TrainOptions warmup;
  TrainOptions tune;
};

struct AdaptResult {
  int ordinal = -1;
  TrainResult warmup;
  TrainResult tune;
  int64_t owned = 0;
};

// Adapts one target domain in place. The domain trains only elements it
// ends up owning; everything another domain owns is untouched by
// construction.
inline AdaptResult adapt_domain(GraphCache& cache, ParamStore& params, MaskRegistry& registry,
                                Adam& adam, const Corpus& train, const AdaptOptions& opts) {
  LOOM_CHECK(!opts.domain.empty(), ContractError, "domain name must be non-empty");
  LOOM_CHECK(opts.warmup.update_mask == nullptr && opts.warmup.forward_mask == nullptr &&
                 opts.tune.update_mask == nullptr && opts.tune.forward_mask == nullptr,
             ContractError, "adaptation drives its own masks");
  registry.check_congruent(params);

  std::vector<int> ancestor_ordinals;
  for (const std::string& name : opts.ancestors) {
    const int a = registry.find_domain(name);
    LOOM_CHECK(a >= 0, ContractError, "unknown ancestor domain '" + name + "'");
    ancestor_ordinals.push_back(a);
  }

  AdaptResult result;
  adam.reset_moments();  // fresh moments per domain; the step counter runs on

  // Warm-up: tune the free pool on the new domain, with the ancestor cone
  // active so training sees the network it will extend.
  const BinaryMask free_before = registry.free_mask();
  BinaryMask warmup_forward = free_before | registry.frozen_mask();
  for (int a : ancestor_ordinals) warmup_forward = warmup_forward | registry.inference_mask(a);
  TrainOptions warmup_opts = opts.warmup;
  warmup_opts.update_mask = &free_before;
  warmup_opts.forward_mask = &warmup_forward;
  result.warmup = train_loop(cache, params, adam, train, warmup_opts);

  // Claim the strongest warmed-up elements; the rest of the free pool goes
  // back to zero for later domains.
  const BinaryMask selection =
      lottery_selection(params, free_before, registry.eligible_mask(), opts.keep_fraction);
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& fr = free_before.at(params.name(i));
    const Tensor& sel = selection.at(params.name(i));
    Tensor& values = params.at(i);
    for (size_t k = 0; k < values.values.size(); ++k)
      if (fr.values[k] != 0.0 && sel.values[k] == 0.0) values.values[k] = 0.0;
  }
  result.ordinal = registry.add_domain(opts.domain, ancestor_ordinals);
  registry.assign_domain(result.ordinal, selection);
  result.owned = registry.domain_element_count(result.ordinal);

  // Tune only the owned set, decoding through the domain's inference mask.
  const BinaryMask update = registry.update_mask(result.ordinal);
  const BinaryMask forward = registry.inference_mask(result.ordinal);
  TrainOptions tune_opts = opts.tune;
  tune_opts.update_mask = &update;
  tune_opts.forward_mask = &forward;
  result.tune = train_loop(cache, params, adam, train, tune_opts);
  return result;
}

}  // namespace loom
