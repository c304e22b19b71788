// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "loom/common.hpp"
#include "loom/mask.hpp"
#include "loom/param_store.hpp"

namespace loom {

// ===========================================================================
// Magnitude pruning. Sparsity is always the fraction of ELIGIBLE elements
// removed (never the fraction kept); permanently frozen elements are outside
// the accounting entirely. Quotas are exact per tensor: floor(s * eligible).
// Ties in |value| break toward the lower flat index.
// ===========================================================================

enum class PruneCurve : uint8_t { cubic, linear, oneshot };

inline const char* prune_curve_name(PruneCurve c) {
  switch (c) {
    case PruneCurve::cubic: return "cubic";
    case PruneCurve::linear: return "linear";
    case PruneCurve::oneshot: return "oneshot";
  }
  return "?";
}

inline PruneCurve prune_curve_from_name(const std::string& s) {
  for (PruneCurve c : {PruneCurve::cubic, PruneCurve::linear, PruneCurve::oneshot})
    if (s == prune_curve_name(c)) return c;
  throw ContractError("unknown prune curve '" + s + "'");
}

// Pruning events fire at steps start_step + k * interval for k = 0..events,
// ramping sparsity from initial to final.
struct PruneSchedule {
  int64_t start_step = 0;
  int64_t events = 1;      // number of ramp intervals; event count is events + 1
  int64_t interval = 100;  // steps between consecutive pruning events
  double initial_sparsity = 0.0;
  double final_sparsity = 0.5;
  PruneCurve curve = PruneCurve::cubic;

  void validate() const {
    LOOM_CHECK(start_step >= 0, ContractError, "start_step must be >= 0");
    LOOM_CHECK(events >= 1, ContractError, "events must be >= 1");
    LOOM_CHECK(interval >= 1, ContractError, "interval must be >= 1");
    LOOM_CHECK(initial_sparsity >= 0.0 && initial_sparsity < 1.0, ContractError,
               "initial_sparsity must lie in [0,1)");
    LOOM_CHECK(final_sparsity >= initial_sparsity && final_sparsity < 1.0, ContractError,
               "final_sparsity must lie in [initial_sparsity, 1)");
  }

  int64_t last_event_step() const { return start_step + events * interval; }
};

// Target sparsity at the given step. Before start_step the target is the
// initial sparsity; past the ramp it saturates at the final sparsity.
inline double schedule_sparsity(const PruneSchedule& s, int64_t step) {
  s.validate();
  const double span = static_cast<double>(s.events * s.interval);
  double p = (static_cast<double>(step) - static_cast<double>(s.start_step)) / span;
  p = std::clamp(p, 0.0, 1.0);
  switch (s.curve) {
    case PruneCurve::cubic: {
      const double r = 1.0 - p;
      return s.final_sparsity + (s.initial_sparsity - s.final_sparsity) * r * r * r;
    }
    case PruneCurve::linear:
      return s.final_sparsity + (s.initial_sparsity - s.final_sparsity) * (1.0 - p);
    case PruneCurve::oneshot:
      return p >= 1.0 ? s.final_sparsity : s.initial_sparsity;
  }
  return s.final_sparsity;
}

namespace detail {

// Indices of the k smallest-|value| elements among those with pick[i] != 0,
// ties toward the lower index. k must not exceed the pickable count.
inline std::vector<size_t> smallest_magnitude(const std::vector<double>& values,
                                              const std::vector<char>& pick, size_t k) {
  std::vector<size_t> idx;
  idx.reserve(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    if (pick[i]) idx.push_back(i);
  LOOM_CHECK(k <= idx.size(), CapacityError,
             "asked to prune " + std::to_string(k) + " of " + std::to_string(idx.size()) +
                 " available elements");
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](size_t a, size_t b) {
                      const double ma = std::abs(values[a]), mb = std::abs(values[b]);
                      if (ma != mb) return ma < mb;
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace detail

// Gradual magnitude pruner over the eligible elements of a parameter store.
// `alive()` starts all ones and loses eligible elements monotonically; it is
// both the forward mask (frozen elements stay 1) and, intersected with the
// eligible mask, the update mask. Pruned elements are zeroed in place.
class GradualPruner {
public:
  GradualPruner(PruneSchedule schedule, const ParamStore& params, BinaryMask eligible)
      : schedule_(schedule), eligible_(std::move(eligible)), alive_(BinaryMask::ones_like(params)) {
    schedule_.validate();
    eligible_.check_congruent(params);
  }

  const BinaryMask& alive() const { return alive_; }
  const BinaryMask& eligible() const { return eligible_; }

  // Fraction of eligible elements pruned so far.
  double achieved_sparsity() const {
    int64_t eligible_n = 0, pruned = 0;
    for (size_t i = 0; i < eligible_.size(); ++i) {
      const Tensor& e = eligible_.at(i);
      const Tensor& a = alive_.at(eligible_.name(i));
      for (size_t k = 0; k < e.values.size(); ++k) {
        if (e.values[k] == 0.0) continue;
        ++eligible_n;
        pruned += a.values[k] == 0.0 ? 1 : 0;
      }
    }
    return eligible_n == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(eligible_n);
  }

  bool is_event_step(int64_t step) const {
    if (step < schedule_.start_step || step > schedule_.last_event_step()) return false;
    return (step - schedule_.start_step) % schedule_.interval == 0;
  }

  // Prunes to the scheduled sparsity when `step` is an event step. Returns
  // the number of elements removed.
  int64_t maybe_prune(int64_t step, ParamStore& params) {
    if (!is_event_step(step)) return 0;
    return prune_to(params, schedule_sparsity(schedule_, step));
  }

  // Brings every tensor up to the target sparsity (no-op for tensors already
  // at or past quota; elements are never revived).
  int64_t prune_to(ParamStore& params, double sparsity) {
    LOOM_CHECK(sparsity >= 0.0 && sparsity < 1.0, ContractError, "sparsity must lie in [0,1)");
    alive_.check_congruent(params);
    int64_t removed = 0;
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& values = params.at(i);
      const Tensor& elig = eligible_.at(params.name(i));
      Tensor& alive = alive_.at(params.name(i));
      int64_t eligible_n = 0, pruned_n = 0;
      std::vector<char> pick(values.values.size(), 0);
      for (size_t k = 0; k < values.values.size(); ++k) {
        if (elig.values[k] == 0.0) continue;
        ++eligible_n;
        if (alive.values[k] == 0.0)
          ++pruned_n;
        else
          pick[k] = 1;
      }
      const int64_t want =
          static_cast<int64_t>(std::floor(sparsity * static_cast<double>(eligible_n)));
      if (want <= pruned_n) continue;
      for (size_t k : detail::smallest_magnitude(values.values,
                                                 pick, static_cast<size_t>(want - pruned_n))) {
        alive.values[k] = 0.0;
        values.values[k] = 0.0;
        ++removed;
      }
    }
    return removed;
  }

private:
  PruneSchedule schedule_;
  BinaryMask eligible_;
  BinaryMask alive_;
};

// Sub-network selection for a freshly tuned domain: per tensor, keep the
// floor(keep_fraction * eligible) largest-|value| FREE elements; everything
// else stays unclaimed. Throws CapacityError when a tensor's free pool is
// smaller than its quota.
inline BinaryMask lottery_selection(const ParamStore& params, const BinaryMask& free_mask,
                                    const BinaryMask& eligible_mask, double keep_fraction) {
  LOOM_CHECK(keep_fraction > 0.0 && keep_fraction < 1.0, ContractError,
             "keep_fraction must lie in (0,1)");
  free_mask.check_congruent(params);
  eligible_mask.check_congruent(params);
  BinaryMask selection = BinaryMask::zeros_like(params);
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& values = params.at(i);
    const Tensor& free = free_mask.at(params.name(i));
    const Tensor& elig = eligible_mask.at(params.name(i));
    int64_t eligible_n = 0, free_n = 0;
    std::vector<char> pick(values.values.size(), 0);
    for (size_t k = 0; k < values.values.size(); ++k) {
      if (elig.values[k] != 0.0) ++eligible_n;
      if (free.values[k] != 0.0) {
        LOOM_CHECK(elig.values[k] != 0.0, ContractError,
                   "free element outside the eligible set in '" + params.name(i) + "'");
        ++free_n;
        pick[k] = 1;
      }
    }
    const int64_t keep =
        static_cast<int64_t>(std::floor(keep_fraction * static_cast<double>(eligible_n)));
    if (keep > free_n)
      throw CapacityError("tensor '" + params.name(i) + "' has " + std::to_string(free_n) +
                          " free elements, quota needs " + std::to_string(keep));
    // Keep = complement of pruning the (free_n - keep) smallest, so the tie
    // rule stays "lower index is pruned first" everywhere.
    Tensor& sel = selection.at(params.name(i));
    for (size_t k = 0; k < pick.size(); ++k)
      if (pick[k]) sel.values[k] = 1.0;
    for (size_t k :
         detail::smallest_magnitude(values.values, pick, static_cast<size_t>(free_n - keep)))
      sel.values[k] = 0.0;
  }
  return selection;
}

}  // namespace loom
