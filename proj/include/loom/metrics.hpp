// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "loom/common.hpp"

namespace loom {

// ===========================================================================
// Corpus metrics over token id sequences. Both metrics return values in
// [0, 1].
// ===========================================================================

// Fraction of reference token positions where the hypothesis has the same
// token. Positions past the end of the hypothesis count as misses.
inline double token_accuracy(const std::vector<std::vector<int64_t>>& refs,
                             const std::vector<std::vector<int64_t>>& hyps) {
  LOOM_CHECK(refs.size() == hyps.size(), ContractError,
             "reference and hypothesis counts differ");
  int64_t total = 0, hit = 0;
  for (size_t s = 0; s < refs.size(); ++s) {
    total += static_cast<int64_t>(refs[s].size());
    const size_t overlap = std::min(refs[s].size(), hyps[s].size());
    for (size_t i = 0; i < overlap; ++i) hit += refs[s][i] == hyps[s][i] ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

namespace detail {

inline std::map<std::vector<int64_t>, int64_t> ngram_counts(const std::vector<int64_t>& s,
                                                            size_t n) {
  std::map<std::vector<int64_t>, int64_t> counts;
  if (s.size() >= n)
    for (size_t i = 0; i + n <= s.size(); ++i)
      ++counts[std::vector<int64_t>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                    s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace detail

// Corpus-level geometric-mean BLEU with n-grams up to order 4: clipped
// n-gram precisions pooled over the corpus, brevity penalty
// exp(1 - ref_len / hyp_len) when the hypothesis side is shorter, and a hard
// zero when any order's precision is zero.
inline double corpus_bleu(const std::vector<std::vector<int64_t>>& refs,
                          const std::vector<std::vector<int64_t>>& hyps, int max_order = 4) {
  LOOM_CHECK(refs.size() == hyps.size(), ContractError,
             "reference and hypothesis counts differ");
  LOOM_CHECK(max_order >= 1, ContractError, "max_order must be >= 1");
  int64_t ref_len = 0, hyp_len = 0;
  std::vector<int64_t> clipped(static_cast<size_t>(max_order), 0);
  std::vector<int64_t> totals(static_cast<size_t>(max_order), 0);
  for (size_t s = 0; s < refs.size(); ++s) {
    ref_len += static_cast<int64_t>(refs[s].size());
    hyp_len += static_cast<int64_t>(hyps[s].size());
    for (int n = 1; n <= max_order; ++n) {
      const auto hyp_counts = detail::ngram_counts(hyps[s], static_cast<size_t>(n));
      const auto ref_counts = detail::ngram_counts(refs[s], static_cast<size_t>(n));
      for (const auto& [gram, count] : hyp_counts) {
        totals[static_cast<size_t>(n - 1)] += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          clipped[static_cast<size_t>(n - 1)] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision_sum = 0.0;
  for (int n = 0; n < max_order; ++n) {
    if (totals[static_cast<size_t>(n)] == 0 || clipped[static_cast<size_t>(n)] == 0) return 0.0;
    log_precision_sum += std::log(static_cast<double>(clipped[static_cast<size_t>(n)]) /
                                  static_cast<double>(totals[static_cast<size_t>(n)]));
  }
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_precision_sum / static_cast<double>(max_order));
}

}  // namespace loom
