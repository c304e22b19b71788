// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "loom/graph.hpp"
#include "loom/param_store.hpp"

namespace loom {

// Central-difference gradient check against reverse mode. Returns the worst
// relative error over all checked coordinates; callers assert a bound on it.
// `stride` subsamples coordinates of large tensors to keep runtime sane.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
};

inline GradCheckReport grad_check(const Graph& g, const ParamStore& params,
                                  const NamedTensors& inputs, int loss_node,
                                  const ForwardOptions& opts = {}, double h = 1e-5,
                                  size_t stride = 1) {
  GradResult analytic = backward(g, params, inputs, loss_node, opts);
  ParamStore probe = params;
  GradCheckReport report;
  for (size_t i = 0; i < probe.size(); ++i) {
    auto& vals = probe.at(i).values;
    for (size_t k = 0; k < vals.size(); k += stride) {
      const double saved = vals[k];
      vals[k] = saved + h;
      const double up = forward_one(g, probe, inputs, loss_node, opts).at(0);
      vals[k] = saved - h;
      const double down = forward_one(g, probe, inputs, loss_node, opts).at(0);
      vals[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic.grads.at(i).values[k];
      // The denominator floor must sit above the finite-difference noise
      // floor, roughly eps * |loss| / h, or near-zero gradients fail on
      // rounding alone.
      const double rel = std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), 1e-5});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = probe.name(i);
        report.worst_index = k;
      }
    }
  }
  return report;
}

}  // namespace loom
