// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "loom/common.hpp"
#include "loom/mask.hpp"
#include "loom/param_store.hpp"

namespace loom {

// Learning-rate schedules. `inverse_sqrt` ramps linearly to the base rate
// over the warmup steps, then decays as sqrt(warmup / step).
enum class LrSchedule : uint8_t { constant, inverse_sqrt };

inline const char* lr_schedule_name(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "inverse_sqrt";
}

inline LrSchedule lr_schedule_from_name(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "inverse_sqrt") return LrSchedule::inverse_sqrt;
  throw ContractError("unknown lr schedule '" + s + "'");
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::constant;
  int64_t warmup_steps = 400;
};

// Effective rate for 1-based step t.
inline double scheduled_lr(const AdamConfig& cfg, int64_t t) {
  LOOM_CHECK(t >= 1, ContractError, "schedule step must be >= 1");
  if (cfg.schedule == LrSchedule::constant) return cfg.lr;
  LOOM_CHECK(cfg.warmup_steps >= 1, ContractError, "warmup_steps must be >= 1");
  const double w = static_cast<double>(cfg.warmup_steps);
  const double td = static_cast<double>(t);
  if (t <= cfg.warmup_steps) return cfg.lr * td / w;
  return cfg.lr * std::sqrt(w / td);
}

// Adam with first/second moment estimates and bias correction. The step
// counter is global: it keeps advancing across pipeline stages even when the
// moments are reset, so the schedule never restarts mid-run.
class Adam {
public:
  Adam(const ParamStore& params, AdamConfig cfg)
      : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }
  const ParamStore& first_moments() const { return m_; }
  const ParamStore& second_moments() const { return v_; }

  // Clears the moments but keeps the step counter.
  void reset_moments() {
    for (size_t i = 0; i < m_.size(); ++i) {
      auto& mt = m_.at(i).values;
      auto& vt = v_.at(i).values;
      std::fill(mt.begin(), mt.end(), 0.0);
      std::fill(vt.begin(), vt.end(), 0.0);
    }
  }

  // Restores a previously saved step counter (checkpoint resume).
  void set_step_count(int64_t step) {
    LOOM_CHECK(step >= 0, ContractError, "step counter must be >= 0");
    step_ = step;
  }

  // Restores previously saved moments (checkpoint resume).
  void restore_moments(const ParamStore& m, const ParamStore& v) {
    LOOM_CHECK(m_.congruent(m) && v_.congruent(v), ShapeError,
               "restored moments do not match parameters");
    m_ = m;
    v_ = v;
  }

  // One update. When `update_mask` is given, only positions with mask 1
  // change; masked-out positions keep value and both moments bit-identical.
  // Returns the learning rate that was applied.
  double step(ParamStore& params, const ParamStore& grads, const BinaryMask* update_mask = nullptr) {
    LOOM_CHECK(params.congruent(m_), ShapeError, "optimizer state does not match parameters");
    LOOM_CHECK(params.congruent(grads), ShapeError, "gradients do not match parameters");
    if (update_mask != nullptr) update_mask->check_congruent(params);

    ++step_;
    const double lr = scheduled_lr(cfg_, step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (size_t i = 0; i < params.size(); ++i) {
      auto& theta = params.at(i).values;
      const auto& grad = grads.at(i).values;
      auto& mt = m_.at(i).values;
      auto& vt = v_.at(i).values;
      const Tensor* mask =
          update_mask != nullptr ? &update_mask->at(params.name(i)) : nullptr;
      for (size_t k = 0; k < theta.size(); ++k) {
        if (mask != nullptr && mask->values[k] == 0.0) continue;
        const double gk = grad[k];
        mt[k] = cfg_.beta1 * mt[k] + (1.0 - cfg_.beta1) * gk;
        vt[k] = cfg_.beta2 * vt[k] + (1.0 - cfg_.beta2) * gk * gk;
        const double mhat = mt[k] / bc1;
        const double vhat = vt[k] / bc2;
        theta[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    return lr;
  }

private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  ParamStore m_;
  ParamStore v_;
};

// Global L2-norm gradient clipping. Returns the pre-clip norm.
inline double clip_grad_norm(ParamStore& grads, double max_norm) {
  LOOM_CHECK(max_norm > 0.0, ContractError, "clip norm must be positive");
  double sq = 0.0;
  for (size_t i = 0; i < grads.size(); ++i)
    for (double v : grads.at(i).values) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (size_t i = 0; i < grads.size(); ++i)
      for (double& v : grads.at(i).values) v *= scale;
  }
  return norm;
}

}  // namespace loom
