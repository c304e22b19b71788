// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "loom/adam.hpp"

using namespace loom;

namespace {

ParamStore make_params(Rng& rng, int64_t n = 6) {
  ParamStore p;
  Tensor a = Tensor::zeros({n});
  Tensor b = Tensor::zeros({2, n / 2});
  for (double& v : a.values) v = rng.uniform(-1.0, 1.0);
  for (double& v : b.values) v = rng.uniform(-1.0, 1.0);
  p.add("a", std::move(a));
  p.add("b", std::move(b));
  return p;
}

ParamStore grads_like(const ParamStore& params, Rng& rng) {
  ParamStore g = params.zeros_like();
  for (size_t i = 0; i < g.size(); ++i)
    for (double& v : g.at(i).values) v = rng.uniform(-2.0, 2.0);
  return g;
}

// Scalar reference written independently of the optimizer header.
struct ScalarAdamRef {
  double m = 0.0, v = 0.0, theta;
  int64_t t = 0;
  ScalarAdamRef(double theta0) : theta(theta0) {}
  void step(double g, const AdamConfig& c) {
    ++t;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(c.beta1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(c.beta2, static_cast<double>(t)));
    theta -= scheduled_lr(c, t) * mhat / (std::sqrt(vhat) + c.eps);
  }
};

}  // namespace

TEST_CASE("first update moves each weight by nearly the learning rate") {
  AdamConfig cfg;
  cfg.lr = 0.5;
  ParamStore p;
  p.add("w", Tensor{{2}, {1.0, -3.0}});
  ParamStore g = p.zeros_like();
  g.at("w").values = {2.0, -0.25};
  Adam adam(p, cfg);
  const double used = adam.step(p, g);
  REQUIRE(used == 0.5);
  // After one step mhat and sqrt(vhat) both equal |g| up to eps, so the
  // update is lr * sign(g) * |g| / (|g| + eps).
  REQUIRE(p.at("w").at(0) == Catch::Approx(1.0 - 0.5 * 2.0 / (2.0 + cfg.eps)).margin(1e-16));
  REQUIRE(p.at("w").at(1) == Catch::Approx(-3.0 + 0.5 * 0.25 / (0.25 + cfg.eps)).margin(1e-16));
  REQUIRE(adam.step_count() == 1);
}

TEST_CASE("trajectory matches an independent scalar reference") {
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.schedule = LrSchedule::inverse_sqrt;
  cfg.warmup_steps = 7;
  ParamStore p;
  p.add("w", Tensor::scalar(0.8));
  Adam adam(p, cfg);
  ScalarAdamRef ref(0.8);
  Rng rng(42);
  for (int t = 0; t < 40; ++t) {
    const double gv = rng.uniform(-1.5, 1.5);
    ParamStore g = p.zeros_like();
    g.at("w").at(0) = gv;
    adam.step(p, g);
    ref.step(gv, cfg);
    REQUIRE(p.at("w").at(0) == Catch::Approx(ref.theta).margin(1e-15));
  }
}

TEST_CASE("inverse-sqrt schedule hits warmup and decay landmarks") {
  AdamConfig cfg;
  cfg.lr = 2.0;
  cfg.schedule = LrSchedule::inverse_sqrt;
  cfg.warmup_steps = 400;
  REQUIRE(scheduled_lr(cfg, 1) == Catch::Approx(2.0 / 400.0).epsilon(1e-15));
  REQUIRE(scheduled_lr(cfg, 200) == Catch::Approx(1.0).epsilon(1e-15));
  REQUIRE(scheduled_lr(cfg, 400) == Catch::Approx(2.0).epsilon(1e-15));
  REQUIRE(scheduled_lr(cfg, 1600) == Catch::Approx(1.0).epsilon(1e-15));

  AdamConfig flat;
  flat.lr = 0.3;
  REQUIRE(scheduled_lr(flat, 1) == 0.3);
  REQUIRE(scheduled_lr(flat, 100000) == 0.3);
}

TEST_CASE("masked coordinates keep value and both moments bit-identical") {
  Rng rng(7);
  ParamStore p = make_params(rng);
  const ParamStore before = p;
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam adam(p, cfg);
  BinaryMask mask = BinaryMask::ones_like(p);
  mask.at("a").values = {1, 0, 1, 0, 0, 1};
  mask.at("b").values = {0, 0, 0, 1, 1, 1};
  for (int t = 0; t < 25; ++t) {
    ParamStore g = grads_like(p, rng);
    adam.step(p, g, &mask);
  }
  for (size_t i = 0; i < p.size(); ++i) {
    const Tensor& m = mask.at(p.name(i));
    for (size_t k = 0; k < m.values.size(); ++k) {
      if (m.values[k] == 0.0) {
        REQUIRE(p.at(i).values[k] == before.at(i).values[k]);
        REQUIRE(adam.first_moments().at(i).values[k] == 0.0);
        REQUIRE(adam.second_moments().at(i).values[k] == 0.0);
      } else {
        REQUIRE(p.at(i).values[k] != before.at(i).values[k]);
      }
    }
  }
}

TEST_CASE("masked run equals a dense run restricted to the active coordinates") {
  // Because moments of inactive coordinates never move, updating under a mask
  // must equal running a dense optimizer over only the active subvector.
  Rng rng(19);
  ParamStore p = make_params(rng);
  ParamStore p_dense = p;
  AdamConfig cfg;
  cfg.lr = 0.02;
  Adam masked(p, cfg);
  Adam dense(p_dense, cfg);
  BinaryMask mask = BinaryMask::ones_like(p);
  mask.at("a").values = {1, 1, 0, 0, 1, 0};
  mask.at("b").values = {0, 1, 0, 1, 0, 1};
  for (int t = 0; t < 15; ++t) {
    ParamStore g = grads_like(p, rng);
    ParamStore g_active = g;
    for (size_t i = 0; i < g.size(); ++i)
      for (size_t k = 0; k < g.at(i).values.size(); ++k)
        if (mask.at(p.name(i)).values[k] == 0.0) g_active.at(i).values[k] = 0.0;
    masked.step(p, g, &mask);
    dense.step(p_dense, g_active);
  }
  // Active coordinates saw identical gradients; a dense run still differs on
  // them in general only through nothing: zeroed grads keep every inactive
  // coordinate at moment zero, so active updates agree exactly.
  for (size_t i = 0; i < p.size(); ++i)
    for (size_t k = 0; k < p.at(i).values.size(); ++k)
      if (mask.at(p.name(i)).values[k] == 1.0)
        REQUIRE(p.at(i).values[k] == p_dense.at(i).values[k]);
}

TEST_CASE("reset keeps the step counter and restore resumes a run exactly") {
  Rng rng(11);
  ParamStore full = make_params(rng);
  ParamStore staged = full;
  AdamConfig cfg;
  cfg.lr = 0.03;
  cfg.schedule = LrSchedule::inverse_sqrt;
  cfg.warmup_steps = 5;

  std::vector<ParamStore> grads;
  Rng grng(123);
  for (int t = 0; t < 20; ++t) grads.push_back(grads_like(full, grng));

  Adam a(full, cfg);
  for (int t = 0; t < 20; ++t) a.step(full, grads[static_cast<size_t>(t)]);

  Adam b(staged, cfg);
  for (int t = 0; t < 9; ++t) b.step(staged, grads[static_cast<size_t>(t)]);
  const ParamStore saved_m = b.first_moments();
  const ParamStore saved_v = b.second_moments();
  const int64_t saved_step = b.step_count();

  Adam c(staged, cfg);
  REQUIRE(c.step_count() == 0);
  c.set_step_count(saved_step);
  c.restore_moments(saved_m, saved_v);
  for (int t = 9; t < 20; ++t) c.step(staged, grads[static_cast<size_t>(t)]);

  REQUIRE(c.step_count() == 20);
  for (size_t i = 0; i < full.size(); ++i) REQUIRE(staged.at(i).values == full.at(i).values);

  c.reset_moments();
  REQUIRE(c.step_count() == 20);
  for (size_t i = 0; i < full.size(); ++i)
    for (double v : c.first_moments().at(i).values) REQUIRE(v == 0.0);
}

TEST_CASE("gradient clipping rescales only above the threshold") {
  ParamStore g;
  g.add("w", Tensor{{2}, {3.0, 4.0}});
  const double norm = clip_grad_norm(g, 2.5);
  REQUIRE(norm == 5.0);
  REQUIRE(g.at("w").at(0) == Catch::Approx(1.5).epsilon(1e-15));
  REQUIRE(g.at("w").at(1) == Catch::Approx(2.0).epsilon(1e-15));

  ParamStore small;
  small.add("w", Tensor{{2}, {0.3, 0.4}});
  const double n2 = clip_grad_norm(small, 2.5);
  REQUIRE(n2 == Catch::Approx(0.5).epsilon(1e-15));
  REQUIRE(small.at("w").at(0) == 0.3);
  REQUIRE(small.at("w").at(1) == 0.4);

  REQUIRE_THROWS_AS(clip_grad_norm(small, 0.0), ContractError);
}

TEST_CASE("optimizer state must stay congruent with the parameters") {
  ParamStore p;
  p.add("w", Tensor::zeros({3}));
  Adam adam(p, AdamConfig{});
  ParamStore other;
  other.add("w", Tensor::zeros({4}));
  ParamStore g3 = p.zeros_like();
  REQUIRE_THROWS_AS(adam.step(other, g3), ShapeError);
  REQUIRE_THROWS_AS(adam.step(p, other.zeros_like()), ShapeError);
  REQUIRE_THROWS_AS(adam.set_step_count(-1), ContractError);
}

TEST_CASE("schedule names round-trip") {
  REQUIRE(lr_schedule_name(LrSchedule::constant) == std::string("constant"));
  REQUIRE(lr_schedule_name(LrSchedule::inverse_sqrt) == std::string("inverse_sqrt"));
  REQUIRE(lr_schedule_from_name("inverse_sqrt") == LrSchedule::inverse_sqrt);
  REQUIRE_THROWS_AS(lr_schedule_from_name("bogus"), ContractError);
}
