// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance gate. Nine checks, one verdict line each, nonzero
// exit if any fails. Tolerances are fixed here, not tuned per run:
//
//   1. sequential adaptation never changes earlier domains' decodes (exact)
//   2. >= 1000 randomized ownership sequences keep the partition sound,
//      and mask files round-trip losslessly
//   3. autodiff vs central differences: full model < 1e-4 relative,
//      anchoring penalty and soft-target loss < 1e-6
//   4. 50% sparsity with recovery costs <= 2 accuracy points vs dense;
//      90% costs strictly more than 50%
//   5. fine-tuning forgets >= 5 points of general accuracy, the partition
//      pipeline forgets exactly 0 and gains >= 10 points on target
//   6. trained 3x past fine-tuning's dev peak, fine-tuning ends below its
//      peak while the pipeline ends within 1 point of its own
//   7. sparsity schedule matches closed forms to 1e-12; pruning matches a
//      sort oracle on >= 1000 tie-heavy tensors
//   8. corpus BLEU matches an independent reference to 1e-9 on 20 corpora
//   9. zeroed-out penalties reproduce fine-tuning trajectories bit-exactly

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "loom/harness.hpp"

using namespace loom;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Zero-forgetting exactness
// ---------------------------------------------------------------------------

Verdict check_zero_forgetting() {
  ExperimentConfig cfg;
  cfg.vocab = 12;
  cfg.train_sentences = 192;
  cfg.dev_sentences = 24;
  cfg.test_sentences = 24;
  cfg.min_len = 3;
  cfg.max_len = 8;
  cfg.general_task = "copy";
  cfg.target_tasks = {"reverse", "shift:3", "cipher:5"};
  cfg.model.dim = 16;
  cfg.model.ffn_dim = 32;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.model.max_len = 12;
  cfg.adam.lr = 3e-3;
  cfg.batch_size = 8;
  cfg.general_steps = 1200;
  cfg.extract_schedule = PruneSchedule{0, 4, 40, 0.0, 0.5, PruneCurve::cubic};
  cfg.extract_steps = 300;
  cfg.warmup_steps = 100;
  cfg.tune_steps = 300;
  cfg.keep_fraction = 0.1;
  cfg.sequential = true;
  cfg.eval_interval = 100;
  cfg.eval_samples = 8;
  cfg.beam = 2;
  cfg.seed = 7;

  const ExperimentResult run = run_experiment(cfg);
  const auto& stability = run.report.at("decode_stability");
  int rows = 0, identical = 0, acc_exact = 0;
  for (const auto& s : stability) {
    ++rows;
    if (s.at("decode_identical").get<bool>()) ++identical;
    if (s.at("token_accuracy_now").get<double>() == s.at("token_accuracy_before").get<double>())
      ++acc_exact;
  }
  Verdict v;
  v.pass = rows == 6 && identical == rows && acc_exact == rows;
  v.detail = std::to_string(identical) + "/" + std::to_string(rows) +
             " snapshot decodes bit-identical across 3 sequential adaptations";
  return v;
}

// ---------------------------------------------------------------------------
// 2. Partition invariants under randomized operation sequences
// ---------------------------------------------------------------------------

Verdict check_partition_invariants() {
  const int kCases = 1200;
  const std::filesystem::path tmp =
      std::filesystem::temp_directory_path() / "loom_acceptance_masks.bin";
  int round_trips = 0, overlap_probes = 0;

  for (int c = 0; c < kCases; ++c) {
    Rng rng(mix_seed(0xACC2, static_cast<uint64_t>(c)));
    ParamStore store;
    const int nt = 1 + static_cast<int>(rng.below(3));
    const ParamKind kinds[] = {ParamKind::attention, ParamKind::ffn, ParamKind::layer_norm,
                               ParamKind::embedding};
    for (int t = 0; t < nt; ++t) {
      Shape shape;
      if (rng.below(2) == 0)
        shape = {2 + static_cast<int64_t>(rng.below(11))};
      else
        shape = {2 + static_cast<int64_t>(rng.below(4)), 2 + static_cast<int64_t>(rng.below(4))};
      Tensor values = Tensor::zeros(shape);
      for (double& x : values.values) x = rng.normal();
      store.add("t" + std::to_string(t), std::move(values),
                ParamGroupTag{kinds[rng.below(4)], Side::none, -1});
    }

    MaskRegistry reg(store);
    std::vector<std::vector<int16_t>> shadow;
    for (size_t i = 0; i < store.size(); ++i)
      shadow.emplace_back(store.at(i).values.size(), kOwnerFree);
    auto shadow_freeze = [&](ParamKind kind) {
      for (size_t i = 0; i < store.size(); ++i)
        if (store.tag(i).kind == kind)
          for (int16_t& o : shadow[i])
            if (o == kOwnerFree) o = kOwnerFrozen;
    };
    if (rng.below(2) == 0) {
      const ParamKind kind = kinds[rng.below(4)];
      reg.freeze_kind(kind);
      shadow_freeze(kind);
    }

    const int nd = 1 + static_cast<int>(rng.below(4));
    for (int d = 0; d < nd; ++d) {
      std::vector<int> ancestors;
      for (int a = 0; a < d; ++a)
        if (rng.below(3) == 0) ancestors.push_back(a);
      reg.add_domain("d" + std::to_string(d), ancestors);
      BinaryMask sel = BinaryMask::zeros_like(store);
      for (size_t i = 0; i < store.size(); ++i)
        for (size_t k = 0; k < shadow[i].size(); ++k)
          if (shadow[i][k] == kOwnerFree && rng.uniform() < 0.35) {
            sel.at(store.name(i)).values[k] = 1.0;
            shadow[i][k] = static_cast<int16_t>(d);
          }
      reg.assign_domain(d, sel);
      if (d == 0 && rng.below(3) == 0) {
        // Freezing mid-sequence claims only still-free elements.
        const ParamKind kind = kinds[rng.below(4)];
        reg.freeze_kind(kind);
        shadow_freeze(kind);
      }
    }

    // Ownership must match the shadow exactly: no overlap, no reassignment.
    int64_t owned_total = 0;
    for (size_t i = 0; i < store.size(); ++i)
      for (size_t k = 0; k < shadow[i].size(); ++k)
        if (reg.owner(i, k) != shadow[i][k]) {
          return {false, "owner mismatch in case " + std::to_string(c)};
        }
    for (int d = 0; d < nd; ++d) {
      const int64_t n = reg.domain_element_count(d);
      if (n != reg.update_mask(d).popcount())
        return {false, "count/mask disagreement in case " + std::to_string(c)};
      owned_total += n;
    }
    if (reg.free_count() + reg.frozen_count() + owned_total != reg.total_elements())
      return {false, "partition does not sum in case " + std::to_string(c)};
    for (int a = 0; a < nd; ++a)
      for (int b = a + 1; b < nd; ++b)
        if ((reg.update_mask(a) & reg.update_mask(b)).popcount() != 0)
          return {false, "update masks overlap in case " + std::to_string(c)};

    // Assigning an element that already has an owner must throw, and the
    // conflicting element must keep its owner.
    size_t ci = 0, ck = 0;
    bool found = false;
    for (size_t i = 0; i < shadow.size() && !found; ++i)
      for (size_t k = 0; k < shadow[i].size() && !found; ++k)
        if (shadow[i][k] >= 0) {
          ci = i;
          ck = k;
          found = true;
        }
    if (found) {
      MaskRegistry probe = reg;
      const int d = probe.add_domain("clash");
      BinaryMask sel = BinaryMask::zeros_like(store);
      sel.at(store.name(ci)).values[ck] = 1.0;
      bool threw = false;
      try {
        probe.assign_domain(d, sel);
      } catch (const OverlapError&) {
        threw = true;
      }
      if (!threw || probe.owner(ci, ck) != shadow[ci][ck])
        return {false, "owner was reassigned in case " + std::to_string(c)};
      ++overlap_probes;
    }

    if (c % 5 == 0) {
      save_masks(tmp, reg);
      const MaskRegistry back = load_masks(tmp);
      bool same = back.tensor_count() == reg.tensor_count() &&
                  back.domain_count() == reg.domain_count();
      for (int d = 0; same && d < reg.domain_count(); ++d)
        same = back.domain(d).name == reg.domain(d).name &&
               back.domain(d).ancestors == reg.domain(d).ancestors;
      for (size_t i = 0; same && i < store.size(); ++i) {
        same = back.tensor_name(i) == reg.tensor_name(i) &&
               back.tensor_shape(i) == reg.tensor_shape(i);
        for (size_t k = 0; same && k < shadow[i].size(); ++k)
          same = back.owner(i, k) == reg.owner(i, k);
      }
      if (!same) return {false, "round trip not identity in case " + std::to_string(c)};
      ++round_trips;
    }
  }
  std::filesystem::remove(tmp);
  return {true, std::to_string(kCases) + " cases, " + std::to_string(overlap_probes) +
                    " overlap probes, " + std::to_string(round_trips) + " file round-trips"};
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness against central differences
// ---------------------------------------------------------------------------

double rel_err(double ad, double fd) {
  return std::abs(ad - fd) / std::max({1e-3, std::abs(ad), std::abs(fd)});
}

Verdict check_gradients() {
  ModelConfig cfg;
  cfg.vocab_size = 9;
  cfg.dim = 8;
  cfg.ffn_dim = 12;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.max_len = 12;
  cfg.pad_id = 6;
  cfg.bos_id = 7;
  cfg.eos_id = 8;

  ParamStore params = init_params(cfg, 5);
  const std::vector<int64_t> src = {0, 1, 2, 3, 4};
  const std::vector<int64_t> tgt = {2, 3, 1, 0};
  const NamedTensors inputs = make_pair_inputs(cfg, src, tgt);
  GraphCache cache(cfg);
  const Graph& g = cache.loss_graph(6, 5);
  const GradResult gr = backward(g, params, inputs, g.find("loss"));

  // (a) 200 coordinates of the full model, evenly strided over every tensor.
  const int64_t total = params.total_elements();
  double worst_model = 0.0;
  const double h = 1e-5;
  for (int s = 0; s < 200; ++s) {
    int64_t flat = s * total / 200;
    size_t ti = 0;
    while (flat >= params.at(ti).size()) flat -= params.at(ti++).size();
    double& slot = params.at(ti).values[static_cast<size_t>(flat)];
    const double saved = slot;
    slot = saved + h;
    const double up = forward_one(g, params, inputs, g.find("loss")).values[0];
    slot = saved - h;
    const double down = forward_one(g, params, inputs, g.find("loss")).values[0];
    slot = saved;
    const double fd = (up - down) / (2.0 * h);
    worst_model =
        std::max(worst_model, rel_err(gr.grads.at(ti).values[static_cast<size_t>(flat)], fd));
  }

  // (b) the quadratic anchoring penalty, all coordinates, closed-form grads.
  Rng rng(17);
  const double lambda = 1.7;
  std::vector<double> theta(64), anchor(64), fisher(64);
  for (size_t i = 0; i < theta.size(); ++i) {
    theta[i] = rng.uniform(-1.0, 1.0);
    anchor[i] = rng.uniform(-1.0, 1.0);
    fisher[i] = rng.uniform(0.0, 2.0);
  }
  auto penalty = [&]() {
    double p = 0.0;
    for (size_t i = 0; i < theta.size(); ++i)
      p += fisher[i] * (theta[i] - anchor[i]) * (theta[i] - anchor[i]);
    return 0.5 * lambda * p;
  };
  double worst_penalty = 0.0;
  for (size_t i = 0; i < theta.size(); ++i) {
    const double analytic = lambda * fisher[i] * (theta[i] - anchor[i]);
    const double saved = theta[i];
    theta[i] = saved + 1e-6;
    const double up = penalty();
    theta[i] = saved - 1e-6;
    const double down = penalty();
    theta[i] = saved;
    worst_penalty = std::max(worst_penalty, rel_err(analytic, (up - down) / 2e-6));
  }

  // (c) the blended soft-target loss as a function of the logits.
  const double alpha = 0.35;
  Graph dg;
  dg.add_param("x", "x", {3, 9});
  const int labels = dg.add_input("labels", {3});
  Tensor teacher = Tensor::zeros({3, 9});
  for (int64_t r = 0; r < 3; ++r) {
    double mass = 0.0;
    for (int64_t c = 0; c < 9; ++c) {
      teacher.at(r, c) = std::exp(rng.uniform(-1.0, 1.0));
      mass += teacher.at(r, c);
    }
    for (int64_t c = 0; c < 9; ++c) teacher.at(r, c) /= mass;
  }
  const int tnode = dg.add_constant("teacher", std::move(teacher));
  const int nll = dg.add_cross_entropy("nll", dg.find("x"), labels, 0.1);
  const int kl = dg.add_kl_divergence("kl", dg.find("x"), tnode);
  const int wn = dg.add_mul("wnll", nll, dg.add_constant("cn", Tensor::scalar(1.0 - alpha)));
  const int wk = dg.add_mul("wkl", kl, dg.add_constant("ck", Tensor::scalar(alpha)));
  const int loss = dg.add_add("loss", wn, wk);

  ParamStore xs;
  Tensor x0 = Tensor::zeros({3, 9});
  for (double& x : x0.values) x = rng.normal();
  xs.add("x", std::move(x0));
  NamedTensors dinputs;
  dinputs.emplace("labels", Tensor({3}, {1.0, 4.0, 0.0}));
  const GradResult dgr = backward(dg, xs, dinputs, loss);
  double worst_distill = 0.0;
  for (size_t i = 0; i < xs.at(0).values.size(); ++i) {
    double& slot = xs.at(0).values[i];
    const double saved = slot;
    slot = saved + h;
    const double up = forward_one(dg, xs, dinputs, loss).values[0];
    slot = saved - h;
    const double down = forward_one(dg, xs, dinputs, loss).values[0];
    slot = saved;
    worst_distill = std::max(worst_distill, rel_err(dgr.grads.at(0).values[i], (up - down) / (2.0 * h)));
  }

  Verdict v;
  v.pass = worst_model < 1e-4 && worst_penalty < 1e-6 && worst_distill < 1e-6;
  std::ostringstream d;
  d << "max rel err: model " << worst_model << " (200 coords, limit 1e-4), penalty "
    << worst_penalty << ", soft-target " << worst_distill << " (limit 1e-6)";
  v.detail = d.str();
  return v;
}

// ---------------------------------------------------------------------------
// Shared pipeline fixture for checks 5 and 6
// ---------------------------------------------------------------------------

struct PipelineFixture {
  ModelConfig cfg;
  Dataset general;
  Dataset target;
  ParamStore params;     // after extraction
  MaskRegistry registry;
  int64_t opt_steps = 0;
  double sparsity = 0.0;
};

TrainOptions plain_train(int64_t steps, uint64_t seed) {
  TrainOptions t;
  t.steps = steps;
  t.batch_size = 8;
  t.seed = seed;
  t.eval_interval = 0;
  return t;
}

AdamConfig toy_adam() {
  AdamConfig a;
  a.lr = 3e-3;
  return a;
}

const PipelineFixture& pipeline_fixture() {
  static const PipelineFixture fx = [] {
    PipelineFixture f;
    f.cfg.vocab_size = 15;
    f.cfg.dim = 16;
    f.cfg.ffn_dim = 32;
    f.cfg.heads = 2;
    f.cfg.layers = 1;
    f.cfg.max_len = 12;
    f.cfg.pad_id = 12;
    f.cfg.bos_id = 13;
    f.cfg.eos_id = 14;
    f.general = generate_dataset("general", TaskSpec::parse("copy"), 12, 192, 24, 32, 3, 8, 101);
    f.target = generate_dataset("shift", TaskSpec::parse("shift:3"), 12, 192, 24, 32, 3, 8, 102);

    f.params = init_params(f.cfg, 9);
    GraphCache cache(f.cfg);
    Adam adam(f.params, toy_adam());
    train_general(cache, f.params, adam, f.general.train, plain_train(1500, 51));

    ExtractOptions ex;
    ex.schedule = PruneSchedule{0, 4, 40, 0.0, 0.5, PruneCurve::cubic};
    ex.train = plain_train(400, 52);
    ExtractResult res = extract_general_subnet(cache, f.params, adam, f.general.train, ex);
    f.registry = std::move(res.registry);
    f.sparsity = res.sparsity;
    f.opt_steps = adam.step_count();
    return f;
  }();
  return fx;
}

double masked_accuracy(GraphCache& cache, const ParamStore& params, const BinaryMask* mask,
                       const Corpus& corpus) {
  EvalOptions opts;
  opts.beam = 1;
  opts.param_mask = mask;
  return evaluate_corpus(cache, params, corpus, opts).token_accuracy;
}

// ---------------------------------------------------------------------------
// 4. Sparsity-accuracy trade-off direction
// ---------------------------------------------------------------------------

Verdict check_sparsity_tradeoff() {
  ModelConfig cfg;
  cfg.vocab_size = 15;
  cfg.dim = 12;
  cfg.ffn_dim = 24;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.max_len = 12;
  cfg.pad_id = 12;
  cfg.bos_id = 13;
  cfg.eos_id = 14;
  const Dataset data = generate_dataset("general", TaskSpec::parse("copy"), 12, 192, 24, 32, 3, 8, 61);

  ParamStore dense = init_params(cfg, 15);
  GraphCache cache(cfg);
  Adam adam(dense, toy_adam());
  train_general(cache, dense, adam, data.train, plain_train(1500, 62));
  const double dense_acc = masked_accuracy(cache, dense, nullptr, data.test);

  auto sparse_acc = [&](double sparsity) {
    ParamStore p = dense;
    Adam a(p, toy_adam());
    a.set_step_count(adam.step_count());
    ExtractOptions ex;
    ex.schedule = PruneSchedule{0, 4, 40, 0.0, sparsity, PruneCurve::cubic};
    ex.train = plain_train(400, 63);
    ExtractResult res = extract_general_subnet(cache, p, a, data.train, ex);
    const BinaryMask cone = res.registry.inference_mask(0);
    return masked_accuracy(cache, p, &cone, data.test);
  };

  const double acc50 = sparse_acc(0.5);
  const double acc90 = sparse_acc(0.9);
  const double drop50 = dense_acc - acc50;
  const double drop90 = dense_acc - acc90;

  Verdict v;
  v.pass = drop50 <= 0.02 + 1e-12 && drop90 > drop50;
  v.detail = "dense " + fmt(dense_acc) + ", 50% " + fmt(acc50) + " (drop " + fmt(drop50) +
             ", limit 0.02), 90% " + fmt(acc90) + " (drop " + fmt(drop90) + ", must exceed 50%)";
  return v;
}

// ---------------------------------------------------------------------------
// 5. Forgetting direction: fine-tuning vs the partition pipeline
// ---------------------------------------------------------------------------

Verdict check_forgetting_direction() {
  const PipelineFixture& fx = pipeline_fixture();
  GraphCache cache(fx.cfg);
  const BinaryMask general_cone = fx.registry.inference_mask(0);
  const double general_before = masked_accuracy(cache, fx.params, &general_cone, fx.general.test);
  const double target_before = masked_accuracy(cache, fx.params, &general_cone, fx.target.test);

  // Partition pipeline branch.
  ParamStore p = fx.params;
  MaskRegistry reg = fx.registry;
  Adam adam(p, toy_adam());
  adam.set_step_count(fx.opt_steps);
  AdaptOptions a;
  a.domain = "shift";
  a.keep_fraction = 0.1;
  a.warmup = plain_train(600, 53);
  a.tune = plain_train(900, 54);
  const AdaptResult ad = adapt_domain(cache, p, reg, adam, fx.target.train, a);
  const BinaryMask general_cone_after = reg.inference_mask(0);
  const BinaryMask target_cone = reg.inference_mask(ad.ordinal);
  const double general_after = masked_accuracy(cache, p, &general_cone_after, fx.general.test);
  const double target_after = masked_accuracy(cache, p, &target_cone, fx.target.test);

  // Plain fine-tuning branch from the same starting point, equal budget.
  BaselineOptions bo;
  bo.strategy = BaselineStrategy::finetune;
  bo.train = plain_train(1500, 55);
  bo.adam = toy_adam();
  bo.start_step = fx.opt_steps;
  const BaselineRun ft =
      run_baseline(fx.cfg, fx.params, fx.target.train, nullptr, fx.general.train, bo);
  const double general_ft = masked_accuracy(cache, ft.params, nullptr, fx.general.test);

  Verdict v;
  const double forgot = general_before - general_ft;
  const double gained = target_after - target_before;
  v.pass = forgot >= 0.05 && general_after == general_before && gained >= 0.10;
  v.detail = "fine-tune forgot " + fmt(forgot) + " (>= 0.05), pipeline forgot " +
             fmt(general_before - general_after) + " (exactly 0), target gain " + fmt(gained) +
             " (>= 0.10, " + fmt(target_before) + " to " + fmt(target_after) + ")";
  return v;
}

// ---------------------------------------------------------------------------
// 6. Long-run robustness past the fine-tuning peak
// ---------------------------------------------------------------------------

Verdict check_overfitting_robustness() {
  const PipelineFixture& fx = pipeline_fixture();
  const Corpus noisy = corrupt_corpus(fx.target.train, 12, 0.30, 71);
  const int64_t budget = 2400;

  struct Track {
    std::vector<double> accs;
    std::vector<int64_t> steps;
  };
  auto tracker = [](Track& t, int64_t start) {
    return [&t, start](const TrainLogEntry& e) {
      if (e.dev_accuracy >= 0.0) {
        t.accs.push_back(e.dev_accuracy);
        t.steps.push_back(e.step - start);
      }
    };
  };

  Track ft_track;
  BaselineOptions bo;
  bo.strategy = BaselineStrategy::finetune;
  bo.train = plain_train(budget, 55);
  bo.train.eval_interval = 100;
  bo.train.eval_samples = 24;
  bo.train.on_log = tracker(ft_track, fx.opt_steps);
  bo.adam = toy_adam();
  bo.start_step = fx.opt_steps;
  run_baseline(fx.cfg, fx.params, noisy, &fx.target.dev, fx.general.train, bo);

  const double ft_peak = *std::max_element(ft_track.accs.begin(), ft_track.accs.end());
  const size_t ft_peak_at = static_cast<size_t>(
      std::max_element(ft_track.accs.begin(), ft_track.accs.end()) - ft_track.accs.begin());
  const int64_t ft_peak_step = ft_track.steps[ft_peak_at];
  const double ft_final = ft_track.accs.back();

  // Same budget, same noisy corpus, through the partition pipeline. The
  // tracked curve is the tuning phase: warm-up weights are discarded at
  // selection and never ship.
  ParamStore p = fx.params;
  MaskRegistry reg = fx.registry;
  GraphCache cache(fx.cfg);
  Adam adam(p, toy_adam());
  adam.set_step_count(fx.opt_steps);
  Track pt_track;
  AdaptOptions a;
  a.domain = "shift";
  a.keep_fraction = 0.1;
  a.warmup = plain_train(600, 53);
  a.tune = plain_train(budget - 600, 54);
  a.tune.eval_interval = 100;
  a.tune.eval_samples = 24;
  a.tune.dev = &fx.target.dev;
  a.tune.on_log = tracker(pt_track, fx.opt_steps);
  adapt_domain(cache, p, reg, adam, noisy, a);

  const double pt_peak = *std::max_element(pt_track.accs.begin(), pt_track.accs.end());
  const double pt_final = pt_track.accs.back();

  Verdict v;
  const bool budget_covers = budget >= 3 * ft_peak_step;
  v.pass = budget_covers && ft_final < ft_peak && pt_final >= pt_peak - 0.01 - 1e-12;
  v.detail = "fine-tune peak " + fmt(ft_peak) + " at step " + std::to_string(ft_peak_step) +
             " of " + std::to_string(budget) + ", final " + fmt(ft_final) +
             " (must fall below peak); pipeline peak " + fmt(pt_peak) + ", final " +
             fmt(pt_final) + " (within 0.01)";
  if (!budget_covers) v.detail += "; budget below 3x peak step";
  return v;
}

// ---------------------------------------------------------------------------
// 7. Schedule closed forms and the pruning sort oracle
// ---------------------------------------------------------------------------

Verdict check_pruning_oracles() {
  double worst_schedule = 0.0;
  for (PruneCurve curve : {PruneCurve::cubic, PruneCurve::linear, PruneCurve::oneshot}) {
    const PruneSchedule s{10, 5, 20, 0.08, 0.72, curve};
    auto expected = [&](int64_t step) {
      double p = (static_cast<double>(step) - 10.0) / 100.0;
      p = std::clamp(p, 0.0, 1.0);
      if (curve == PruneCurve::cubic) return 0.72 + (0.08 - 0.72) * std::pow(1.0 - p, 3.0);
      if (curve == PruneCurve::linear) return 0.72 + (0.08 - 0.72) * (1.0 - p);
      return p >= 1.0 ? 0.72 : 0.08;
    };
    for (int64_t step : {0L, 10L, 35L, 60L, 85L, 110L, 400L})
      worst_schedule = std::max(worst_schedule,
                                std::abs(schedule_sparsity(s, step) - expected(step)));
  }

  const int kCases = 1000;
  int ties_seen = 0;
  for (int c = 0; c < kCases; ++c) {
    Rng rng(mix_seed(0xACC7, static_cast<uint64_t>(c)));
    const int64_t n = 1 + static_cast<int64_t>(rng.below(40));
    std::vector<double> values(static_cast<size_t>(n));
    for (double& x : values)
      x = (static_cast<double>(rng.below(9)) - 4.0) / 4.0;  // tie-heavy grid
    ParamStore store;
    store.add("w", Tensor({n}, values));
    BinaryMask eligible = BinaryMask::ones_like(store);
    for (double& e : eligible.at("w").values)
      if (rng.uniform() < 0.2) e = 0.0;

    std::vector<size_t> order;
    for (size_t i = 0; i < values.size(); ++i)
      if (eligible.at("w").values[i] != 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      const double ma = std::abs(values[a]), mb = std::abs(values[b]);
      return ma != mb ? ma < mb : a < b;
    });
    {
      std::map<double, int> mags;
      for (size_t i : order) ++mags[std::abs(values[i])];
      for (const auto& [m, cnt] : mags)
        if (cnt > 1) {
          ++ties_seen;
          break;
        }
    }

    GradualPruner pruner(PruneSchedule{}, store, eligible);
    const double s1 = rng.uniform(0.0, 0.9);
    const double s2 = s1 + rng.uniform(0.0, 0.95 - s1);
    const int64_t removed1 = pruner.prune_to(store, s1);
    const auto quota = [&](double s) {
      return static_cast<int64_t>(s * static_cast<double>(order.size()));
    };
    if (removed1 != quota(s1)) return {false, "first quota off in case " + std::to_string(c)};
    const int64_t removed2 = pruner.prune_to(store, s2);
    if (removed2 != quota(s2) - quota(s1))
      return {false, "second quota off in case " + std::to_string(c)};

    const Tensor& alive = pruner.alive().at("w");
    for (size_t r = 0; r < order.size(); ++r) {
      const bool expect_pruned = r < static_cast<size_t>(quota(s2));
      const size_t idx = order[r];
      if ((alive.values[idx] == 0.0) != expect_pruned)
        return {false, "prune set diverges from sort oracle in case " + std::to_string(c)};
      const double expect_value = expect_pruned ? 0.0 : values[idx];
      if (store.at("w").values[idx] != expect_value)
        return {false, "pruned values not zeroed in case " + std::to_string(c)};
    }
  }

  Verdict v;
  v.pass = worst_schedule <= 1e-12;
  v.detail = "schedule max abs err " + std::to_string(worst_schedule) + " (limit 1e-12); " +
             std::to_string(kCases) + " tensors vs sort oracle, " + std::to_string(ties_seen) +
             " with magnitude ties";
  return v;
}

// ---------------------------------------------------------------------------
// 8. BLEU against an independent reference implementation
// ---------------------------------------------------------------------------

double reference_bleu(const std::vector<std::vector<int64_t>>& refs,
                      const std::vector<std::vector<int64_t>>& hyps) {
  double ref_len = 0.0, hyp_len = 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    int64_t matched = 0, total = 0;
    for (size_t s = 0; s < refs.size(); ++s) {
      std::map<std::string, int64_t> ref_counts, hyp_counts;
      auto key = [&](const std::vector<int64_t>& v, size_t at) {
        std::string k;
        for (int j = 0; j < n; ++j) k += std::to_string(v[at + static_cast<size_t>(j)]) + ",";
        return k;
      };
      if (refs[s].size() >= static_cast<size_t>(n))
        for (size_t i = 0; i + static_cast<size_t>(n) <= refs[s].size(); ++i)
          ++ref_counts[key(refs[s], i)];
      if (hyps[s].size() >= static_cast<size_t>(n))
        for (size_t i = 0; i + static_cast<size_t>(n) <= hyps[s].size(); ++i)
          ++hyp_counts[key(hyps[s], i)];
      for (const auto& [k, cnt] : hyp_counts) {
        total += cnt;
        const auto it = ref_counts.find(k);
        matched += std::min(cnt, it == ref_counts.end() ? 0 : it->second);
      }
    }
    if (total == 0 || matched == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  for (size_t s = 0; s < refs.size(); ++s) {
    ref_len += static_cast<double>(refs[s].size());
    hyp_len += static_cast<double>(hyps[s].size());
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return bp * std::exp(log_sum);
}

Verdict check_bleu_oracle() {
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    Rng rng(mix_seed(0xACC8, static_cast<uint64_t>(c)));
    std::vector<std::vector<int64_t>> refs, hyps;
    const size_t sentences = 1 + rng.below(8);
    for (size_t s = 0; s < sentences; ++s) {
      std::vector<int64_t> ref(1 + rng.below(12));
      for (int64_t& t : ref) t = static_cast<int64_t>(rng.below(6));
      std::vector<int64_t> hyp;
      if (rng.below(2) == 0) {
        hyp = ref;  // near-copies give high-order matches
        for (int64_t& t : hyp)
          if (rng.uniform() < 0.25) t = static_cast<int64_t>(rng.below(6));
        if (!hyp.empty() && rng.below(2) == 0) hyp.pop_back();
      } else {
        hyp.resize(1 + rng.below(12));
        for (int64_t& t : hyp) t = static_cast<int64_t>(rng.below(6));
      }
      refs.push_back(std::move(ref));
      hyps.push_back(std::move(hyp));
    }
    worst = std::max(worst, std::abs(corpus_bleu(refs, hyps) - reference_bleu(refs, hyps)));
  }
  Verdict v;
  v.pass = worst <= 1e-9;
  std::ostringstream d;
  d << "max abs difference " << worst << " over 20 corpora (limit 1e-9)";
  v.detail = d.str();
  return v;
}

// ---------------------------------------------------------------------------
// 9. Disabled penalties reduce to plain fine-tuning bit-exactly
// ---------------------------------------------------------------------------

Verdict check_baseline_reductions() {
  ModelConfig cfg;
  cfg.vocab_size = 9;
  cfg.dim = 8;
  cfg.ffn_dim = 12;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_len = 12;
  cfg.pad_id = 6;
  cfg.bos_id = 7;
  cfg.eos_id = 8;
  const ParamStore general = init_params(cfg, 21);
  const Corpus target = generate_corpus(TaskSpec::parse("reverse"), 6, 32, 3, 6, 22);
  const Corpus general_train = generate_corpus(TaskSpec::parse("copy"), 6, 32, 3, 6, 23);

  BaselineOptions base;
  base.strategy = BaselineStrategy::finetune;
  base.train = plain_train(30, 29);
  base.train.batch_size = 4;
  base.adam = toy_adam();
  const BaselineRun plain = run_baseline(cfg, general, target, nullptr, general_train, base);

  auto matches = [&](const BaselineRun& run) {
    if (!(run.params == plain.params)) return false;
    if (run.train.log.size() != plain.train.log.size()) return false;
    for (size_t i = 0; i < run.train.log.size(); ++i)
      if (run.train.log[i].loss != plain.train.log[i].loss) return false;
    return true;
  };

  BaselineOptions ewc = base;
  ewc.strategy = BaselineStrategy::ewc;
  ewc.ewc_lambda = 0.0;
  const bool ewc_ok = matches(run_baseline(cfg, general, target, nullptr, general_train, ewc));

  BaselineOptions distill = base;
  distill.strategy = BaselineStrategy::distill;
  distill.distill_alpha = 0.0;
  const bool distill_ok =
      matches(run_baseline(cfg, general, target, nullptr, general_train, distill));

  BaselineOptions freeze = base;
  freeze.strategy = BaselineStrategy::layer_freeze;
  freeze.free_top_layers = cfg.layers;
  const bool freeze_ok =
      matches(run_baseline(cfg, general, target, nullptr, general_train, freeze));

  Verdict v;
  v.pass = ewc_ok && distill_ok && freeze_ok;
  v.detail = std::string("zero-weight anchoring ") + (ewc_ok ? "exact" : "DIVERGED") +
             ", zero-blend soft targets " + (distill_ok ? "exact" : "DIVERGED") +
             ", all-layers-free freeze " + (freeze_ok ? "exact" : "DIVERGED");
  return v;
}

}  // namespace

int main() {
  struct Check {
    const char* name;
    Verdict (*fn)();
  };
  const Check checks[] = {
      {"zero-forgetting exactness", check_zero_forgetting},
      {"partition invariants", check_partition_invariants},
      {"gradient correctness", check_gradients},
      {"sparsity-accuracy trade-off", check_sparsity_tradeoff},
      {"forgetting direction", check_forgetting_direction},
      {"overfitting robustness", check_overfitting_robustness},
      {"schedule and pruning oracles", check_pruning_oracles},
      {"BLEU reference oracle", check_bleu_oracle},
      {"baseline reductions", check_baseline_reductions},
  };

  int failed = 0;
  for (size_t i = 0; i < std::size(checks); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = checks[i].fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%zu. %-30s %s  [%s; %.1fs]\n", i + 1, checks[i].name,
                v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  if (failed == 0)
    std::printf("acceptance: all 9 criteria passed\n");
  else
    std::printf("acceptance: %d of 9 criteria FAILED\n", failed);
  return failed == 0 ? 0 : 1;
}
