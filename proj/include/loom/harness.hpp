// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loom/adaptation.hpp"
#include "loom/baselines.hpp"
#include "loom/data.hpp"
#include "loom/metrics.hpp"
#include "loom/model.hpp"
#include "loom/trainer.hpp"

namespace loom {

// ===========================================================================
// End-to-end experiments: data generation, the three pipeline stages, and
// held-out evaluation in one deterministic run, plus parameter sweeps and a
// markdown report renderer. The CLI's file-based subcommands wrap the same
// stage functions; this header wires them together in memory.
// ===========================================================================

struct EvalResult {
  double token_accuracy = 0.0;
  double bleu = 0.0;
  double nll = 0.0;  // mean per-token negative log-likelihood
  int64_t sentences = 0;
};

struct EvalOptions {
  int beam = 4;
  double length_penalty = 0.6;
  const BinaryMask* param_mask = nullptr;
  int64_t limit = 0;  // 0 = whole corpus
};

// Decodes the corpus and scores hypotheses against references; also returns
// the hypotheses so callers can compare decode output across pipeline
// stages verbatim.
inline EvalResult evaluate_corpus(GraphCache& cache, const ParamStore& params,
                                  const Corpus& corpus, const EvalOptions& opts,
                                  std::vector<std::vector<int64_t>>* hyps_out = nullptr) {
  LOOM_CHECK(!corpus.empty(), ContractError, "evaluation corpus is empty");
  const size_t n = opts.limit > 0 ? std::min(corpus.size(), static_cast<size_t>(opts.limit))
                                  : corpus.size();
  DecodeOptions dec;
  dec.beam = opts.beam;
  dec.length_penalty = opts.length_penalty;
  dec.param_mask = opts.param_mask;
  ForwardOptions fwd;
  fwd.param_mask = opts.param_mask;

  std::vector<std::vector<int64_t>> refs, hyps;
  refs.reserve(n);
  hyps.reserve(n);
  double nll_weighted = 0.0;
  int64_t tokens = 0;
  for (size_t i = 0; i < n; ++i) {
    refs.push_back(corpus[i].tgt);
    hyps.push_back(translate(cache, params, corpus[i].src, dec));
    const int64_t t = static_cast<int64_t>(corpus[i].tgt.size()) + 1;
    nll_weighted +=
        static_cast<double>(t) * sentence_nll(cache, params, corpus[i].src, corpus[i].tgt, fwd);
    tokens += t;
  }
  EvalResult r;
  r.sentences = static_cast<int64_t>(n);
  r.token_accuracy = token_accuracy(refs, hyps);
  r.bleu = corpus_bleu(refs, hyps);
  r.nll = nll_weighted / static_cast<double>(tokens);
  if (hyps_out != nullptr) *hyps_out = std::move(hyps);
  return r;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  // data
  int64_t vocab = 48;
  int64_t train_sentences = 1024;
  int64_t dev_sentences = 32;
  int64_t test_sentences = 48;
  int64_t min_len = 3;
  int64_t max_len = 10;
  std::string general_task = "copy";
  std::vector<std::string> target_tasks = {"cipher:17"};
  double target_train_noise = 0.0;     // fraction of corrupted target train pairs
  double target_train_fraction = 1.0;  // seeded subsample of target train pairs

  // model (vocab_size and special ids are derived from `vocab` at run time)
  ModelConfig model;

  // optimization
  AdamConfig adam;
  double label_smoothing = 0.0;
  double clip_norm = 0.0;
  int64_t batch_size = 8;

  // stage budgets
  int64_t general_steps = 900;
  PruneSchedule extract_schedule{0, 6, 50, 0.0, 0.5, PruneCurve::cubic};
  int64_t extract_steps = 400;  // >= schedule.last_event_step() to finish the ramp in-loop
  bool multi_domain = true;
  int64_t warmup_steps = 200;
  int64_t tune_steps = 400;
  double keep_fraction = 0.1;
  bool sequential = false;

  // evaluation
  int64_t eval_interval = 100;
  int64_t eval_samples = 16;
  int beam = 4;
  double length_penalty = 0.6;
  int64_t eval_limit = 0;

  uint64_t seed = 1;

  // The model configuration actually used: vocabulary sized for the data's
  // content ids plus the reserved specials.
  ModelConfig resolved_model() const {
    ModelConfig m = model;
    m.vocab_size = model_vocab_for(vocab);
    m.pad_id = pad_id_for(vocab);
    m.bos_id = bos_id_for(vocab);
    m.eos_id = eos_id_for(vocab);
    m.validate();
    return m;
  }

  void validate() const {
    resolved_model();
    LOOM_CHECK(!target_tasks.empty(), ContractError, "at least one target task is required");
    LOOM_CHECK(max_len + 2 <= model.max_len, ContractError,
               "sentence max_len + specials must fit the model's max_len");
    extract_schedule.validate();
    LOOM_CHECK(extract_steps > extract_schedule.last_event_step(), ContractError,
               "extract_steps must exceed the final pruning event");
    LOOM_CHECK(keep_fraction > 0.0 && keep_fraction < 1.0, ContractError,
               "keep_fraction must lie in (0,1)");
    LOOM_CHECK(0.0 <= target_train_noise && target_train_noise <= 1.0, ContractError,
               "target_train_noise must lie in [0, 1]");
    LOOM_CHECK(0.0 < target_train_fraction && target_train_fraction <= 1.0, ContractError,
               "target_train_fraction must lie in (0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const PruneSchedule& s) {
  j = {{"start_step", s.start_step},
       {"events", s.events},
       {"interval", s.interval},
       {"initial_sparsity", s.initial_sparsity},
       {"final_sparsity", s.final_sparsity},
       {"curve", prune_curve_name(s.curve)}};
}

inline void from_json(const nlohmann::json& j, PruneSchedule& s) {
  PruneSchedule d;
  s.start_step = j.value("start_step", d.start_step);
  s.events = j.value("events", d.events);
  s.interval = j.value("interval", d.interval);
  s.initial_sparsity = j.value("initial_sparsity", d.initial_sparsity);
  s.final_sparsity = j.value("final_sparsity", d.final_sparsity);
  s.curve = prune_curve_from_name(j.value("curve", std::string(prune_curve_name(d.curve))));
}

inline void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = {{"lr", c.lr},   {"beta1", c.beta1},
       {"beta2", c.beta2}, {"eps", c.eps},
       {"schedule", lr_schedule_name(c.schedule)}, {"warmup_steps", c.warmup_steps}};
}

inline void from_json(const nlohmann::json& j, AdamConfig& c) {
  AdamConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.schedule = lr_schedule_from_name(j.value("schedule", std::string(lr_schedule_name(d.schedule))));
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"vocab", c.vocab},
       {"train_sentences", c.train_sentences},
       {"dev_sentences", c.dev_sentences},
       {"test_sentences", c.test_sentences},
       {"min_len", c.min_len},
       {"max_len", c.max_len},
       {"general_task", c.general_task},
       {"target_tasks", c.target_tasks},
       {"target_train_noise", c.target_train_noise},
       {"target_train_fraction", c.target_train_fraction},
       {"model", c.model},
       {"adam", c.adam},
       {"label_smoothing", c.label_smoothing},
       {"clip_norm", c.clip_norm},
       {"batch_size", c.batch_size},
       {"general_steps", c.general_steps},
       {"extract_schedule", c.extract_schedule},
       {"extract_steps", c.extract_steps},
       {"multi_domain", c.multi_domain},
       {"warmup_steps", c.warmup_steps},
       {"tune_steps", c.tune_steps},
       {"keep_fraction", c.keep_fraction},
       {"sequential", c.sequential},
       {"eval_interval", c.eval_interval},
       {"eval_samples", c.eval_samples},
       {"beam", c.beam},
       {"length_penalty", c.length_penalty},
       {"eval_limit", c.eval_limit},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.vocab = j.value("vocab", d.vocab);
  c.train_sentences = j.value("train_sentences", d.train_sentences);
  c.dev_sentences = j.value("dev_sentences", d.dev_sentences);
  c.test_sentences = j.value("test_sentences", d.test_sentences);
  c.min_len = j.value("min_len", d.min_len);
  c.max_len = j.value("max_len", d.max_len);
  c.general_task = j.value("general_task", d.general_task);
  c.target_tasks = j.value("target_tasks", d.target_tasks);
  c.target_train_noise = j.value("target_train_noise", d.target_train_noise);
  c.target_train_fraction = j.value("target_train_fraction", d.target_train_fraction);
  c.model = j.value("model", d.model);
  c.adam = j.value("adam", d.adam);
  c.label_smoothing = j.value("label_smoothing", d.label_smoothing);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.general_steps = j.value("general_steps", d.general_steps);
  c.extract_schedule = j.value("extract_schedule", d.extract_schedule);
  c.extract_steps = j.value("extract_steps", d.extract_steps);
  c.multi_domain = j.value("multi_domain", d.multi_domain);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.tune_steps = j.value("tune_steps", d.tune_steps);
  c.keep_fraction = j.value("keep_fraction", d.keep_fraction);
  c.sequential = j.value("sequential", d.sequential);
  c.eval_interval = j.value("eval_interval", d.eval_interval);
  c.eval_samples = j.value("eval_samples", d.eval_samples);
  c.beam = j.value("beam", d.beam);
  c.length_penalty = j.value("length_penalty", d.length_penalty);
  c.eval_limit = j.value("eval_limit", d.eval_limit);
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

inline constexpr uint64_t kGeneralDataStream = 21;
inline constexpr uint64_t kTargetDataStreamBase = 100;
inline constexpr uint64_t kGeneralTrainStream = 11;
inline constexpr uint64_t kExtractStream = 12;
inline constexpr uint64_t kWarmupStreamBase = 300;
inline constexpr uint64_t kTuneStreamBase = 500;
inline constexpr uint64_t kSubsampleStreamBase = 700;
inline constexpr uint64_t kBaselineStream = 900;

struct ExperimentResult {
  nlohmann::json report;  // everything serializable about the run
  ParamStore params;
  MaskRegistry registry;
  ModelConfig model;
};

namespace detail {

inline nlohmann::json eval_json(const EvalResult& e) {
  return {{"token_accuracy", e.token_accuracy},
          {"bleu", e.bleu},
          {"nll", e.nll},
          {"sentences", e.sentences}};
}

}  // namespace detail

struct ExperimentData {
  Dataset general;
  std::vector<Dataset> targets;
};

// Materializes every corpus an experiment uses, including the target train
// subsample and noise transforms, so one-shot runs, staged CLI runs, and
// on-disk datasets all see identical pairs.
inline ExperimentData build_datasets(const ExperimentConfig& config) {
  ExperimentData data;
  data.general = generate_dataset(
      "general", TaskSpec::parse(config.general_task), config.vocab, config.train_sentences,
      config.dev_sentences, config.test_sentences, config.min_len, config.max_len,
      mix_seed(config.seed, kGeneralDataStream));
  for (size_t k = 0; k < config.target_tasks.size(); ++k) {
    Dataset d = generate_dataset(
        config.target_tasks[k], TaskSpec::parse(config.target_tasks[k]), config.vocab,
        config.train_sentences, config.dev_sentences, config.test_sentences, config.min_len,
        config.max_len, mix_seed(config.seed, kTargetDataStreamBase + k));
    if (config.target_train_fraction < 1.0)
      d.train = subsample_corpus(d.train, config.target_train_fraction,
                                 mix_seed(config.seed, kSubsampleStreamBase + k));
    if (config.target_train_noise > 0.0)
      d.train = corrupt_corpus(d.train, config.vocab, config.target_train_noise,
                               mix_seed(config.seed, kTargetDataStreamBase + k));
    data.targets.push_back(std::move(d));
  }
  return data;
}

// The training options every pipeline stage derives from the experiment
// config; only the seed stream, step budget, and dev split vary per stage.
inline TrainOptions stage_train_options(const ExperimentConfig& config, uint64_t stream,
                                        int64_t steps, const Corpus* dev) {
  TrainOptions t;
  t.steps = steps;
  t.batch_size = config.batch_size;
  t.seed = mix_seed(config.seed, stream);
  t.clip_norm = config.clip_norm;
  t.eval_interval = config.eval_interval;
  t.eval_samples = config.eval_samples;
  t.dev = dev;
  return t;
}

// Runs the whole pipeline: general training, sub-network extraction, one
// adaptation per target task. The report carries per-stage summaries, a
// phase-by-phase evaluation matrix, and exact decode-stability verdicts for
// every domain that existed before a later adaptation ran.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const ModelConfig model_cfg = config.resolved_model();

  ExperimentData data = build_datasets(config);
  const Dataset& general_data = data.general;
  const std::vector<Dataset>& target_data = data.targets;

  ParamStore params = init_params(model_cfg, config.seed);
  Adam adam(params, config.adam);
  GraphCache cache(model_cfg, config.label_smoothing, 0.0);

  nlohmann::json stages = nlohmann::json::array();
  nlohmann::json evals = nlohmann::json::array();
  EvalOptions eval_opts;
  eval_opts.beam = config.beam;
  eval_opts.length_penalty = config.length_penalty;
  eval_opts.limit = config.eval_limit;

  auto base_train = [&](uint64_t stream, int64_t steps, const Corpus* dev) {
    return stage_train_options(config, stream, steps, dev);
  };

  // Stage 1: dense general training.
  const TrainResult general_train =
      train_general(cache, params, adam, general_data.train,
                    base_train(kGeneralTrainStream, config.general_steps, &general_data.dev));
  stages.push_back({{"stage", "train-general"},
                    {"steps", config.general_steps},
                    {"final_loss", general_train.final_loss},
                    {"optimizer_steps", adam.step_count()}});
  {
    EvalOptions dense = eval_opts;
    evals.push_back({{"phase", "after-general"},
                     {"domain", "general"},
                     {"masked", false},
                     {"result", detail::eval_json(evaluate_corpus(cache, params,
                                                                  general_data.test, dense))}});
  }

  // Stage 2: gradual pruning while training continues.
  ExtractOptions extract_opts;
  extract_opts.schedule = config.extract_schedule;
  extract_opts.train = base_train(kExtractStream, config.extract_steps, &general_data.dev);
  extract_opts.multi_domain = config.multi_domain;
  ExtractResult extraction =
      extract_general_subnet(cache, params, adam, general_data.train, extract_opts);
  MaskRegistry& registry = extraction.registry;
  const int general_domain = registry.find_domain("general");
  stages.push_back({{"stage", "extract-subnet"},
                    {"steps", config.extract_steps},
                    {"final_loss", extraction.train.final_loss},
                    {"sparsity", extraction.sparsity},
                    {"general_owned", extraction.general_owned},
                    {"optimizer_steps", adam.step_count()}});

  // Decode snapshots per existing domain: re-checked after later stages.
  struct Snapshot {
    std::string domain;
    int ordinal;
    const Corpus* test;
    std::vector<std::vector<int64_t>> hyps;
    EvalResult eval;
  };
  std::vector<Snapshot> snapshots;
  auto snapshot_domain = [&](const std::string& name, int ordinal, const Corpus& test) {
    Snapshot s;
    s.domain = name;
    s.ordinal = ordinal;
    s.test = &test;
    const BinaryMask mask = registry.inference_mask(ordinal);
    EvalOptions m = eval_opts;
    m.param_mask = &mask;
    s.eval = evaluate_corpus(cache, params, test, m, &s.hyps);
    return s;
  };

  snapshots.push_back(snapshot_domain("general", general_domain, general_data.test));
  evals.push_back({{"phase", "after-extract"},
                   {"domain", "general"},
                   {"masked", true},
                   {"result", detail::eval_json(snapshots.back().eval)}});

  // How the general sub-network does on each target before any adaptation:
  // the reference point target adaptations are judged against.
  {
    const BinaryMask mask = registry.inference_mask(general_domain);
    EvalOptions m = eval_opts;
    m.param_mask = &mask;
    for (size_t k = 0; k < target_data.size(); ++k)
      evals.push_back(
          {{"phase", "after-extract"},
           {"domain", config.target_tasks[k]},
           {"masked", true},
           {"evaluated_with", "general"},
           {"result", detail::eval_json(evaluate_corpus(cache, params, target_data[k].test, m))}});
  }

  // Stage 3: adapt each target.
  nlohmann::json stability = nlohmann::json::array();
  std::vector<std::string> adapted;
  for (size_t k = 0; k < target_data.size(); ++k) {
    AdaptOptions a;
    a.domain = config.target_tasks[k];
    a.ancestors = {"general"};
    if (config.sequential)
      for (const std::string& earlier : adapted) a.ancestors.push_back(earlier);
    a.keep_fraction = config.keep_fraction;
    a.warmup = base_train(kWarmupStreamBase + k, config.warmup_steps, &target_data[k].dev);
    a.tune = base_train(kTuneStreamBase + k, config.tune_steps, &target_data[k].dev);
    const AdaptResult adapt =
        adapt_domain(cache, params, registry, adam, target_data[k].train, a);
    adapted.push_back(a.domain);
    stages.push_back({{"stage", "adapt"},
                      {"domain", a.domain},
                      {"ancestors", a.ancestors},
                      {"warmup_steps", config.warmup_steps},
                      {"tune_steps", config.tune_steps},
                      {"owned", adapt.owned},
                      {"warmup_final_loss", adapt.warmup.final_loss},
                      {"tune_final_loss", adapt.tune.final_loss},
                      {"optimizer_steps", adam.step_count()}});

    const std::string phase = "after-" + a.domain;
    // Earlier domains must decode exactly as they did when they were
    // created.
    for (const Snapshot& s : snapshots) {
      std::vector<std::vector<int64_t>> hyps_now;
      const BinaryMask mask = registry.inference_mask(s.ordinal);
      EvalOptions m = eval_opts;
      m.param_mask = &mask;
      const EvalResult now = evaluate_corpus(cache, params, *s.test, m, &hyps_now);
      stability.push_back({{"phase", phase},
                           {"domain", s.domain},
                           {"decode_identical", hyps_now == s.hyps},
                           {"token_accuracy_before", s.eval.token_accuracy},
                           {"token_accuracy_now", now.token_accuracy}});
      evals.push_back({{"phase", phase},
                       {"domain", s.domain},
                       {"masked", true},
                       {"result", detail::eval_json(now)}});
    }
    snapshots.push_back(snapshot_domain(a.domain, adapt.ordinal, target_data[k].test));
    evals.push_back({{"phase", phase},
                     {"domain", a.domain},
                     {"masked", true},
                     {"result", detail::eval_json(snapshots.back().eval)}});
  }

  ExperimentResult result;
  result.model = model_cfg;
  result.report = {{"type", "experiment"},
                   {"config", config},
                   {"stages", stages},
                   {"evals", evals},
                   {"decode_stability", stability},
                   {"ownership", registry.summary()}};
  result.params = std::move(params);
  result.registry = std::move(registry);
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace detail {

// Pulls one eval result out of the report matrix.
inline nlohmann::json find_eval(const nlohmann::json& report, const std::string& phase,
                                const std::string& domain) {
  for (const auto& e : report.at("evals"))
    if (e.at("phase") == phase && e.at("domain") == domain && !e.contains("evaluated_with"))
      return e.at("result");
  return nlohmann::json();
}

inline nlohmann::json final_domain_eval(const nlohmann::json& report, const std::string& domain) {
  nlohmann::json last;
  for (const auto& e : report.at("evals"))
    if (e.at("domain") == domain && e.value("masked", false) && !e.contains("evaluated_with"))
      last = e.at("result");
  return last;
}

}  // namespace detail

// Re-runs the experiment across final sparsity values.
inline nlohmann::json sweep_sparsity(const ExperimentConfig& base,
                                     const std::vector<double>& values) {
  LOOM_CHECK(!values.empty(), ContractError, "sweep needs at least one value");
  nlohmann::json rows = nlohmann::json::array();
  for (double v : values) {
    ExperimentConfig cfg = base;
    cfg.extract_schedule.final_sparsity = v;
    const ExperimentResult run = run_experiment(cfg);
    nlohmann::json row = {{"final_sparsity", v},
                          {"general_after_extract",
                           detail::find_eval(run.report, "after-extract", "general")}};
    for (const std::string& t : base.target_tasks)
      row["target:" + t] = detail::final_domain_eval(run.report, t);
    row["general_final"] = detail::final_domain_eval(run.report, "general");
    rows.push_back(row);
  }
  return {{"type", "sweep"}, {"axis", "final_sparsity"}, {"config", base}, {"rows", rows}};
}

// Low-resource sweep over the first configured target task: subsamples its
// training split to each fraction and reports both the partition pipeline and
// plain fine-tuning, each starting from an identically trained general model.
// Two rows per fraction.
inline nlohmann::json sweep_fraction(const ExperimentConfig& base,
                                     const std::vector<double>& fractions) {
  LOOM_CHECK(!fractions.empty(), ContractError, "sweep needs at least one value");
  for (double f : fractions)
    LOOM_CHECK(0.0 < f && f <= 1.0, ContractError, "train fractions must lie in (0, 1]");
  base.validate();
  const std::string task = base.target_tasks.front();

  // The fine-tuning rows share one general model, trained with the same seed
  // streams the pipeline uses so both strategies start from the same weights.
  const ModelConfig model_cfg = base.resolved_model();
  const Dataset general_data = generate_dataset(
      "general", TaskSpec::parse(base.general_task), base.vocab, base.train_sentences,
      base.dev_sentences, base.test_sentences, base.min_len, base.max_len,
      mix_seed(base.seed, kGeneralDataStream));
  const Dataset target_data = generate_dataset(
      task, TaskSpec::parse(task), base.vocab, base.train_sentences, base.dev_sentences,
      base.test_sentences, base.min_len, base.max_len,
      mix_seed(base.seed, kTargetDataStreamBase));

  ParamStore params = init_params(model_cfg, base.seed);
  Adam adam(params, base.adam);
  GraphCache cache(model_cfg, base.label_smoothing, 0.0);
  train_general(
      cache, params, adam, general_data.train,
      stage_train_options(base, kGeneralTrainStream, base.general_steps, &general_data.dev));
  ExtractOptions extract_opts;
  extract_opts.schedule = base.extract_schedule;
  extract_opts.train =
      stage_train_options(base, kExtractStream, base.extract_steps, &general_data.dev);
  extract_opts.multi_domain = base.multi_domain;
  extract_general_subnet(cache, params, adam, general_data.train, extract_opts);
  const int64_t adapt_start = adam.step_count();

  EvalOptions eval_opts;
  eval_opts.beam = base.beam;
  eval_opts.length_penalty = base.length_penalty;
  eval_opts.limit = base.eval_limit;

  nlohmann::json rows = nlohmann::json::array();
  for (double f : fractions) {
    ExperimentConfig cfg = base;
    cfg.target_tasks = {task};
    cfg.target_train_fraction = f;
    const ExperimentResult run = run_experiment(cfg);
    rows.push_back({{"train_fraction", f},
                    {"strategy", "prune-tune"},
                    {"general", detail::final_domain_eval(run.report, "general")},
                    {"target", detail::final_domain_eval(run.report, task)}});

    BaselineOptions bo;
    bo.strategy = BaselineStrategy::finetune;
    bo.train = stage_train_options(base, kBaselineStream, base.warmup_steps + base.tune_steps,
                                   &target_data.dev);
    bo.adam = base.adam;
    bo.start_step = adapt_start;
    bo.label_smoothing = base.label_smoothing;
    const Corpus sub =
        f < 1.0 ? subsample_corpus(target_data.train, f, mix_seed(base.seed, kSubsampleStreamBase))
                : target_data.train;
    const BaselineRun ft =
        run_baseline(model_cfg, params, sub, &target_data.dev, general_data.train, bo);
    GraphCache ft_cache(ft.cfg, base.label_smoothing, 0.0);
    rows.push_back(
        {{"train_fraction", f},
         {"strategy", "finetune"},
         {"general",
          detail::eval_json(evaluate_corpus(ft_cache, ft.params, general_data.test, eval_opts))},
         {"target",
          detail::eval_json(evaluate_corpus(ft_cache, ft.params, target_data.test, eval_opts))}});
  }
  return {{"type", "sweep"}, {"axis", "train_fraction"}, {"config", base}, {"rows", rows}};
}

// CSV for the low-resource sweep: one row per (fraction, strategy).
inline std::string render_fraction_csv(const nlohmann::json& sweep) {
  LOOM_CHECK(sweep.value("axis", "") == "train_fraction", ContractError,
             "not a train-fraction sweep report");
  std::ostringstream out;
  out << "train_fraction,strategy,general_token_accuracy,general_bleu,target_token_accuracy,"
         "target_bleu\n";
  for (const auto& row : sweep.at("rows")) {
    out << row.at("train_fraction").get<double>() << ',' << row.at("strategy").get<std::string>();
    for (const char* side : {"general", "target"}) {
      const auto& e = row.at(side);
      out << ',' << e.at("token_accuracy").get<double>() << ',' << e.at("bleu").get<double>();
    }
    out << '\n';
  }
  return out.str();
}

// Re-runs the sequential pipeline under different target orders (cyclic
// rotations of the configured list unless explicit orders are given).
inline nlohmann::json sweep_order(const ExperimentConfig& base,
                                  std::vector<std::vector<std::string>> orders = {}) {
  if (orders.empty()) {
    std::vector<std::string> tasks = base.target_tasks;
    for (size_t r = 0; r < tasks.size(); ++r) {
      orders.push_back(tasks);
      std::rotate(tasks.begin(), tasks.begin() + 1, tasks.end());
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& order : orders) {
    ExperimentConfig cfg = base;
    cfg.target_tasks = order;
    cfg.sequential = true;
    const ExperimentResult run = run_experiment(cfg);
    nlohmann::json row = {{"order", order}};
    for (const std::string& t : order)
      row["target:" + t] = detail::final_domain_eval(run.report, t);
    row["general_final"] = detail::final_domain_eval(run.report, "general");
    rows.push_back(row);
  }
  return {{"type", "sweep"}, {"axis", "order"}, {"config", base}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_num(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  if (v.is_number_float()) {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << v.get<double>();
    return out.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::string metrics_cells(const nlohmann::json& result) {
  if (result.is_null() || result.empty()) return "- | - | -";
  return fmt_num(result.value("token_accuracy", nlohmann::json())) + " | " +
         fmt_num(result.value("bleu", nlohmann::json())) + " | " +
         fmt_num(result.value("nll", nlohmann::json()));
}

}  // namespace detail

// Renders an experiment or sweep report as markdown.
inline std::string render_report_markdown(const nlohmann::json& report) {
  std::ostringstream out;
  const std::string type = report.value("type", std::string());
  if (type == "experiment") {
    out << "# Adaptation run\n\n## Stages\n\n";
    out << "| stage | domain | steps | final loss | notes |\n";
    out << "| --- | --- | --- | --- | --- |\n";
    for (const auto& s : report.at("stages")) {
      std::string notes;
      if (s.contains("sparsity"))
        notes = "sparsity " + detail::fmt_num(s.at("sparsity")) + ", owned " +
                s.at("general_owned").dump();
      else if (s.contains("owned"))
        notes = "owned " + s.at("owned").dump();
      out << "| " << s.value("stage", std::string()) << " | " << s.value("domain", std::string("-"))
          << " | " << detail::fmt_num(s.value("steps", nlohmann::json()))
          << " | " << detail::fmt_num(s.value("final_loss", nlohmann::json())) << " | " << notes
          << " |\n";
    }
    out << "\n## Evaluations\n\n";
    out << "| phase | domain | masked | token acc | bleu | nll |\n";
    out << "| --- | --- | --- | --- | --- | --- |\n";
    for (const auto& e : report.at("evals")) {
      std::string domain = e.value("domain", std::string());
      if (e.contains("evaluated_with"))
        domain += " (via " + e.at("evaluated_with").get<std::string>() + ")";
      out << "| " << e.value("phase", std::string()) << " | " << domain << " | "
          << (e.value("masked", false) ? "yes" : "no") << " | "
          << detail::metrics_cells(e.at("result")) << " |\n";
    }
    if (report.contains("decode_stability") && !report.at("decode_stability").empty()) {
      out << "\n## Decode stability\n\n";
      out << "| phase | domain | decode identical | acc before | acc now |\n";
      out << "| --- | --- | --- | --- | --- |\n";
      for (const auto& s : report.at("decode_stability"))
        out << "| " << s.value("phase", std::string()) << " | " << s.value("domain", std::string())
            << " | " << (s.value("decode_identical", false) ? "yes" : "NO") << " | "
            << detail::fmt_num(s.value("token_accuracy_before", nlohmann::json())) << " | "
            << detail::fmt_num(s.value("token_accuracy_now", nlohmann::json())) << " |\n";
    }
    return out.str();
  }
  if (type == "sweep") {
    const std::string axis = report.value("axis", std::string("value"));
    out << "# Sweep over " << axis << "\n\n";
    // Collect the union of row keys for stable columns.
    std::vector<std::string> keys;
    for (const auto& row : report.at("rows"))
      for (const auto& [k, v] : row.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    const auto lead = std::find(keys.begin(), keys.end(), axis);
    if (lead != keys.end()) std::rotate(keys.begin(), lead, lead + 1);
    out << "|";
    for (const auto& k : keys) out << " " << k << " |";
    out << "\n|";
    for (size_t i = 0; i < keys.size(); ++i) out << " --- |";
    out << "\n";
    for (const auto& row : report.at("rows")) {
      out << "|";
      for (const auto& k : keys) {
        if (!row.contains(k)) {
          out << " - |";
        } else if (row.at(k).is_object()) {
          out << " acc " << detail::fmt_num(row.at(k).value("token_accuracy", nlohmann::json()))
              << " / bleu " << detail::fmt_num(row.at(k).value("bleu", nlohmann::json())) << " |";
        } else {
          out << " " << detail::fmt_num(row.at(k)) << " |";
        }
      }
      out << "\n";
    }
    return out.str();
  }
  throw DataError("report has unknown type '" + type + "'");
}

}  // namespace loom
