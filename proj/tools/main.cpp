// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "loom/loom.hpp"

namespace fs = std::filesystem;

namespace {

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (c == ':' || c == '/') c = '-';
  return out;
}

loom::ExperimentConfig read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw loom::IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw loom::DataError("bad config JSON in '" + path.string() + "': " + e.what());
  }
  return j.get<loom::ExperimentConfig>();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw loom::IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw loom::IoError("short write to '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_log_csv(const fs::path& path, const std::vector<loom::TrainLogEntry>& log) {
  std::ostringstream out;
  out << "step,loss,lr,dev_accuracy,sparsity,pruned\n";
  for (const loom::TrainLogEntry& e : log) {
    out << e.step << ',' << e.loss << ',' << e.lr << ',';
    if (e.dev_accuracy >= 0.0) out << e.dev_accuracy;
    out << ',' << e.sparsity << ',' << e.pruned << '\n';
  }
  write_text(path, out.str());
}

void print_eval(const std::string& label, const loom::EvalResult& e) {
  std::cout << std::fixed << std::setprecision(4) << label << ": token_accuracy=" << e.token_accuracy
            << " bleu=" << e.bleu << " nll=" << e.nll << " sentences=" << e.sentences << "\n";
}

// ---------------------------------------------------------------------------
// Training state on disk: one checkpoint holding the parameters plus the
// optimizer moments under reserved "opt.m." / "opt.v." names, so a staged
// run resumes bit-exactly where a single-process run would be.
// ---------------------------------------------------------------------------

constexpr const char* kMomentM = "opt.m.";
constexpr const char* kMomentV = "opt.v.";

struct TrainState {
  loom::ParamStore params;
  loom::ParamStore m, v;
  int64_t optimizer_steps = 0;
  nlohmann::json extra;
};

void save_state(const fs::path& path, const loom::ParamStore& params, const loom::Adam& adam,
                nlohmann::json extra) {
  loom::ParamStore combined = params;
  for (size_t i = 0; i < params.size(); ++i) {
    combined.add(kMomentM + params.name(i), adam.first_moments().at(i), params.tag(i));
    combined.add(kMomentV + params.name(i), adam.second_moments().at(i), params.tag(i));
  }
  extra["optimizer_steps"] = adam.step_count();
  loom::save_checkpoint(path, combined, extra);
}

TrainState load_state(const fs::path& path) {
  const loom::Checkpoint ckpt = loom::load_checkpoint(path);
  TrainState state;
  state.extra = ckpt.extra;
  state.optimizer_steps = ckpt.extra.value("optimizer_steps", int64_t{0});
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const std::string& name = ckpt.params.name(i);
    if (name.rfind(kMomentM, 0) == 0)
      state.m.add(name.substr(std::string(kMomentM).size()), ckpt.params.at(i), ckpt.params.tag(i));
    else if (name.rfind(kMomentV, 0) == 0)
      state.v.add(name.substr(std::string(kMomentV).size()), ckpt.params.at(i), ckpt.params.tag(i));
    else
      state.params.add(name, ckpt.params.at(i), ckpt.params.tag(i));
  }
  return state;
}

// Parameters-only load for evaluation; accepts both plain and stateful files.
loom::ParamStore load_params_only(const fs::path& path, nlohmann::json* extra = nullptr) {
  TrainState state = load_state(path);
  if (extra != nullptr) *extra = state.extra;
  return std::move(state.params);
}

fs::path pick_existing(const std::vector<fs::path>& candidates, const std::string& what) {
  for (const fs::path& p : candidates)
    if (fs::exists(p)) return p;
  std::string tried;
  for (const fs::path& p : candidates) tried += (tried.empty() ? "" : ", ") + p.string();
  throw loom::IoError("no " + what + " found (tried " + tried + ")");
}

struct Ctx {
  loom::ExperimentConfig cfg;
  bool config_given = false;
  fs::path out;
};

// Stage commands started mid-pipeline inherit the config stored in the
// checkpoint unless the user passed one explicitly.
void adopt_checkpoint_config(Ctx& ctx, const nlohmann::json& extra) {
  if (!ctx.config_given && extra.contains("config"))
    ctx.cfg = extra.at("config").get<loom::ExperimentConfig>();
}

nlohmann::json base_extra(const Ctx& ctx, const std::string& stage) {
  return {{"stage", stage}, {"config", ctx.cfg}, {"model", ctx.cfg.resolved_model()}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const Ctx& ctx) {
  ctx.cfg.validate();
  const loom::ExperimentData data = loom::build_datasets(ctx.cfg);
  const fs::path root = ctx.out / "data";
  loom::save_dataset(root / "general", data.general);
  std::cout << "wrote " << (root / "general").string() << " (task " << ctx.cfg.general_task
            << ", " << data.general.train.size() << " train pairs)\n";
  for (size_t k = 0; k < data.targets.size(); ++k) {
    const fs::path dir = root / sanitize(ctx.cfg.target_tasks[k]);
    loom::save_dataset(dir, data.targets[k]);
    std::cout << "wrote " << dir.string() << " (task " << ctx.cfg.target_tasks[k] << ", "
              << data.targets[k].train.size() << " train pairs)\n";
  }
  return 0;
}

int cmd_train_general(const Ctx& ctx) {
  ctx.cfg.validate();
  const loom::ModelConfig model_cfg = ctx.cfg.resolved_model();
  const loom::ExperimentData data = loom::build_datasets(ctx.cfg);
  loom::ParamStore params = loom::init_params(model_cfg, ctx.cfg.seed);
  loom::Adam adam(params, ctx.cfg.adam);
  loom::GraphCache cache(model_cfg, ctx.cfg.label_smoothing, 0.0);

  const loom::TrainResult result = loom::train_general(
      cache, params, adam, data.general.train,
      loom::stage_train_options(ctx.cfg, loom::kGeneralTrainStream, ctx.cfg.general_steps,
                                &data.general.dev));
  std::cout << "trained general model for " << ctx.cfg.general_steps
            << " steps, final loss " << std::fixed << std::setprecision(4) << result.final_loss
            << "\n";

  loom::EvalOptions eval_opts;
  eval_opts.beam = ctx.cfg.beam;
  eval_opts.length_penalty = ctx.cfg.length_penalty;
  eval_opts.limit = ctx.cfg.eval_limit;
  print_eval("general test", loom::evaluate_corpus(cache, params, data.general.test, eval_opts));

  save_state(ctx.out / "general.ckpt", params, adam, base_extra(ctx, "train-general"));
  write_log_csv(ctx.out / "train-general-log.csv", result.log);
  std::cout << "wrote " << (ctx.out / "general.ckpt").string() << "\n";
  return 0;
}

int cmd_extract_subnet(Ctx& ctx, const std::string& checkpoint) {
  const fs::path in_path = checkpoint.empty()
                               ? pick_existing({ctx.out / "general.ckpt"}, "general checkpoint")
                               : fs::path(checkpoint);
  TrainState state = load_state(in_path);
  adopt_checkpoint_config(ctx, state.extra);
  ctx.cfg.validate();
  const loom::ModelConfig model_cfg = ctx.cfg.resolved_model();
  const loom::ExperimentData data = loom::build_datasets(ctx.cfg);

  loom::Adam adam(state.params, ctx.cfg.adam);
  adam.set_step_count(state.optimizer_steps);
  if (state.m.size() > 0) adam.restore_moments(state.m, state.v);
  loom::GraphCache cache(model_cfg, ctx.cfg.label_smoothing, 0.0);

  loom::ExtractOptions opts;
  opts.schedule = ctx.cfg.extract_schedule;
  opts.train = loom::stage_train_options(ctx.cfg, loom::kExtractStream, ctx.cfg.extract_steps,
                                         &data.general.dev);
  opts.multi_domain = ctx.cfg.multi_domain;
  loom::ExtractResult result =
      loom::extract_general_subnet(cache, state.params, adam, data.general.train, opts);
  std::cout << "extracted general sub-network: sparsity " << std::fixed << std::setprecision(4)
            << result.sparsity << ", " << result.general_owned << " elements owned\n";

  const int general = result.registry.find_domain("general");
  const loom::BinaryMask mask = result.registry.inference_mask(general);
  loom::EvalOptions eval_opts;
  eval_opts.beam = ctx.cfg.beam;
  eval_opts.length_penalty = ctx.cfg.length_penalty;
  eval_opts.limit = ctx.cfg.eval_limit;
  eval_opts.param_mask = &mask;
  std::vector<std::vector<int64_t>> hyps;
  const loom::EvalResult eval =
      loom::evaluate_corpus(cache, state.params, data.general.test, eval_opts, &hyps);
  print_eval("general test (masked)", eval);

  nlohmann::json extra = base_extra(ctx, "extract-subnet");
  extra["sparsity"] = result.sparsity;
  extra["general_owned"] = result.general_owned;
  extra["snapshots"] = nlohmann::json::array(
      {{{"domain", "general"}, {"ordinal", general}, {"hyps", hyps}}});
  save_state(ctx.out / "extracted.ckpt", state.params, adam, extra);
  loom::save_masks(ctx.out / "extracted.masks", result.registry);
  write_log_csv(ctx.out / "extract-log.csv", result.train.log);
  std::cout << "wrote " << (ctx.out / "extracted.ckpt").string() << " and "
            << (ctx.out / "extracted.masks").string() << "\n";
  return 0;
}

int cmd_adapt(Ctx& ctx, const std::string& domain, bool sequential, const std::string& checkpoint,
              const std::string& masks) {
  const fs::path in_ckpt =
      checkpoint.empty()
          ? pick_existing({ctx.out / "adapted.ckpt", ctx.out / "extracted.ckpt"}, "checkpoint")
          : fs::path(checkpoint);
  const fs::path in_masks =
      masks.empty()
          ? pick_existing({ctx.out / "adapted.masks", ctx.out / "extracted.masks"}, "masks file")
          : fs::path(masks);
  TrainState state = load_state(in_ckpt);
  adopt_checkpoint_config(ctx, state.extra);
  if (sequential) ctx.cfg.sequential = true;
  ctx.cfg.validate();
  loom::MaskRegistry registry = loom::load_masks(in_masks);
  registry.check_congruent(state.params);

  const loom::ModelConfig model_cfg = ctx.cfg.resolved_model();
  const loom::ExperimentData data = loom::build_datasets(ctx.cfg);
  loom::Adam adam(state.params, ctx.cfg.adam);
  adam.set_step_count(state.optimizer_steps);
  if (state.m.size() > 0) adam.restore_moments(state.m, state.v);
  loom::GraphCache cache(model_cfg, ctx.cfg.label_smoothing, 0.0);

  loom::EvalOptions eval_opts;
  eval_opts.beam = ctx.cfg.beam;
  eval_opts.length_penalty = ctx.cfg.length_penalty;
  eval_opts.limit = ctx.cfg.eval_limit;

  // Which targets this invocation adapts.
  std::vector<size_t> todo;
  for (size_t k = 0; k < ctx.cfg.target_tasks.size(); ++k) {
    const std::string& task = ctx.cfg.target_tasks[k];
    if (!domain.empty() && task != domain) continue;
    if (registry.find_domain(task) >= 0) {
      std::cout << "domain '" << task << "' already adapted, skipping\n";
      continue;
    }
    todo.push_back(k);
  }
  if (!domain.empty() && todo.empty() && registry.find_domain(domain) < 0)
    throw loom::ContractError("domain '" + domain + "' is not in the configured target tasks");

  // Snapshots from earlier stages let this invocation verify that nothing it
  // does changes how existing domains decode.
  struct Snapshot {
    std::string domain;
    int ordinal;
    std::vector<std::vector<int64_t>> hyps;
  };
  std::vector<Snapshot> snapshots;
  for (const auto& s : state.extra.value("snapshots", nlohmann::json::array()))
    snapshots.push_back({s.at("domain").get<std::string>(), s.at("ordinal").get<int>(),
                         s.at("hyps").get<std::vector<std::vector<int64_t>>>()});
  auto test_corpus_for = [&](const std::string& name) -> const loom::Corpus& {
    if (name == "general") return data.general.test;
    for (size_t k = 0; k < ctx.cfg.target_tasks.size(); ++k)
      if (ctx.cfg.target_tasks[k] == name) return data.targets[k].test;
    throw loom::ContractError("snapshot domain '" + name + "' is not in the config");
  };

  nlohmann::json stages = nlohmann::json::array();
  nlohmann::json evals = nlohmann::json::array();
  nlohmann::json stability = nlohmann::json::array();

  for (size_t k : todo) {
    const std::string& task = ctx.cfg.target_tasks[k];
    loom::AdaptOptions a;
    a.domain = task;
    a.ancestors = {"general"};
    if (ctx.cfg.sequential)
      for (int d = 0; d < registry.domain_count(); ++d)
        if (registry.domain(d).name != "general") a.ancestors.push_back(registry.domain(d).name);
    a.keep_fraction = ctx.cfg.keep_fraction;
    a.warmup = loom::stage_train_options(ctx.cfg, loom::kWarmupStreamBase + k,
                                         ctx.cfg.warmup_steps, &data.targets[k].dev);
    a.tune = loom::stage_train_options(ctx.cfg, loom::kTuneStreamBase + k, ctx.cfg.tune_steps,
                                       &data.targets[k].dev);
    const loom::AdaptResult result =
        loom::adapt_domain(cache, state.params, registry, adam, data.targets[k].train, a);
    std::cout << "adapted '" << task << "': " << result.owned << " elements owned\n";
    stages.push_back({{"stage", "adapt"},
                      {"domain", task},
                      {"ancestors", a.ancestors},
                      {"warmup_steps", ctx.cfg.warmup_steps},
                      {"tune_steps", ctx.cfg.tune_steps},
                      {"owned", result.owned},
                      {"warmup_final_loss", result.warmup.final_loss},
                      {"tune_final_loss", result.tune.final_loss},
                      {"optimizer_steps", adam.step_count()}});

    const std::string phase = "after-" + task;
    for (Snapshot& s : snapshots) {
      const loom::BinaryMask mask = registry.inference_mask(s.ordinal);
      loom::EvalOptions m = eval_opts;
      m.param_mask = &mask;
      std::vector<std::vector<int64_t>> hyps_now;
      const loom::EvalResult now =
          loom::evaluate_corpus(cache, state.params, test_corpus_for(s.domain), m, &hyps_now);
      stability.push_back(
          {{"phase", phase}, {"domain", s.domain}, {"decode_identical", hyps_now == s.hyps}});
      evals.push_back({{"phase", phase},
                       {"domain", s.domain},
                       {"masked", true},
                       {"result",
                        nlohmann::json{{"token_accuracy", now.token_accuracy},
                                       {"bleu", now.bleu},
                                       {"nll", now.nll},
                                       {"sentences", now.sentences}}}});
    }
    {
      const loom::BinaryMask mask = registry.inference_mask(result.ordinal);
      loom::EvalOptions m = eval_opts;
      m.param_mask = &mask;
      Snapshot s;
      s.domain = task;
      s.ordinal = result.ordinal;
      const loom::EvalResult eval =
          loom::evaluate_corpus(cache, state.params, data.targets[k].test, m, &s.hyps);
      print_eval(task + " test (masked)", eval);
      evals.push_back({{"phase", phase},
                       {"domain", task},
                       {"masked", true},
                       {"result",
                        nlohmann::json{{"token_accuracy", eval.token_accuracy},
                                       {"bleu", eval.bleu},
                                       {"nll", eval.nll},
                                       {"sentences", eval.sentences}}}});
      snapshots.push_back(std::move(s));
    }
  }

  nlohmann::json extra = base_extra(ctx, "adapt");
  nlohmann::json snaps = nlohmann::json::array();
  for (const Snapshot& s : snapshots)
    snaps.push_back({{"domain", s.domain}, {"ordinal", s.ordinal}, {"hyps", s.hyps}});
  extra["snapshots"] = snaps;
  save_state(ctx.out / "adapted.ckpt", state.params, adam, extra);
  loom::save_masks(ctx.out / "adapted.masks", registry);

  const nlohmann::json report = {{"type", "experiment"},
                                 {"config", ctx.cfg},
                                 {"stages", stages},
                                 {"evals", evals},
                                 {"decode_stability", stability},
                                 {"ownership", registry.summary()}};
  write_json(ctx.out / "report.json", report);
  write_text(ctx.out / "report.md", loom::render_report_markdown(report));
  std::cout << "wrote " << (ctx.out / "adapted.ckpt").string() << ", "
            << (ctx.out / "adapted.masks").string() << ", " << (ctx.out / "report.json").string()
            << "\n";
  for (const auto& s : stability)
    if (!s.at("decode_identical").get<bool>())
      std::cout << "WARNING: domain '" << s.at("domain").get<std::string>()
                << "' no longer decodes identically\n";
  return 0;
}

int cmd_baseline(Ctx& ctx, const std::string& strategy_name, const std::string& domain,
                 const std::string& checkpoint, int64_t steps, double ewc_lambda,
                 double distill_alpha, int64_t free_top_layers, int64_t adapter_dim) {
  const fs::path in_ckpt =
      checkpoint.empty()
          ? pick_existing({ctx.out / "extracted.ckpt", ctx.out / "general.ckpt"},
                          "general checkpoint")
          : fs::path(checkpoint);
  TrainState state = load_state(in_ckpt);
  adopt_checkpoint_config(ctx, state.extra);
  ctx.cfg.validate();
  const loom::ModelConfig model_cfg = ctx.cfg.resolved_model();
  const loom::ExperimentData data = loom::build_datasets(ctx.cfg);

  size_t k = 0;
  if (!domain.empty()) {
    while (k < ctx.cfg.target_tasks.size() && ctx.cfg.target_tasks[k] != domain) ++k;
    if (k == ctx.cfg.target_tasks.size())
      throw loom::ContractError("domain '" + domain + "' is not in the configured target tasks");
  }
  const std::string task = ctx.cfg.target_tasks[k];

  loom::BaselineOptions opts;
  opts.strategy = loom::baseline_strategy_from_name(strategy_name);
  opts.train = loom::stage_train_options(
      ctx.cfg, loom::kBaselineStream,
      steps > 0 ? steps : ctx.cfg.warmup_steps + ctx.cfg.tune_steps, nullptr);
  opts.adam = ctx.cfg.adam;
  opts.start_step = state.optimizer_steps;
  opts.label_smoothing = ctx.cfg.label_smoothing;
  opts.ewc_lambda = ewc_lambda;
  opts.distill_alpha = distill_alpha;
  opts.free_top_layers = free_top_layers;
  opts.adapter_dim = adapter_dim;
  opts.adapter_seed = loom::mix_seed(ctx.cfg.seed, loom::kAdapterStream);

  const loom::BaselineRun run = loom::run_baseline(model_cfg, state.params, data.targets[k].train,
                                                   &data.targets[k].dev, data.general.train, opts);

  loom::GraphCache cache(run.cfg, ctx.cfg.label_smoothing, 0.0);
  loom::EvalOptions eval_opts;
  eval_opts.beam = ctx.cfg.beam;
  eval_opts.length_penalty = ctx.cfg.length_penalty;
  eval_opts.limit = ctx.cfg.eval_limit;
  const loom::EvalResult on_general =
      loom::evaluate_corpus(cache, run.params, data.general.test, eval_opts);
  const loom::EvalResult on_target =
      loom::evaluate_corpus(cache, run.params, data.targets[k].test, eval_opts);
  print_eval("general test", on_general);
  print_eval(task + " test", on_target);

  const std::string stem = "baseline-" + sanitize(strategy_name) + "-" + sanitize(task);
  nlohmann::json extra = base_extra(ctx, "baseline");
  extra["model"] = run.cfg;
  extra["strategy"] = strategy_name;
  extra["domain"] = task;
  loom::save_checkpoint(ctx.out / (stem + ".ckpt"), run.params, extra);
  write_json(ctx.out / (stem + ".json"),
             {{"type", "baseline"},
              {"strategy", strategy_name},
              {"domain", task},
              {"steps", opts.train.steps},
              {"final_loss", run.train.final_loss},
              {"general",
               {{"token_accuracy", on_general.token_accuracy},
                {"bleu", on_general.bleu},
                {"nll", on_general.nll}}},
              {"target",
               {{"token_accuracy", on_target.token_accuracy},
                {"bleu", on_target.bleu},
                {"nll", on_target.nll}}}});
  write_log_csv(ctx.out / (stem + "-log.csv"), run.train.log);
  std::cout << "wrote " << (ctx.out / (stem + ".ckpt")).string() << "\n";
  return 0;
}

int cmd_evaluate(Ctx& ctx, const std::string& domain, const std::string& checkpoint,
                 const std::string& masks, const std::string& data_dir, const std::string& split) {
  const fs::path in_ckpt =
      checkpoint.empty()
          ? pick_existing(
                {ctx.out / "adapted.ckpt", ctx.out / "extracted.ckpt", ctx.out / "general.ckpt"},
                "checkpoint")
          : fs::path(checkpoint);
  nlohmann::json extra;
  const loom::ParamStore params = load_params_only(in_ckpt, &extra);
  adopt_checkpoint_config(ctx, extra);
  ctx.cfg.validate();
  const loom::ModelConfig model_cfg = extra.contains("model")
                                          ? extra.at("model").get<loom::ModelConfig>()
                                          : ctx.cfg.resolved_model();

  // Test split: from an on-disk dataset dir when given, else regenerated.
  loom::Corpus corpus;
  if (!data_dir.empty()) {
    const loom::Dataset ds = loom::load_dataset(data_dir);
    corpus = split == "train" ? ds.train : split == "dev" ? ds.dev : ds.test;
  } else {
    const loom::ExperimentData data = loom::build_datasets(ctx.cfg);
    const loom::Dataset* ds = nullptr;
    if (domain == "general") {
      ds = &data.general;
    } else {
      for (size_t k = 0; k < ctx.cfg.target_tasks.size(); ++k)
        if (ctx.cfg.target_tasks[k] == domain) ds = &data.targets[k];
      if (ds == nullptr)
        throw loom::ContractError("domain '" + domain + "' is not in the configured tasks");
    }
    corpus = split == "train" ? ds->train : split == "dev" ? ds->dev : ds->test;
  }

  loom::GraphCache cache(model_cfg, ctx.cfg.label_smoothing, 0.0);
  loom::EvalOptions eval_opts;
  eval_opts.beam = ctx.cfg.beam;
  eval_opts.length_penalty = ctx.cfg.length_penalty;
  eval_opts.limit = ctx.cfg.eval_limit;

  // Masked evaluation whenever a masks file applies; dense otherwise.
  loom::BinaryMask mask;
  bool masked = false;
  fs::path masks_path;
  if (!masks.empty()) {
    masks_path = masks;
  } else if (checkpoint.empty()) {
    for (const char* stem : {"adapted", "extracted"})
      if (masks_path.empty() && fs::exists(ctx.out / (std::string(stem) + ".masks")))
        masks_path = ctx.out / (std::string(stem) + ".masks");
  }
  if (!masks_path.empty()) {
    loom::MaskRegistry registry = loom::load_masks(masks_path);
    registry.check_congruent(params);
    const int ordinal = registry.find_domain(domain);
    if (ordinal < 0)
      throw loom::ContractError("domain '" + domain + "' is not in the masks file '" +
                                masks_path.string() + "'");
    mask = registry.inference_mask(ordinal);
    eval_opts.param_mask = &mask;
    masked = true;
  }

  const loom::EvalResult eval = loom::evaluate_corpus(cache, params, corpus, eval_opts);
  print_eval(domain + " " + split + (masked ? " (masked)" : ""), eval);
  write_json(ctx.out / ("eval-" + sanitize(domain) + ".json"),
             {{"domain", domain},
              {"split", split},
              {"masked", masked},
              {"checkpoint", in_ckpt.string()},
              {"token_accuracy", eval.token_accuracy},
              {"bleu", eval.bleu},
              {"nll", eval.nll},
              {"sentences", eval.sentences}});
  return 0;
}

int cmd_inspect_masks(const Ctx& ctx, const std::string& masks) {
  const fs::path path =
      masks.empty()
          ? pick_existing({ctx.out / "adapted.masks", ctx.out / "extracted.masks"}, "masks file")
          : fs::path(masks);
  const loom::MaskRegistry registry = loom::load_masks(path);
  const nlohmann::json s = registry.summary();
  std::cout << path.string() << ": " << s.at("total_elements").get<int64_t>() << " elements, "
            << s.at("free").get<int64_t>() << " free, " << s.at("frozen").get<int64_t>()
            << " frozen\n\ndomains:\n";
  for (const auto& d : s.at("domains"))
    std::cout << "  [" << d.at("ordinal").get<int>() << "] " << d.at("name").get<std::string>()
              << ": " << d.at("elements").get<int64_t>() << " elements, ancestors "
              << d.at("ancestors").dump() << "\n";
  std::cout << "\nper-tensor ownership (free / frozen / per-domain):\n";
  for (const auto& t : s.at("tensors")) {
    std::cout << "  " << std::left << std::setw(28) << t.at("name").get<std::string>()
              << std::right << " " << std::setw(7) << t.at("free").get<int64_t>() << " "
              << std::setw(7) << t.at("frozen").get<int64_t>() << " ";
    for (const auto& c : t.at("per_domain")) std::cout << std::setw(7) << c.get<int64_t>() << " ";
    std::cout << "\n";
  }
  return 0;
}

int cmd_sweep(const Ctx& ctx, const std::string& axis, std::vector<double> values) {
  ctx.cfg.validate();
  nlohmann::json result;
  if (axis == "sparsity") {
    if (values.empty()) values = {0.1, 0.3, 0.5, 0.7};
    result = loom::sweep_sparsity(ctx.cfg, values);
  } else if (axis == "fraction") {
    if (values.empty()) values = {0.01, 0.03, 0.1, 0.3, 1.0};
    result = loom::sweep_fraction(ctx.cfg, values);
    write_text(ctx.out / "sweep-fraction.csv", loom::render_fraction_csv(result));
  } else if (axis == "order") {
    LOOM_CHECK(values.empty(), loom::ContractError, "the order sweep does not take --values");
    result = loom::sweep_order(ctx.cfg);
  } else {
    throw loom::ContractError("unknown sweep axis '" + axis +
                              "' (expected sparsity, fraction, or order)");
  }
  const std::string markdown = loom::render_report_markdown(result);
  write_json(ctx.out / ("sweep-" + axis + ".json"), result);
  write_text(ctx.out / ("sweep-" + axis + ".md"), markdown);
  std::cout << markdown;
  std::cout << "wrote " << (ctx.out / ("sweep-" + axis + ".json")).string() << "\n";
  return 0;
}

int cmd_report(const Ctx& ctx, const std::string& in_path) {
  const fs::path path = in_path.empty()
                            ? pick_existing({ctx.out / "report.json"}, "report")
                            : fs::path(in_path);
  std::ifstream in(path);
  if (!in) throw loom::IoError("cannot open '" + path.string() + "' for reading");
  nlohmann::json report;
  try {
    in >> report;
  } catch (const nlohmann::json::exception& e) {
    throw loom::DataError("bad report JSON in '" + path.string() + "': " + e.what());
  }
  std::cout << loom::render_report_markdown(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain adaptation for sequence models via disjoint parameter sub-networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out-dir", out_dir, "artifact directory (default: out)");

  auto* gen_data = app.add_subcommand("gen-data", "write the synthetic corpora to disk");

  auto* train_general = app.add_subcommand("train-general", "train the dense general model");

  std::string extract_ckpt;
  auto* extract = app.add_subcommand("extract-subnet",
                                     "prune the general model down to its core sub-network");
  extract->add_option("--checkpoint", extract_ckpt, "general checkpoint to start from");

  std::string adapt_domain_name, adapt_ckpt, adapt_masks;
  bool adapt_sequential = false;
  auto* adapt = app.add_subcommand("adapt", "tune per-domain sub-networks into the free capacity");
  adapt->add_option("--domain", adapt_domain_name, "adapt only this target task");
  adapt->add_flag("--sequential", adapt_sequential,
                  "later domains may read all earlier domains, not just general");
  adapt->add_option("--checkpoint", adapt_ckpt, "checkpoint to start from");
  adapt->add_option("--masks", adapt_masks, "masks file to start from");

  std::string baseline_strategy, baseline_domain, baseline_ckpt;
  int64_t baseline_steps = 0, baseline_free_top = 1, baseline_adapter_dim = 8;
  double baseline_lambda = 1.0, baseline_alpha = 0.5;
  auto* baseline = app.add_subcommand("baseline", "adapt with a reference strategy instead");
  baseline->add_option("--strategy", baseline_strategy, "finetune|ewc|distill|layer-freeze|adapter")
      ->required()
      ->check(CLI::IsMember({"finetune", "ewc", "distill", "layer-freeze", "adapter"}));
  baseline->add_option("--domain", baseline_domain, "target task (default: first configured)");
  baseline->add_option("--checkpoint", baseline_ckpt, "general checkpoint to start from");
  baseline->add_option("--steps", baseline_steps, "training steps (default: warmup + tune)");
  baseline->add_option("--ewc-lambda", baseline_lambda, "EWC penalty strength");
  baseline->add_option("--distill-alpha", baseline_alpha, "distillation mixing weight");
  baseline->add_option("--free-top-layers", baseline_free_top, "layer-freeze trainable depth");
  baseline->add_option("--adapter-dim", baseline_adapter_dim, "adapter bottleneck width");

  std::string eval_domain, eval_ckpt, eval_masks, eval_data, eval_split = "test";
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a domain's data");
  evaluate->add_option("--domain", eval_domain, "'general' or a target task")->required();
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint to score");
  evaluate->add_option("--masks", eval_masks, "masks file for masked decoding");
  evaluate->add_option("--data", eval_data, "dataset directory (default: regenerate from config)");
  evaluate->add_option("--split", eval_split, "train|dev|test (default test)")
      ->check(CLI::IsMember({"train", "dev", "test"}));

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-masks", "print per-domain, per-tensor ownership");
  inspect->add_option("--masks", inspect_path, "masks file to inspect");

  std::string sweep_axis;
  std::vector<double> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "re-run the experiment across one axis");
  sweep->add_option("axis", sweep_axis, "sparsity|fraction|order")
      ->required()
      ->check(CLI::IsMember({"sparsity", "fraction", "order"}));
  sweep->add_option("--values", sweep_values, "axis values")->delimiter(',');

  std::string report_in;
  auto* report = app.add_subcommand("report", "render a report JSON as markdown");
  report->add_option("--in", report_in, "report JSON path (default: <out-dir>/report.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    Ctx ctx;
    if (!config_path.empty()) {
      ctx.cfg = read_config_file(config_path);
      ctx.config_given = true;
    }
    if (seed_opt->count() > 0) {
      ctx.cfg.seed = seed;
      ctx.config_given = true;
    }
    ctx.out = out_dir;
    fs::create_directories(ctx.out);

    if (gen_data->parsed()) return cmd_gen_data(ctx);
    if (train_general->parsed()) return cmd_train_general(ctx);
    if (extract->parsed()) return cmd_extract_subnet(ctx, extract_ckpt);
    if (adapt->parsed())
      return cmd_adapt(ctx, adapt_domain_name, adapt_sequential, adapt_ckpt, adapt_masks);
    if (baseline->parsed())
      return cmd_baseline(ctx, baseline_strategy, baseline_domain, baseline_ckpt, baseline_steps,
                          baseline_lambda, baseline_alpha, baseline_free_top,
                          baseline_adapter_dim);
    if (evaluate->parsed())
      return cmd_evaluate(ctx, eval_domain, eval_ckpt, eval_masks, eval_data, eval_split);
    if (inspect->parsed()) return cmd_inspect_masks(ctx, inspect_path);
    if (sweep->parsed()) return cmd_sweep(ctx, sweep_axis, sweep_values);
    if (report->parsed()) return cmd_report(ctx, report_in);
    return 1;
  } catch (const loom::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
