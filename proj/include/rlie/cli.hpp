#pragma once

// Command implementations behind the rlie tool. Each command takes its
// output streams and a backend factory so tests can drive it in-process.
//
// Run directory layout (one per seed):
//   <out_dir>/<name>_seed<seed>/
//     config.ini        config snapshot
//     run.json          seed, model, template versions
//     splits.json       example ids per split
//     generation/       generator prompts and replies per iteration
//     checkpoints/      one checkpoint per iteration
//     run_log.json, best_checkpoint.json, eval_report.json, eval_report.txt
// plus <out_dir>/aggregate_report.{json,txt} over all seeds.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rlie/config.hpp"
#include "rlie/eval.hpp"
#include "rlie/judge.hpp"
#include "rlie/loop.hpp"
#include "rlie/openai_backend.hpp"
#include "rlie/synthetic.hpp"

namespace rlie {

// Offline backend description: {"judge": {...}, "generator": {...}}.
struct SyntheticSpecFile {
  SyntheticJudgeSpec judge;
  GeneratorScript generator;
};

inline SyntheticSpecFile load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read synthetic spec '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("synthetic spec '" + path.string() + "' is not valid JSON");
  try {
    return {j.at("judge").get<SyntheticJudgeSpec>(), j.value("generator", GeneratorScript{})};
  } catch (const json::exception& e) {
    throw ConfigError("synthetic spec '" + path.string() + "': " + e.what());
  }
}

struct BackendBundle {
  std::vector<std::shared_ptr<Backend>> owned;
  Backend* generator = nullptr;
  Backend* judge = nullptr;
  Backend* inference = nullptr;
};

// Called once per seed, after the config has been validated.
using BackendFactory = std::function<BackendBundle(const RunConfig&)>;

inline BackendBundle default_backends(const RunConfig& c) {
  std::shared_ptr<Backend> b;
  if (c.backend == BackendKind::Synthetic) {
    auto spec = load_synthetic_spec(c.synthetic_spec);
    b = std::make_shared<SyntheticBackend>(std::move(spec.judge), std::move(spec.generator), c.manifest,
                                           c.model.max_in_flight);
  } else {
    b = std::make_shared<OpenAIBackend>(OpenAIBackend::from_environment(c.model));
  }
  return {{b}, b.get(), b.get(), b.get()};
}

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::vector<std::string> strategies;  // empty: from config
  bool dry_run = false;
};

// Structured one-line error on stderr; returns the exit status.
inline int report_error(const std::exception& e, std::ostream& err) {
  const auto* re = dynamic_cast<const Error*>(&e);
  json j{{"error", re ? re->kind() : "internal"}, {"message", e.what()}};
  if (const auto* fe = dynamic_cast<const FileParseError*>(&e)) j["line"] = fe->line();
  err << j.dump() << '\n';
  const bool usage = dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e);
  return usage ? 2 : 1;
}

namespace detail {

inline RunConfig apply_options(RunConfig c, const CommandOptions& o) {
  if (o.seed) c.seeds = {*o.seed};
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (!o.strategies.empty()) {
    c.strategies.clear();
    for (const auto& s : o.strategies) c.strategies.push_back(parse_strategy(s));
  }
  return c;
}

inline std::filesystem::path run_dir_for(const RunConfig& c, std::uint64_t seed) {
  return c.out_dir / (c.name + "_seed" + std::to_string(seed));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw Error("failed to write '" + path.string() + "'");
}

// Reuses the run directory's split manifest when present so a rerun sees
// the same splits.
inline SplitBundle splits_for(const RunConfig& c, const std::vector<Example>& pool, std::uint64_t seed,
                              const std::filesystem::path& run_dir) {
  const auto file = run_dir / "splits.json";
  if (std::filesystem::exists(file)) {
    std::ifstream in(file);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IntegrityError("'" + file.string() + "' is not valid JSON");
    auto b = splits_from_manifest(j, pool);
    if (b.seed != seed) throw IntegrityError("'" + file.string() + "' was made with a different seed");
    return b;
  }
  auto b = make_splits(pool, c.splits, seed);
  write_json(file, split_manifest(b));
  return b;
}

inline std::string render_prompt(const std::string& title, const RenderedPrompt& p) {
  std::string out = "=== " + title + " ===\n";
  if (!p.system.empty()) out += "--- system ---\n" + p.system + "\n";
  out += "--- user ---\n" + p.user + "\n\n";
  return out;
}

// Every prompt kind the run would send, rendered for the first example of
// the relevant split. Rules are placeholders since none have been generated.
inline std::string dry_run_prompts(const RunConfig& c, const TemplateSet& templates, const SplitBundle& splits,
                                   std::uint64_t seed) {
  std::string out;
  GenerationRequest init;
  init.observations = sample_initial(splits.train, c.loop.hard_k, mix64(seed ^ 0x1a17ULL));
  init.num_hypotheses = c.loop.init_h;
  out += render_prompt("generation (initial)", generation_prompt(init, templates, c.manifest).prompt);

  const Rule placeholder{"dry-run-r1", "<generated rule>", 1, RuleOrigin::Initial};
  GenerationRequest refine;
  refine.mode = GenerationMode::Refinement;
  refine.iteration = 2;
  refine.observations = {splits.train.front()};
  refine.prior_rules = {placeholder};
  refine.num_hypotheses = c.loop.gen_h;
  out += render_prompt("generation (refinement)", generation_prompt(refine, templates, c.manifest).prompt);
  out += render_prompt("judge", judge_request(templates.judge, placeholder, splits.train.front()).prompt);

  Checkpoint ckpt;
  ckpt.rules = RuleSet(c.loop.capacity, {placeholder});
  ckpt.params = CombinerParams{{placeholder.rule_id}, {0.0}, 0.0, 0.0, 0.0};
  for (auto s : c.strategies) {
    if (s == StrategyKind::LinearOnly) continue;
    const std::optional<int> ref =
        s == StrategyKind::LlmRulesWeightsPrediction ? std::optional<int>(1) : std::nullopt;
    out += render_prompt(std::string("inference ") + short_name(s),
                         inference_request(s, ckpt, splits.test.front(), c.manifest, templates, ref).prompt);
  }
  return out;
}

}  // namespace detail

// run: the full loop for every seed, then every requested strategy on each
// run's best checkpoint.
inline int cmd_run(const RunConfig& config, const CommandOptions& opts, const BackendFactory& factory,
                   std::ostream& out, std::ostream& err) {
  std::unique_ptr<JudgmentCache> cache;
  try {
    const auto c = detail::apply_options(config, opts);
    validate(c);
    const auto pool = load_jsonl(c.dataset_path);
    const auto templates = TemplateSet::load(c.template_dir);
    std::filesystem::create_directories(c.out_dir);

    if (opts.dry_run) {
      for (auto seed : c.seeds) {
        const auto splits = make_splits(pool, c.splits, seed);
        const auto text = detail::dry_run_prompts(c, templates, splits, seed);
        detail::write_text(detail::run_dir_for(c, seed) / "dry_run_prompts.txt", text);
        out << "# seed " << seed << "\n" << text;
      }
      return 0;
    }

    cache = std::make_unique<JudgmentCache>(c.effective_cache_path());
    EvalReport aggregate;
    for (auto seed : c.seeds) {
      const auto run_dir = detail::run_dir_for(c, seed);
      std::filesystem::create_directories(run_dir);
      RunConfig snapshot = c;
      snapshot.seeds = {seed};
      detail::write_text(run_dir / "config.ini", to_ini(snapshot));
      const auto splits = detail::splits_for(c, pool, seed, run_dir);

      auto backends = factory(c);
      if (!backends.generator || !backends.judge || !backends.inference) {
        throw ConfigError("backend factory returned an incomplete backend set");
      }
      detail::write_json(run_dir / "run.json", json{{"name", c.name},
                                            {"seed", seed},
                                            {"dataset", c.dataset_path.string()},
                                            {"generator", backends.generator->model_name()},
                                            {"judge", backends.judge->model_name()},
                                            {"inference", backends.inference->model_name()},
                                            {"templates", templates.versions()}});

      LoopConfig loop = c.loop;
      loop.seed = seed;
      const auto result = run_rlie(splits, {*backends.generator, *backends.judge},
                                   LoopInputs{c.manifest, templates, *cache, loop, c.combiner, run_dir});

      EvalContext ctx{c.manifest, templates, *cache, *backends.judge, *backends.inference, c.combiner.predict};
      const auto rows = judge_test_rows(result.best, splits.test, ctx);
      RunEvaluation ev{seed, result.best.iteration, {}};
      for (auto s : c.strategies) ev.strategies.push_back(evaluate_strategy(s, result.best, splits.test, rows, ctx));

      const EvalReport single{{ev}};
      detail::write_json(run_dir / "eval_report.json", single);
      detail::write_text(run_dir / "eval_report.txt", render_table(single));
      aggregate.runs.push_back(std::move(ev));

      char line[160];
      std::snprintf(line, sizeof line, "seed %llu: best iteration %d, validation accuracy %.4f (%s)\n",
                    static_cast<unsigned long long>(seed), result.best.iteration, result.best.val_accuracy,
                    result.log.stop_reason.c_str());
      out << line;
    }

    detail::write_json(c.out_dir / "aggregate_report.json", aggregate);
    const auto table = render_table(aggregate);
    detail::write_text(c.out_dir / "aggregate_report.txt", table);
    out << table;
    cache->save_stats();
    return 0;
  } catch (const std::exception& e) {
    if (cache) cache->save_stats();
    return report_error(e, err);
  }
}

// evaluate: one strategy on a saved checkpoint. The test split comes from the
// splits.json of the checkpoint's run directory when one exists, else from
// the seed.
inline int cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint_path,
                        const std::string& strategy_name, const CommandOptions& opts, const BackendFactory& factory,
                        std::ostream& out, std::ostream& err) {
  try {
    const auto strategy = parse_strategy(strategy_name);
    const auto c = detail::apply_options(config, opts);
    validate(c);
    const auto ckpt = load_checkpoint(checkpoint_path);
    if (strategy != StrategyKind::LlmRules) detail::aligned_params(ckpt);

    const auto pool = load_jsonl(c.dataset_path);
    const auto templates = TemplateSet::load(c.template_dir);

    std::optional<SplitBundle> splits;
    // <run_dir>/best_checkpoint.json or <run_dir>/checkpoints/iter_NNN.json
    for (const auto& dir : {checkpoint_path.parent_path(), checkpoint_path.parent_path().parent_path()}) {
      if (!dir.empty() && std::filesystem::exists(dir / "splits.json")) {
        std::ifstream in(dir / "splits.json");
        splits = splits_from_manifest(json::parse(in), pool);
        break;
      }
    }
    if (!splits) splits = make_splits(pool, c.splits, c.seeds.front());

    auto backends = factory(c);
    JudgmentCache cache(c.effective_cache_path());
    EvalContext ctx{c.manifest, templates, cache, *backends.judge, *backends.inference, c.combiner.predict};
    const auto rows = judge_test_rows(ckpt, splits->test, ctx);
    RunEvaluation ev{splits->seed, ckpt.iteration, {evaluate_strategy(strategy, ckpt, splits->test, rows, ctx)}};
    const EvalReport report{{ev}};

    const auto dir = opts.out_dir.value_or(checkpoint_path.has_parent_path() ? checkpoint_path.parent_path()
                                                                              : std::filesystem::path("."));
    detail::write_json(dir / (std::string("eval_") + short_name(strategy) + ".json"), report);
    out << render_table(report);
    cache.save_stats();
    return 0;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

// inspect-cache: entry count, per-rule coverage over the cached examples,
// the hit rate recorded by the last session and any corrupt lines.
inline int cmd_inspect_cache(const std::filesystem::path& path, std::ostream& out, std::ostream& err) {
  try {
    if (!std::filesystem::exists(path)) throw UsageError("cache file '" + path.string() + "' does not exist");
    JudgmentCache cache(path, /*read_only=*/true);
    out << cache.size() << " entries\n";

    struct Tally {
      std::size_t judged = 0;
      std::size_t covered = 0;
    };
    std::map<std::string, Tally> per_rule;
    for (const auto& e : cache.entries()) {
      auto& t = per_rule[e.rule];
      ++t.judged;
      t.covered += e.value != Judgment::Abstain;
    }
    if (!per_rule.empty()) out << "coverage by rule:\n";
    for (const auto& [rule, t] : per_rule) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "  %.3f (%zu/%zu)  ", static_cast<double>(t.covered) / static_cast<double>(t.judged),
                    t.covered, t.judged);
      out << buf << rule << '\n';
    }

    const auto stats_file = JudgmentCache::stats_path(path);
    std::ifstream sin(stats_file);
    json s = sin ? json::parse(sin, nullptr, false) : json();
    if (s.is_object() && s.contains("hits") && s.contains("misses")) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "last run hit rate: %.3f (%llu hits, %llu misses)\n",
                    s.value("hit_rate", 0.0), s["hits"].get<unsigned long long>(),
                    s["misses"].get<unsigned long long>());
      out << buf;
    } else {
      out << "last run hit rate: unknown\n";
    }

    const auto& warnings = cache.warnings();
    if (!warnings.empty()) out << warnings.size() << (warnings.size() == 1 ? " warning\n" : " warnings\n");
    for (const auto& w : warnings) {
      out << "warning: line " << w.line;
      if (!w.key.empty()) out << " key " << w.key;
      out << ": " << w.message << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

// make-splits: writes the split manifest for one seed.
inline int cmd_make_splits(const RunConfig& config, const CommandOptions& opts, std::ostream& out,
                           std::ostream& err) {
  try {
    const auto c = detail::apply_options(config, opts);
    if (c.dataset_path.empty() || !std::filesystem::is_regular_file(c.dataset_path)) {
      throw ConfigError("dataset '" + c.dataset_path.string() + "' does not exist");
    }
    const auto seed = c.seeds.front();
    const auto pool = load_jsonl(c.dataset_path);
    const auto b = make_splits(pool, c.splits, seed);
    const auto file = c.out_dir / ("splits_seed" + std::to_string(seed) + ".json");
    detail::write_json(file, split_manifest(b));
    out << "train " << b.train.size() << ", validation " << b.validation.size() << ", test " << b.test.size()
        << " -> " << file.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

}  // namespace rlie
