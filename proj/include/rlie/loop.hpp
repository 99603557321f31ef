#pragma once

// The refinement loop: generate -> judge -> coverage filter -> merge/prune
// -> select hyperparameters and refit -> score on validation, repeated with
// hard-example mining until validation accuracy stops improving.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlie/backend.hpp"
#include "rlie/combiner.hpp"
#include "rlie/core.hpp"
#include "rlie/dataset.hpp"
#include "rlie/genesis.hpp"
#include "rlie/judge.hpp"
#include "rlie/metrics.hpp"
#include "rlie/prompt.hpp"
#include "rlie/rng.hpp"

namespace rlie {

struct LoopConfig {
  std::size_t capacity = 10;
  std::size_t hard_k = 20;
  std::size_t gen_h = 5;
  std::size_t init_h = 10;
  double coverage_gamma = 0.2;
  double margin_delta = 0.01;
  int patience = 2;
  int max_iterations = 10;
  std::uint64_t seed = 0;

  bool operator==(const LoopConfig&) const = default;
};

inline void validate(const LoopConfig& c) {
  if (c.capacity < 1) throw ConfigError("capacity must be >= 1");
  if (c.hard_k < 1 || c.gen_h < 1 || c.init_h < 1) throw ConfigError("hard_k, gen_h and init_h must be >= 1");
  if (!(c.coverage_gamma >= 0.0 && c.coverage_gamma <= 1.0)) throw ConfigError("coverage_gamma must lie in [0,1]");
  if (!(c.margin_delta >= 0.0)) throw ConfigError("margin_delta must be >= 0");
  if (c.patience < 1) throw ConfigError("patience must be >= 1");
  if (c.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
}

struct CombinerConfig {
  std::vector<GridPoint> grid = default_grid();
  std::size_t folds = 5;
  SolverConfig solver;
  PredictConfig predict;

  bool operator==(const CombinerConfig&) const = default;
};

struct Checkpoint {
  int iteration = 0;
  RuleSet rules{1};
  std::optional<CombinerParams> params;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  CacheStats cache_stats;
};

inline void to_json(json& j, const Checkpoint& c) {
  j = json{{"iteration", c.iteration},
           {"rules", c.rules},
           {"validation", {{"accuracy", c.val_accuracy}, {"macro_f1", c.val_macro_f1}}},
           {"cache_stats", c.cache_stats}};
  if (c.params) j["params"] = *c.params;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  c.iteration = j.at("iteration").get<int>();
  c.rules = rule_set_from_json(j.at("rules"));
  if (j.contains("params")) c.params = params_from_json(j.at("params"), c.rules.rule_ids());
  c.val_accuracy = j.at("validation").at("accuracy").get<double>();
  c.val_macro_f1 = j.at("validation").at("macro_f1").get<double>();
  if (j.contains("cache_stats")) {
    c.cache_stats.hits = j["cache_stats"].value("hits", std::size_t{0});
    c.cache_stats.misses = j["cache_stats"].value("misses", std::size_t{0});
  }
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IntegrityError("checkpoint '" + path.string() + "' is not valid JSON");
  return checkpoint_from_json(j);
}

struct IterationRecord {
  int iteration = 0;
  std::string mode;
  std::vector<std::string> observation_ids;  // sample (t=1) or hard examples (t>=2)
  std::vector<Rule> generated;
  std::vector<std::string> duplicates;
  std::map<std::string, double> candidate_coverage;
  std::vector<std::string> low_coverage;
  std::vector<std::string> added;
  std::vector<std::string> pruned;
  std::vector<std::string> rule_ids;
  double lambda = 0.0;
  double alpha = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  bool improved = false;
  int non_improving_streak = 0;
  std::string note;
};

inline void to_json(json& j, const IterationRecord& r) {
  j = json{{"iteration", r.iteration},
           {"mode", r.mode},
           {"observation_ids", r.observation_ids},
           {"generated", r.generated},
           {"duplicates", r.duplicates},
           {"candidate_coverage", r.candidate_coverage},
           {"low_coverage", r.low_coverage},
           {"added", r.added},
           {"pruned", r.pruned},
           {"rule_ids", r.rule_ids},
           {"lambda", r.lambda},
           {"alpha", r.alpha},
           {"val_accuracy", r.val_accuracy},
           {"val_macro_f1", r.val_macro_f1},
           {"improved", r.improved},
           {"non_improving_streak", r.non_improving_streak},
           {"note", r.note}};
}

struct RunLog {
  std::vector<IterationRecord> records;
  int best_iteration = 0;
  std::string stop_reason;
};

inline void to_json(json& j, const RunLog& l) {
  j = json{{"records", l.records}, {"best_iteration", l.best_iteration}, {"stop_reason", l.stop_reason}};
}

// ---------------------------------------------------------------------------
// Loop steps

// Keeps candidates whose training coverage is >= gamma, in order.
inline std::vector<Rule> filter_by_coverage(const std::vector<Rule>& candidates,
                                            const std::vector<std::vector<Judgment>>& train_columns,
                                            double gamma) {
  if (candidates.size() != train_columns.size()) throw UsageError("one training column per candidate required");
  std::vector<Rule> kept;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (coverage(train_columns[j]) >= gamma) kept.push_back(candidates[j]);
  }
  return kept;
}

// Ids of the k examples with the largest |p - y|; ties by ascending id.
inline std::vector<std::string> select_hard_examples(std::span<const double> probas, std::span<const int> labels,
                                                     std::span<const std::string> ids, std::size_t k) {
  if (probas.empty()) throw UsageError("select_hard_examples on empty input");
  if (probas.size() != labels.size() || probas.size() != ids.size()) {
    throw UsageError("select_hard_examples: probas, labels and ids must align");
  }
  if (k < 1) throw UsageError("k must be >= 1");
  std::vector<std::size_t> order(probas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> err(probas.size());
  for (std::size_t i = 0; i < probas.size(); ++i) err[i] = std::abs(probas[i] - labels[i]);
  const auto take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (err[a] != err[b]) return err[a] > err[b];
                      return ids[a] < ids[b];
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(ids[order[i]]);
  return out;
}

// Accuracy over covered examples only: +1 matches label 1, -1 matches
// label 0. nullopt when the rule abstains everywhere.
inline std::optional<double> rule_individual_accuracy(std::span<const Judgment> column, std::span<const int> labels) {
  if (column.size() != labels.size()) throw UsageError("rule_individual_accuracy: length mismatch");
  std::size_t covered = 0, matches = 0;
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (column[i] == Judgment::Abstain) continue;
    ++covered;
    matches += (column[i] == Judgment::Positive) == (labels[i] == 1);
  }
  if (covered == 0) return std::nullopt;
  return static_cast<double>(matches) / static_cast<double>(covered);
}

struct RuleStats {
  std::optional<double> accuracy;
  double coverage = 0.0;
};

inline std::map<std::string, RuleStats> validation_stats(const std::vector<Rule>& rules,
                                                         const std::unordered_map<std::string, std::vector<Judgment>>& cols,
                                                         std::span<const int> labels) {
  std::map<std::string, RuleStats> out;
  for (const auto& r : rules) {
    const auto& col = cols.at(r.rule_id);
    out[r.rule_id] = {rule_individual_accuracy(col, labels), coverage(col)};
  }
  return out;
}

// Strict ranking: defined accuracy first (desc), then coverage desc, then
// older rule, then rule id.
inline bool ranks_before(const Rule& a, const Rule& b, const std::map<std::string, RuleStats>& stats) {
  const auto& sa = stats.at(a.rule_id);
  const auto& sb = stats.at(b.rule_id);
  if (sa.accuracy.has_value() != sb.accuracy.has_value()) return sa.accuracy.has_value();
  if (sa.accuracy && *sa.accuracy != *sb.accuracy) return *sa.accuracy > *sb.accuracy;
  if (sa.coverage != sb.coverage) return sa.coverage > sb.coverage;
  if (a.born_iteration != b.born_iteration) return a.born_iteration < b.born_iteration;
  return a.rule_id < b.rule_id;
}

// current ++ new_rules; when that exceeds H, keeps the H best-ranked rules
// (survivors stay in union order).
inline RuleSet merge_and_prune(const RuleSet& current, const std::vector<Rule>& new_rules,
                               const std::map<std::string, RuleStats>& val_stats, std::size_t capacity) {
  std::vector<Rule> all = current.rules();
  all.insert(all.end(), new_rules.begin(), new_rules.end());
  if (all.size() <= capacity) return RuleSet(capacity, std::move(all));

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(all[a], all[b], val_stats); });
  std::vector<bool> keep(all.size(), false);
  for (std::size_t k = 0; k < capacity; ++k) keep[order[k]] = true;
  std::vector<Rule> kept;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (keep[i]) kept.push_back(all[i]);
  }
  return RuleSet(capacity, std::move(kept));
}

// ---------------------------------------------------------------------------
// Driver

struct Backends {
  Backend& generator;
  Backend& judge;
};

struct LoopInputs {
  const DatasetManifest& manifest;
  const TemplateSet& templates;
  JudgmentCache& cache;
  LoopConfig loop;
  CombinerConfig combiner;
  // When set, generation replies, checkpoints and the run log are written
  // here, and generation replies found here are reused on rerun.
  std::optional<std::filesystem::path> run_dir;
};

struct RunResult {
  Checkpoint best;
  RunLog log;
  std::vector<Checkpoint> checkpoints;
};

namespace detail {

inline std::string iter_file(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%03d.json", t);
  return buf;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed to write '" + path.string() + "'");
}

inline std::string prompt_digest(const ChatRequest& req) {
  return sha256_hex(req.prompt.system + '\x1f' + req.prompt.user);
}

// Generation with reuse of a reply persisted by an earlier (interrupted) run.
inline GenerationResult generate_resumable(Backend& backend, const GenerationRequest& req,
                                           const LoopInputs& in) {
  GenerationResult out;
  out.request = generation_prompt(req, in.templates, in.manifest);
  const auto digest = prompt_digest(out.request);
  std::optional<std::filesystem::path> file;
  if (in.run_dir) file = *in.run_dir / "generation" / iter_file(req.iteration);

  bool reused = false;
  if (file && std::filesystem::exists(*file)) {
    std::ifstream f(*file);
    json j = json::parse(f, nullptr, false);
    if (!j.is_discarded() && j.value("prompt_digest", "") == digest &&
        j.value("generator", "") == backend.model_name()) {
      out.raw_response = j.value("raw_response", "");
      reused = true;
    }
  }
  if (!reused) {
    out.raw_response = backend.complete(out.request);
    if (file) {
      write_json(*file, json{{"iteration", req.iteration},
                             {"generator", backend.model_name()},
                             {"prompt_digest", digest},
                             {"system", out.request.prompt.system},
                             {"user", out.request.prompt.user},
                             {"raw_response", out.raw_response}});
    }
  }
  out.rules = rules_from_response(out.raw_response, req);
  if (file) {
    std::ifstream f(*file);
    json j = json::parse(f, nullptr, false);
    if (!j.is_discarded()) {
      j["rules"] = out.rules;
      write_json(*file, j);
    }
  }
  return out;
}

}  // namespace detail

inline RunResult run_rlie(const SplitBundle& splits, Backends backends, const LoopInputs& in) {
  validate(splits);
  validate(in.loop);
  validate(in.manifest);
  validate(in.combiner.predict);
  const auto& cfg = in.loop;

  const auto y_train = labels_of(splits.train);
  const auto y_val = labels_of(splits.validation);
  const auto train_ids = ids_of(splits.train);
  const auto val_ids = ids_of(splits.validation);

  std::unordered_map<std::string, std::vector<Judgment>> train_cols, val_cols;
  RuleSet rules(cfg.capacity);
  CombinerParams params;
  RunResult result;
  double best_acc = -std::numeric_limits<double>::infinity();
  int streak = 0;

  auto persist_log = [&] {
    if (in.run_dir) detail::write_json(*in.run_dir / "run_log.json", result.log);
  };

  for (int t = 1; t <= cfg.max_iterations; ++t) {
    IterationRecord rec;
    rec.iteration = t;

    GenerationRequest req;
    req.iteration = t;
    if (t == 1) {
      rec.mode = "initial";
      req.mode = GenerationMode::Initial;
      req.observations = sample_initial(splits.train, cfg.hard_k, mix64(cfg.seed ^ 0x1a17ULL));
      req.num_hypotheses = cfg.init_h;
    } else {
      rec.mode = "refinement";
      req.mode = GenerationMode::Refinement;
      const auto z_train = JudgmentMatrix::from_columns(train_ids, rules.rule_ids(), [&] {
        std::vector<std::vector<Judgment>> cols;
        for (const auto& r : rules.rules()) cols.push_back(train_cols.at(r.rule_id));
        return cols;
      }());
      const auto hard = select_hard_examples(predict_proba_all(params, z_train), y_train, train_ids, cfg.hard_k);
      std::unordered_map<std::string, const Example*> by_id;
      for (const auto& e : splits.train) by_id.emplace(e.id, &e);
      for (const auto& id : hard) req.observations.push_back(*by_id.at(id));
      req.prior_rules = rules.rules();
      req.num_hypotheses = cfg.gen_h;
    }
    rec.observation_ids = ids_of(req.observations);

    std::vector<Rule> candidates;
    bool generation_failed = false;
    try {
      candidates = detail::generate_resumable(backends.generator, req, in).rules;
    } catch (const GenerationError& e) {
      if (t == 1) throw;
      generation_failed = true;
      rec.note = std::string("generation produced no usable rules: ") + e.what();
    }
    rec.generated = candidates;

    // Cross-iteration dedup against the current rule set.
    std::vector<Rule> fresh;
    for (const auto& c : candidates) {
      if (rules.contains_text(c.text)) {
        rec.duplicates.push_back(c.rule_id);
      } else {
        fresh.push_back(c);
      }
    }

    std::vector<Rule> kept;
    if (!fresh.empty()) {
      const auto m = judge_matrix(backends.judge, in.templates.judge, fresh, splits.train, in.cache, in.manifest);
      std::vector<std::vector<Judgment>> cols;
      for (std::size_t j = 0; j < fresh.size(); ++j) {
        cols.push_back(m.column(j));
        rec.candidate_coverage[fresh[j].rule_id] = coverage(cols.back());
      }
      kept = filter_by_coverage(fresh, cols, cfg.coverage_gamma);
      for (std::size_t j = 0; j < fresh.size(); ++j) {
        if (std::none_of(kept.begin(), kept.end(), [&](const Rule& r) { return r.rule_id == fresh[j].rule_id; })) {
          rec.low_coverage.push_back(fresh[j].rule_id);
        } else {
          train_cols[fresh[j].rule_id] = cols[j];
        }
      }
    }
    if (t == 1 && kept.empty()) {
      throw GenerationError("first iteration produced no rule with coverage >= " +
                            std::to_string(cfg.coverage_gamma));
    }
    if (!kept.empty()) {
      const auto mv = judge_matrix(backends.judge, in.templates.judge, kept, splits.validation, in.cache,
                                   in.manifest);
      for (std::size_t j = 0; j < kept.size(); ++j) val_cols[kept[j].rule_id] = mv.column(j);
    }

    std::vector<Rule> merged_pool = rules.rules();
    merged_pool.insert(merged_pool.end(), kept.begin(), kept.end());
    const auto stats = validation_stats(merged_pool, val_cols, y_val);
    RuleSet next = merge_and_prune(rules, kept, stats, cfg.capacity);
    for (const auto& r : kept) {
      if (next.contains_text(r.text)) rec.added.push_back(r.rule_id);
    }
    for (const auto& r : merged_pool) {
      if (!next.contains_text(r.text)) rec.pruned.push_back(r.rule_id);
    }
    rules = std::move(next);
    rec.rule_ids = rules.rule_ids();

    auto matrix_for = [&](const std::vector<std::string>& ids,
                          const std::unordered_map<std::string, std::vector<Judgment>>& cols) {
      std::vector<std::vector<Judgment>> c;
      for (const auto& r : rules.rules()) c.push_back(cols.at(r.rule_id));
      return JudgmentMatrix::from_columns(ids, rules.rule_ids(), c);
    };
    const auto z_train = matrix_for(train_ids, train_cols);
    const auto z_val = matrix_for(val_ids, val_cols);

    const auto sel = select_hyperparams(z_train, y_train, z_val, y_val, in.combiner.grid, in.combiner.folds,
                                        in.combiner.solver);
    params = refit_final(z_train, y_train, sel.lambda, sel.alpha, in.combiner.solver);
    rec.lambda = sel.lambda;
    rec.alpha = sel.alpha;

    std::vector<int> val_pred(z_val.rows());
    for (std::size_t i = 0; i < z_val.rows(); ++i) val_pred[i] = predict_label(params, z_val.row(i), in.combiner.predict);
    rec.val_accuracy = accuracy(val_pred, y_val);
    rec.val_macro_f1 = macro_f1(val_pred, y_val);

    Checkpoint ckpt{t, rules, params, rec.val_accuracy, rec.val_macro_f1, in.cache.stats()};

    rec.improved = !generation_failed && (t == 1 || rec.val_accuracy > best_acc + cfg.margin_delta);
    if (result.checkpoints.empty() || rec.val_accuracy > result.best.val_accuracy) result.best = ckpt;
    best_acc = std::max(best_acc, rec.val_accuracy);
    streak = rec.improved ? 0 : streak + 1;
    rec.non_improving_streak = streak;

    if (in.run_dir) detail::write_json(*in.run_dir / "checkpoints" / detail::iter_file(t), ckpt);
    result.checkpoints.push_back(std::move(ckpt));
    result.log.records.push_back(std::move(rec));
    result.log.best_iteration = result.best.iteration;

    if (streak >= cfg.patience) {
      result.log.stop_reason = "no improvement above margin for " + std::to_string(cfg.patience) + " iterations";
      break;
    }
    if (t == cfg.max_iterations) result.log.stop_reason = "reached max_iterations";
    persist_log();
  }

  persist_log();
  if (in.run_dir) detail::write_json(*in.run_dir / "best_checkpoint.json", result.best);
  return result;
}

}  // namespace rlie
