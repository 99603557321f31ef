#pragma once

// Inference strategies on the test split:
//   E1 linear-only                 the combiner's thresholded probability
//   E2 llm+rules                   model sees the rule texts
//   E3 llm+rules+weights           ... plus weights and bias
//   E4 llm+rules+weights+linear    ... plus the combiner's label as a reference
// and the report (per-run metrics, mean and sample std over runs).

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rlie/backend.hpp"
#include "rlie/combiner.hpp"
#include "rlie/genesis.hpp"
#include "rlie/judge.hpp"
#include "rlie/loop.hpp"
#include "rlie/metrics.hpp"

namespace rlie {

enum class StrategyKind { LinearOnly, LlmRules, LlmRulesWeights, LlmRulesWeightsPrediction };

inline constexpr StrategyKind kAllStrategies[] = {StrategyKind::LinearOnly, StrategyKind::LlmRules,
                                                  StrategyKind::LlmRulesWeights,
                                                  StrategyKind::LlmRulesWeightsPrediction};

inline const char* short_name(StrategyKind s) {
  switch (s) {
    case StrategyKind::LinearOnly: return "E1";
    case StrategyKind::LlmRules: return "E2";
    case StrategyKind::LlmRulesWeights: return "E3";
    case StrategyKind::LlmRulesWeightsPrediction: return "E4";
  }
  return "?";
}

inline const char* long_name(StrategyKind s) {
  switch (s) {
    case StrategyKind::LinearOnly: return "linear-only";
    case StrategyKind::LlmRules: return "llm+rules";
    case StrategyKind::LlmRulesWeights: return "llm+rules+weights";
    case StrategyKind::LlmRulesWeightsPrediction: return "llm+rules+weights+linear";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string_view name) {
  const auto key = detail::lower(name);
  for (auto s : kAllStrategies) {
    if (key == detail::lower(short_name(s)) || key == long_name(s)) return s;
  }
  std::string valid;
  for (auto s : kAllStrategies) valid += std::string(valid.empty() ? "" : ", ") + short_name(s) + " (" + long_name(s) + ")";
  throw UsageError("unknown strategy '" + std::string(name) + "'; valid: " + valid);
}

namespace detail {

inline const CombinerParams& aligned_params(const Checkpoint& c) {
  if (!c.params) throw IntegrityError("checkpoint has no combiner parameters");
  if (c.params->rule_ids != c.rules.rule_ids()) {
    throw IntegrityError("checkpoint combiner weights do not match its rule set");
  }
  return *c.params;
}

}  // namespace detail

// E1.
inline int infer_linear(const Checkpoint& checkpoint, std::span<const Judgment> judged_row,
                        const PredictConfig& config = {}) {
  const auto& params = detail::aligned_params(checkpoint);
  if (judged_row.size() != params.beta.size()) {
    throw UsageError("judged row has " + std::to_string(judged_row.size()) + " entries, checkpoint has " +
                     std::to_string(params.beta.size()) + " rules");
  }
  return predict_label(params, judged_row, config);
}

// Rule list for E2: "1. text" lines in rule-set order.
inline std::string render_rule_list(const RuleSet& rules) {
  std::vector<std::string> texts;
  for (const auto& r : rules.rules()) texts.push_back(r.text);
  return format_numbered_list(texts);
}

// Rule list for E3/E4: "1. text (weight: 0.1234)".
inline std::string render_weighted_rule_list(const RuleSet& rules, const CombinerParams& params) {
  std::vector<std::string> texts;
  for (std::size_t j = 0; j < rules.size(); ++j) {
    texts.push_back(rules[j].text + " (weight: " + format_fixed(params.beta[j]) + ")");
  }
  return format_numbered_list(texts);
}

inline ChatRequest inference_request(StrategyKind strategy, const Checkpoint& checkpoint, const Example& example,
                                     const DatasetManifest& manifest, const TemplateSet& templates,
                                     std::optional<int> linear_label = std::nullopt) {
  if (strategy == StrategyKind::LinearOnly) throw UsageError("E1 does not query a model");
  ChatRequest req;
  req.purpose = Purpose::Infer;
  req.example = example;
  req.rules = checkpoint.rules.rules();

  Binding b;
  for (const auto& [k, v] : example.fields) b[k] = v;
  const PromptTemplate* tmpl = &templates.infer_rules;
  if (strategy == StrategyKind::LlmRules) {
    b["hypotheses"] = render_rule_list(checkpoint.rules);
  } else {
    const auto& params = detail::aligned_params(checkpoint);
    b["weighted_hypotheses"] = render_weighted_rule_list(checkpoint.rules, params);
    b["bias"] = format_fixed(params.bias);
    b["pos_label"] = manifest.positive_token;
    b["neg_label"] = manifest.negative_token;
    req.weights = params.beta;
    req.bias = params.bias;
    tmpl = &templates.infer_weights;
    if (strategy == StrategyKind::LlmRulesWeightsPrediction) {
      if (!linear_label) throw UsageError("E4 requires the linear model's label");
      b["model_prediction"] = manifest.token_for_label(*linear_label);
      req.reference_label = *linear_label;
      tmpl = &templates.infer_weights_label;
    }
  }
  for (const auto& name : tmpl->declared()) {
    if (!b.contains(name)) throw TemplateError("example '" + example.id + "' is missing field '" + name + "'");
  }
  req.prompt = tmpl->render(b);
  return req;
}

// E2-E4: binary answer; abstaining or malformed replies raise StrategyError.
inline int infer_llm(Backend& backend, StrategyKind strategy, const Checkpoint& checkpoint, const Example& example,
                     const DatasetManifest& manifest, const TemplateSet& templates,
                     std::optional<int> linear_label = std::nullopt) {
  const auto response = backend.complete(inference_request(strategy, checkpoint, example, manifest, templates,
                                                           linear_label));
  try {
    return parse_final_answer(response, manifest, false) == Judgment::Positive ? 1 : 0;
  } catch (const ParseError& e) {
    throw StrategyError(std::string(short_name(strategy)) + ": " + e.what(), e.raw());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct ExamplePrediction {
  std::string example_id;
  int label = 0;
  std::optional<int> prediction;
  std::string error;  // set when the reply could not be parsed
};

struct StrategyResult {
  StrategyKind strategy = StrategyKind::LinearOnly;
  std::vector<ExamplePrediction> predictions;
  double accuracy = 0.0;  // over parsed predictions
  double macro_f1 = 0.0;
  double parse_coverage = 1.0;  // fraction of examples with a parsed answer
};

struct EvalContext {
  const DatasetManifest& manifest;
  const TemplateSet& templates;
  JudgmentCache& cache;
  Backend& judge;
  Backend& inference;
  PredictConfig predict;
};

// Judged test rows for the checkpoint's rules (through the cache).
inline JudgmentMatrix judge_test_rows(const Checkpoint& checkpoint, std::span<const Example> test,
                                      const EvalContext& ctx) {
  if (checkpoint.rules.empty()) {
    return JudgmentMatrix(ids_of(test), {}, {});
  }
  return judge_matrix(ctx.judge, ctx.templates.judge, checkpoint.rules.rules(), test, ctx.cache, ctx.manifest);
}

// Runs one strategy over every test example exactly once. Replies that fail
// to parse are recorded, not imputed; metrics cover the parsed ones.
inline StrategyResult evaluate_strategy(StrategyKind strategy, const Checkpoint& checkpoint,
                                        std::span<const Example> test, const JudgmentMatrix& test_rows,
                                        const EvalContext& ctx) {
  if (strategy != StrategyKind::LlmRules) detail::aligned_params(checkpoint);
  if (test_rows.rule_ids() != checkpoint.rules.rule_ids()) {
    throw IntegrityError("judged test rows do not match the checkpoint's rules");
  }
  StrategyResult out;
  out.strategy = strategy;
  std::vector<int> preds, labels;
  for (const auto& e : test) {
    ExamplePrediction p{e.id, e.label, std::nullopt, {}};
    const auto row_index = test_rows.row_index(e.id);
    if (!row_index) throw IntegrityError("no judged row for test example '" + e.id + "'");
    const auto row = test_rows.row(*row_index);
    try {
      if (strategy == StrategyKind::LinearOnly) {
        p.prediction = infer_linear(checkpoint, row, ctx.predict);
      } else {
        std::optional<int> reference;
        if (strategy == StrategyKind::LlmRulesWeightsPrediction) reference = infer_linear(checkpoint, row, ctx.predict);
        p.prediction = infer_llm(ctx.inference, strategy, checkpoint, e, ctx.manifest, ctx.templates, reference);
      }
      preds.push_back(*p.prediction);
      labels.push_back(e.label);
    } catch (const StrategyError& err) {
      p.error = err.what();
    }
    out.predictions.push_back(std::move(p));
  }
  out.parse_coverage = test.empty() ? 0.0 : static_cast<double>(preds.size()) / static_cast<double>(test.size());
  if (!preds.empty()) {
    out.accuracy = accuracy(preds, labels);
    out.macro_f1 = macro_f1(preds, labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct RunEvaluation {
  std::uint64_t seed = 0;
  int checkpoint_iteration = 0;
  std::vector<StrategyResult> strategies;
};

struct EvalReport {
  std::vector<RunEvaluation> runs;
};

struct StrategySummary {
  StrategyKind strategy;
  MetricSummary accuracy;
  MetricSummary macro_f1;
  double mean_parse_coverage = 0.0;
};

inline std::vector<StrategySummary> summarize(const EvalReport& report) {
  std::vector<StrategySummary> out;
  for (auto s : kAllStrategies) {
    std::vector<double> acc, f1, cov;
    for (const auto& run : report.runs) {
      for (const auto& r : run.strategies) {
        if (r.strategy != s) continue;
        acc.push_back(r.accuracy);
        f1.push_back(r.macro_f1);
        cov.push_back(r.parse_coverage);
      }
    }
    if (acc.empty()) continue;
    out.push_back({s, aggregate_runs(acc), aggregate_runs(f1), aggregate_runs(cov).mean});
  }
  return out;
}

inline void to_json(json& j, const MetricSummary& m) {
  j = json{{"mean", m.mean}, {"std", m.std}, {"n", m.n}, {"std_undefined", m.std_undefined}};
}

inline void to_json(json& j, const EvalReport& report) {
  j = json::object();
  j["runs"] = json::array();
  for (const auto& run : report.runs) {
    json jr{{"seed", run.seed}, {"checkpoint_iteration", run.checkpoint_iteration}, {"strategies", json::array()}};
    for (const auto& s : run.strategies) {
      json preds = json::array();
      for (const auto& p : s.predictions) {
        json jp{{"example_id", p.example_id}, {"label", p.label}, {"strategy", short_name(s.strategy)}};
        jp["prediction"] = p.prediction ? json(*p.prediction) : json(nullptr);
        if (!p.error.empty()) jp["error"] = p.error;
        preds.push_back(std::move(jp));
      }
      jr["strategies"].push_back({{"strategy", short_name(s.strategy)},
                                  {"name", long_name(s.strategy)},
                                  {"accuracy", s.accuracy},
                                  {"macro_f1", s.macro_f1},
                                  {"parse_coverage", s.parse_coverage},
                                  {"predictions", preds}});
    }
    j["runs"].push_back(std::move(jr));
  }
  j["summary"] = json::array();
  for (const auto& s : summarize(report)) {
    j["summary"].push_back({{"strategy", short_name(s.strategy)},
                            {"name", long_name(s.strategy)},
                            {"accuracy", s.accuracy},
                            {"macro_f1", s.macro_f1},
                            {"mean_parse_coverage", s.mean_parse_coverage}});
  }
}

// Aligned plain-text table, one row per strategy, metrics in percent as
// "mean ± std".
inline std::string render_table(const EvalReport& report) {
  auto cell = [](const MetricSummary& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f%s", 100.0 * m.mean, 100.0 * m.std, m.std_undefined ? "*" : "");
    return std::string(buf);
  };
  const auto rows = summarize(report);
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %-18s %-18s %s\n", "Strategy", "Accuracy", "Macro-F1", "Parsed");
  out << line;
  for (const auto& r : rows) {
    const auto name = std::string(short_name(r.strategy)) + " " + long_name(r.strategy);
    // The "±" sign is two bytes in UTF-8; widen the field to keep columns aligned.
    std::snprintf(line, sizeof line, "%-32s %-19s %-19s %.1f%%\n", name.c_str(), cell(r.accuracy).c_str(),
                  cell(r.macro_f1).c_str(), 100.0 * r.mean_parse_coverage);
    out << line;
  }
  if (std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.accuracy.std_undefined; })) {
    out << "* single run: standard deviation undefined, shown as 0\n";
  }
  return out.str();
}

}  // namespace rlie
