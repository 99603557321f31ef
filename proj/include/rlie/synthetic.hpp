#pragma once

// Offline stand-ins for the language model: a keyword-predicate judge with
// optional seeded noise, a scripted rule generator, and a vote-based
// inference responder. Together with make_planted_task they let the whole
// pipeline run deterministically without network access.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "rlie/backend.hpp"
#include "rlie/core.hpp"
#include "rlie/dataset.hpp"
#include "rlie/rng.hpp"

namespace rlie {

// Judgment of one rule: `polarity` when any keyword occurs, `-polarity`
// otherwise. With a non-empty scope the rule abstains unless one of the
// scope words occurs. Matching is case-insensitive substring search over
// `field`, or over all fields when `field` is empty.
struct KeywordPredicate {
  std::string rule;
  std::vector<std::string> keywords;
  int polarity = 1;
  std::vector<std::string> scope;
  std::string field;

  bool operator==(const KeywordPredicate&) const = default;
};

struct SyntheticJudgeSpec {
  std::vector<KeywordPredicate> predicates;
  std::vector<std::string> planted;           // ground-truth rule texts
  double noise = 0.0;                         // sign-flip probability, in [0,1)
  std::uint64_t noise_seed = 0;
  std::vector<std::string> abstain_keywords;  // any present -> every rule abstains

  bool operator==(const SyntheticJudgeSpec&) const = default;
};

inline void to_json(json& j, const KeywordPredicate& p) {
  j = json{{"rule", p.rule}, {"keywords", p.keywords}, {"polarity", p.polarity},
           {"scope", p.scope}, {"field", p.field}};
}

inline void from_json(const json& j, KeywordPredicate& p) {
  p.rule = j.at("rule").get<std::string>();
  p.keywords = j.at("keywords").get<std::vector<std::string>>();
  p.polarity = j.value("polarity", 1);
  p.scope = j.value("scope", std::vector<std::string>{});
  p.field = j.value("field", std::string{});
}

inline void to_json(json& j, const SyntheticJudgeSpec& s) {
  j = json{{"predicates", s.predicates}, {"planted", s.planted}, {"noise", s.noise},
           {"noise_seed", s.noise_seed}, {"abstain_keywords", s.abstain_keywords}};
}

inline void from_json(const json& j, SyntheticJudgeSpec& s) {
  s.predicates = j.value("predicates", std::vector<KeywordPredicate>{});
  s.planted = j.value("planted", std::vector<std::string>{});
  s.noise = j.value("noise", 0.0);
  s.noise_seed = j.value("noise_seed", std::uint64_t{0});
  s.abstain_keywords = j.value("abstain_keywords", std::vector<std::string>{});
}

namespace detail {

inline bool example_contains(const Example& e, const std::string& word, const std::string& field) {
  const auto needle = lower(word);
  for (const auto& [k, v] : e.fields) {
    if (!field.empty() && k != field) continue;
    if (lower(v).find(needle) != std::string::npos) return true;
  }
  return false;
}

inline bool contains_any(const Example& e, const std::vector<std::string>& words, const std::string& field) {
  for (const auto& w : words) {
    if (example_contains(e, w, field)) return true;
  }
  return false;
}

}  // namespace detail

// Predicate for an unregistered rule, read from its text: single-quoted
// terms become keywords, the word "negative" flips polarity. Rules with no
// quoted term have no predicate.
inline std::optional<KeywordPredicate> extract_predicate(const std::string& rule_text) {
  static const std::regex quoted("'([^']+)'");
  KeywordPredicate p;
  p.rule = rule_text;
  for (auto it = std::sregex_iterator(rule_text.begin(), rule_text.end(), quoted);
       it != std::sregex_iterator(); ++it) {
    p.keywords.push_back((*it)[1].str());
  }
  if (p.keywords.empty()) return std::nullopt;
  p.polarity = detail::lower(rule_text).find("negative") != std::string::npos ? -1 : 1;
  return p;
}

class SyntheticJudge {
 public:
  explicit SyntheticJudge(SyntheticJudgeSpec spec) : spec_(std::move(spec)) {
    if (!(spec_.noise >= 0.0 && spec_.noise < 1.0)) {
      throw ConfigError("synthetic judge noise must lie in [0,1), got " + std::to_string(spec_.noise));
    }
    for (const auto& p : spec_.predicates) {
      if (p.polarity != 1 && p.polarity != -1) throw ConfigError("predicate polarity must be +1 or -1");
      by_rule_.emplace(normalize_rule_text(p.rule), p);
    }
  }

  const SyntheticJudgeSpec& spec() const noexcept { return spec_; }

  Judgment operator()(const Rule& rule, const Example& example) const {
    if (detail::contains_any(example, spec_.abstain_keywords, "")) return Judgment::Abstain;

    const auto key = normalize_rule_text(rule.text);
    std::optional<KeywordPredicate> pred;
    if (auto it = by_rule_.find(key); it != by_rule_.end()) {
      pred = it->second;
    } else {
      pred = extract_predicate(rule.text);
    }
    if (!pred) return Judgment::Abstain;
    if (!pred->scope.empty() && !detail::contains_any(example, pred->scope, pred->field)) {
      return Judgment::Abstain;
    }

    int z = detail::contains_any(example, pred->keywords, pred->field) ? pred->polarity : -pred->polarity;
    if (spec_.noise > 0.0 && keyed_unit(spec_.noise_seed, key, example.id) < spec_.noise) z = -z;
    return judgment_from_int(z);
  }

 private:
  SyntheticJudgeSpec spec_;
  std::unordered_map<std::string, KeywordPredicate> by_rule_;
};

inline Judgment synthetic_judge(const SyntheticJudge& judge, const Rule& rule, const Example& example) {
  return judge(rule, example);
}

// Canned generator replies. Iteration 1 gets initial[0], iteration t >= 2
// gets refinement[t-2]; requests without an iteration consume the lists in
// call order. Past the end the generator replies with text that contains no
// rules.
struct GeneratorScript {
  std::vector<std::string> initial;
  std::vector<std::string> refinement;

  bool operator==(const GeneratorScript&) const = default;
};

inline void to_json(json& j, const GeneratorScript& g) {
  j = json{{"initial", g.initial}, {"refinement", g.refinement}};
}

inline void from_json(const json& j, GeneratorScript& g) {
  g.initial = j.value("initial", std::vector<std::string>{});
  g.refinement = j.value("refinement", std::vector<std::string>{});
}

// One backend serving all purposes offline:
//  - Judge: the synthetic judge, answered as "{Final answer: <token>}".
//  - Generate: the next scripted reply.
//  - Infer: sign of the judgment vote over the prompt's rules, weighted
//    when weights are supplied; ties go to the reference label, else positive.
class SyntheticBackend : public Backend {
 public:
  SyntheticBackend(SyntheticJudgeSpec spec, GeneratorScript script, DatasetManifest manifest,
                   std::size_t max_in_flight = 1)
      : judge_(std::move(spec)),
        script_(std::move(script)),
        manifest_(std::move(manifest)),
        max_in_flight_(max_in_flight) {}

  BackendCapabilities capabilities() const override { return {"synthetic", max_in_flight_, false}; }

  std::string model_name() const override {
    const auto& s = judge_.spec();
    return "synthetic(noise=" + std::to_string(s.noise) + ",seed=" + std::to_string(s.noise_seed) + ")";
  }

  std::string complete(const ChatRequest& req) override {
    switch (req.purpose) {
      case Purpose::Judge: {
        if (!req.rule || !req.example) throw BackendError("synthetic judge request without rule/example");
        const auto z = judge_(*req.rule, *req.example);
        const auto& token = z == Judgment::Positive   ? manifest_.positive_token
                            : z == Judgment::Negative ? manifest_.negative_token
                                                      : manifest_.abstain_token;
        return "{Final answer: " + token + "}";
      }
      case Purpose::GenerateInitial:
      case Purpose::GenerateRefinement: {
        // Replies are keyed by iteration when the request carries one, so a
        // resumed run that reuses persisted replies stays on script.
        std::lock_guard lock(mu_);
        const bool initial = req.purpose == Purpose::GenerateInitial;
        const auto& list = initial ? script_.initial : script_.refinement;
        auto& cursor = initial ? initial_cursor_ : refine_cursor_;
        std::size_t index = cursor;
        if (req.iteration >= 1) index = initial ? 0 : static_cast<std::size_t>(std::max(req.iteration - 2, 0));
        cursor = index + 1;
        if (index >= list.size()) return "I have no further hypotheses to propose.";
        return list[index];
      }
      case Purpose::Infer: {
        if (!req.example) throw BackendError("synthetic inference request without example");
        double score = req.bias.value_or(0.0);
        for (std::size_t j = 0; j < req.rules.size(); ++j) {
          const double w = req.weights.empty() ? 1.0 : req.weights[j];
          score += w * to_int(judge_(req.rules[j], *req.example));
        }
        int label = score > 0 ? 1 : 0;
        if (score == 0) label = req.reference_label.value_or(1);
        return "{Final answer: " + manifest_.token_for_label(label) + "}";
      }
    }
    throw BackendError("unknown request purpose");
  }

 private:
  SyntheticJudge judge_;
  GeneratorScript script_;
  DatasetManifest manifest_;
  std::size_t max_in_flight_;
  std::mutex mu_;
  std::size_t initial_cursor_ = 0;
  std::size_t refine_cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Planted task

// Binary task whose label is a disjunction of keyword indicators. Each
// planted keyword appears independently with probability `planted_rate`,
// each distractor keyword with `distractor_rate` (independent of the label),
// each scope word with `scope_rate`.
struct PlantedTaskConfig {
  std::size_t n_examples = 700;
  std::vector<std::string> planted_keywords{"urgent", "free", "winner"};
  double planted_rate = 0.25;
  std::vector<std::string> distractor_keywords{"meeting", "weather", "lunch",   "report",
                                               "holiday", "coffee",  "project", "garden",
                                               "music",   "travel",  "budget",  "sports"};
  double distractor_rate = 0.4;
  std::vector<std::string> scope_words{"quarterly", "ferry"};
  double scope_rate = 0.05;
  double noise = 0.0;
  std::uint64_t seed = 7;
};

struct PlantedTask {
  std::vector<Example> examples;
  SyntheticJudgeSpec judge_spec;
  GeneratorScript script;
  DatasetManifest manifest;
};

inline std::string planted_rule_text(const std::string& keyword) {
  return "Texts containing '" + keyword + "' are positive";
}

inline PlantedTask make_planted_task(const PlantedTaskConfig& cfg) {
  static const std::vector<std::string> kFiller{"the", "a",    "we",  "today", "and",  "please",
                                                "see", "team", "new", "note",  "with", "about"};
  PlantedTask task;
  task.manifest = {"synthetic", "positive", "negative", "not applicable", {"text"}};

  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.n_examples; ++i) {
    std::vector<std::string> words;
    for (int f = 0; f < 6; ++f) words.push_back(kFiller[rng.below(kFiller.size())]);
    bool positive = false;
    for (const auto& k : cfg.planted_keywords) {
      if (rng.unit() < cfg.planted_rate) {
        words.push_back(k);
        positive = true;
      }
    }
    for (const auto& d : cfg.distractor_keywords) {
      if (rng.unit() < cfg.distractor_rate) words.push_back(d);
    }
    for (const auto& s : cfg.scope_words) {
      if (rng.unit() < cfg.scope_rate) words.push_back(s);
    }
    rng.shuffle(words);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;

    char id[32];
    std::snprintf(id, sizeof id, "ex%04zu", i);
    task.examples.push_back({id, {{"text", text}}, positive ? 1 : 0});
  }

  auto& spec = task.judge_spec;
  spec.noise = cfg.noise;
  spec.noise_seed = cfg.seed ^ 0x5eedULL;
  for (const auto& k : cfg.planted_keywords) {
    spec.predicates.push_back({planted_rule_text(k), {k}, 1, {}, ""});
    spec.planted.push_back(planted_rule_text(k));
  }
  std::vector<std::string> distractors;
  for (const auto& d : cfg.distractor_keywords) {
    distractors.push_back(planted_rule_text(d));
    spec.predicates.push_back({distractors.back(), {d}, 1, {}, ""});
  }
  // Low-coverage distractors: only speak when a rare scope word is present.
  std::vector<std::string> scoped;
  for (std::size_t s = 0; s < cfg.scope_words.size() && s < cfg.distractor_keywords.size(); ++s) {
    const auto& d = cfg.distractor_keywords[s];
    const auto& w = cfg.scope_words[s];
    scoped.push_back("When a text mentions '" + w + "', containing '" + d + "' means positive");
    spec.predicates.push_back({scoped.back(), {d}, 1, {w}, ""});
  }

  // Script: planted rules arrive one per generation call, each among
  // distractors, so recovery needs the refinement loop.
  auto numbered = [](const std::vector<std::string>& items) {
    std::string out = "Proposed hypotheses:\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
      out += std::to_string(i + 1) + ". [" + items[i] + "]\n";
    }
    return out;
  };
  std::size_t next_distractor = 0;
  auto take_distractors = [&](std::size_t count) {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < count && !distractors.empty(); ++c) {
      out.push_back(distractors[next_distractor++ % distractors.size()]);
    }
    return out;
  };

  const auto& planted = spec.planted;
  {
    std::vector<std::string> batch;
    if (!planted.empty()) batch.push_back(planted[0]);
    for (auto& d : take_distractors(7)) batch.push_back(d);
    for (auto& s : scoped) batch.push_back(s);
    task.script.initial.push_back(numbered(batch));
  }
  for (std::size_t p = 1; p < planted.size(); ++p) {
    std::vector<std::string> batch = take_distractors(2);
    batch.push_back(planted[p]);
    for (auto& d : take_distractors(2)) batch.push_back(d);
    task.script.refinement.push_back(numbered(batch));
  }
  for (int extra = 0; extra < 3; ++extra) task.script.refinement.push_back(numbered(take_distractors(5)));
  return task;
}

}  // namespace rlie
