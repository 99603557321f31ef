#pragma once

// Domain types shared by the whole pipeline: examples, rules, rule sets,
// ternary judgments and the dense judgment matrix the combiner consumes.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rlie/errors.hpp"

namespace rlie {

using json = nlohmann::json;

// A rule's verdict on one example. Abstention is a regular value.
enum class Judgment : std::int8_t { Negative = -1, Abstain = 0, Positive = 1 };

constexpr int to_int(Judgment z) noexcept { return static_cast<int>(z); }

inline Judgment judgment_from_int(long v) {
  if (v < -1 || v > 1) {
    throw UsageError("judgment value out of range: " + std::to_string(v));
  }
  return static_cast<Judgment>(v);
}

// ---------------------------------------------------------------------------
// Example

struct Example {
  std::string id;
  // Ordered field-name -> text. Single-text tasks carry one entry, paired
  // tasks two ("first_tweet", "second_tweet").
  std::vector<std::pair<std::string, std::string>> fields;
  int label = 0;

  const std::string* field(std::string_view name) const {
    for (const auto& [k, v] : fields) {
      if (k == name) return &v;
    }
    return nullptr;
  }

  bool operator==(const Example&) const = default;
};

inline void validate(const Example& e) {
  if (e.id.empty()) throw IntegrityError("example with empty id");
  if (e.fields.empty()) throw IntegrityError("example '" + e.id + "' has no fields");
  if (e.label != 0 && e.label != 1) {
    throw IntegrityError("example '" + e.id + "' has label " +
                         std::to_string(e.label) + " outside {0,1}");
  }
}

inline void to_json(json& j, const Example& e) {
  json fields = json::object();
  for (const auto& [k, v] : e.fields) fields[k] = v;
  j = json{{"id", e.id}, {"fields", fields}, {"label", e.label}};
}

// ---------------------------------------------------------------------------
// Rule text normalization

// Canonical form used for duplicate detection: trimmed, whitespace runs
// collapsed, a leading "N." enumeration removed.
inline std::string normalize_rule_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  std::size_t digits = 0;
  while (digits < out.size() && std::isdigit(static_cast<unsigned char>(out[digits]))) ++digits;
  // "3.5% growth" is content, "3. Growth" is an enumeration.
  if (digits > 0 && digits < out.size() && out[digits] == '.' &&
      (digits + 1 == out.size() || out[digits + 1] == ' ')) {
    out.erase(0, std::min(out.size(), digits + 2));
  }
  if (out.empty()) throw InvalidRuleError("rule text is empty after normalization");
  return out;
}

// ---------------------------------------------------------------------------
// Rule / RuleSet

enum class RuleOrigin { Initial, Refinement };

inline const char* to_string(RuleOrigin o) {
  return o == RuleOrigin::Initial ? "initial" : "refinement";
}

inline RuleOrigin rule_origin_from_string(std::string_view s) {
  if (s == "initial") return RuleOrigin::Initial;
  if (s == "refinement") return RuleOrigin::Refinement;
  throw UsageError("unknown rule origin '" + std::string(s) + "'");
}

struct Rule {
  std::string rule_id;
  std::string text;
  int born_iteration = 1;
  RuleOrigin origin = RuleOrigin::Initial;

  bool operator==(const Rule&) const = default;
};

inline void to_json(json& j, const Rule& r) {
  j = json{{"rule_id", r.rule_id},
           {"text", r.text},
           {"born_iteration", r.born_iteration},
           {"origin", to_string(r.origin)}};
}

inline void from_json(const json& j, Rule& r) {
  r.rule_id = j.at("rule_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.born_iteration = j.at("born_iteration").get<int>();
  r.origin = rule_origin_from_string(j.at("origin").get<std::string>());
}

// Ordered, capacity-bounded collection of rules with unique ids and unique
// normalized texts. Validated on construction; immutable afterwards.
class RuleSet {
 public:
  explicit RuleSet(std::size_t capacity, std::vector<Rule> rules = {})
      : capacity_(capacity), rules_(std::move(rules)) {
    if (capacity_ < 1) throw UsageError("rule set capacity must be >= 1");
    if (rules_.size() > capacity_) {
      throw IntegrityError("rule set of size " + std::to_string(rules_.size()) +
                           " exceeds capacity " + std::to_string(capacity_));
    }
    std::unordered_set<std::string> ids;
    std::unordered_set<std::string> texts;
    for (const auto& r : rules_) {
      if (r.born_iteration < 1) throw IntegrityError("rule '" + r.rule_id + "' has born_iteration < 1");
      if (!ids.insert(r.rule_id).second) throw IntegrityError("duplicate rule id '" + r.rule_id + "'");
      if (!texts.insert(normalize_rule_text(r.text)).second) {
        throw IntegrityError("duplicate rule text '" + r.text + "'");
      }
    }
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return rules_.size(); }
  bool empty() const noexcept { return rules_.empty(); }
  const std::vector<Rule>& rules() const noexcept { return rules_; }
  const Rule& operator[](std::size_t i) const { return rules_[i]; }

  std::vector<std::string> rule_ids() const {
    std::vector<std::string> ids;
    ids.reserve(rules_.size());
    for (const auto& r : rules_) ids.push_back(r.rule_id);
    return ids;
  }

  bool contains_text(std::string_view text) const {
    const auto key = normalize_rule_text(text);
    return std::any_of(rules_.begin(), rules_.end(),
                       [&](const Rule& r) { return normalize_rule_text(r.text) == key; });
  }

  bool operator==(const RuleSet&) const = default;

 private:
  std::size_t capacity_;
  std::vector<Rule> rules_;
};

inline void to_json(json& j, const RuleSet& s) {
  j = json{{"capacity", s.capacity()}, {"rules", s.rules()}};
}

inline RuleSet rule_set_from_json(const json& j) {
  return RuleSet(j.at("capacity").get<std::size_t>(), j.at("rules").get<std::vector<Rule>>());
}

// ---------------------------------------------------------------------------
// JudgmentMatrix

// Dense examples x rules array of judgments, row-major. Every cell is set.
class JudgmentMatrix {
 public:
  JudgmentMatrix() = default;

  JudgmentMatrix(std::vector<std::string> example_ids, std::vector<std::string> rule_ids,
                 std::vector<Judgment> values)
      : example_ids_(std::move(example_ids)),
        rule_ids_(std::move(rule_ids)),
        values_(std::move(values)) {
    if (values_.size() != example_ids_.size() * rule_ids_.size()) {
      throw IntegrityError("judgment matrix has " + std::to_string(values_.size()) +
                           " cells, expected " +
                           std::to_string(example_ids_.size() * rule_ids_.size()));
    }
    for (std::size_t i = 0; i < example_ids_.size(); ++i) {
      if (!row_of_.emplace(example_ids_[i], i).second) {
        throw IntegrityError("duplicate example id '" + example_ids_[i] + "' in judgment matrix");
      }
    }
    std::unordered_set<std::string> seen;
    for (const auto& r : rule_ids_) {
      if (!seen.insert(r).second) throw IntegrityError("duplicate rule id '" + r + "' in judgment matrix");
    }
  }

  // Assemble from per-rule columns, each ordered like `example_ids`.
  static JudgmentMatrix from_columns(std::vector<std::string> example_ids,
                                     std::vector<std::string> rule_ids,
                                     const std::vector<std::vector<Judgment>>& columns) {
    if (columns.size() != rule_ids.size()) throw IntegrityError("column count does not match rule ids");
    const std::size_t n = example_ids.size();
    const std::size_t m = rule_ids.size();
    std::vector<Judgment> values(n * m);
    for (std::size_t j = 0; j < m; ++j) {
      if (columns[j].size() != n) {
        throw IntegrityError("column for rule '" + rule_ids[j] + "' has wrong length");
      }
      for (std::size_t i = 0; i < n; ++i) values[i * m + j] = columns[j][i];
    }
    return JudgmentMatrix(std::move(example_ids), std::move(rule_ids), std::move(values));
  }

  std::size_t rows() const noexcept { return example_ids_.size(); }
  std::size_t cols() const noexcept { return rule_ids_.size(); }
  const std::vector<std::string>& example_ids() const noexcept { return example_ids_; }
  const std::vector<std::string>& rule_ids() const noexcept { return rule_ids_; }

  Judgment at(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }

  std::span<const Judgment> row(std::size_t i) const {
    return std::span<const Judgment>(values_).subspan(i * cols(), cols());
  }

  std::vector<Judgment> column(std::size_t j) const {
    std::vector<Judgment> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = at(i, j);
    return out;
  }

  std::optional<std::size_t> row_index(std::string_view example_id) const {
    auto it = row_of_.find(std::string(example_id));
    if (it == row_of_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> column_index(std::string_view rule_id) const {
    for (std::size_t j = 0; j < rule_ids_.size(); ++j) {
      if (rule_ids_[j] == rule_id) return j;
    }
    return std::nullopt;
  }

  bool operator==(const JudgmentMatrix& o) const {
    return example_ids_ == o.example_ids_ && rule_ids_ == o.rule_ids_ && values_ == o.values_;
  }

 private:
  std::vector<std::string> example_ids_;
  std::vector<std::string> rule_ids_;
  std::vector<Judgment> values_;
  std::unordered_map<std::string, std::size_t> row_of_;
};

// The example's judgments in rule-column order.
inline std::vector<Judgment> feature_row(const JudgmentMatrix& m, std::string_view example_id) {
  auto i = m.row_index(example_id);
  if (!i) throw LookupError("example '" + std::string(example_id) + "' not in judgment matrix");
  auto r = m.row(*i);
  return {r.begin(), r.end()};
}

// Fraction of non-abstaining judgments.
inline double coverage(std::span<const Judgment> column) {
  if (column.empty()) throw UsageError("coverage of an empty column");
  const auto covered = std::count_if(column.begin(), column.end(),
                                     [](Judgment z) { return z != Judgment::Abstain; });
  return static_cast<double>(covered) / static_cast<double>(column.size());
}

// ---------------------------------------------------------------------------
// SplitBundle

struct SplitBundle {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  std::uint64_t seed = 0;
};

inline void validate(const SplitBundle& s) {
  if (s.train.empty() || s.validation.empty() || s.test.empty()) {
    throw IntegrityError("every split must be non-empty");
  }
  std::unordered_set<std::string> ids;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (const auto& e : *part) {
      if (!ids.insert(e.id).second) throw IntegrityError("example '" + e.id + "' appears in two splits");
    }
  }
}

inline std::vector<int> labels_of(std::span<const Example> examples) {
  std::vector<int> y;
  y.reserve(examples.size());
  for (const auto& e : examples) y.push_back(e.label);
  return y;
}

inline std::vector<std::string> ids_of(std::span<const Example> examples) {
  std::vector<std::string> ids;
  ids.reserve(examples.size());
  for (const auto& e : examples) ids.push_back(e.id);
  return ids;
}

}  // namespace rlie
