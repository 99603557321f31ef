#pragma once

// Candidate rule generation: initial proposals from sampled examples and
// refinement proposals from hard examples plus the current rules.

#include <cctype>
#include <string>
#include <unordered_set>
#include <vector>

#include "rlie/backend.hpp"
#include "rlie/core.hpp"
#include "rlie/dataset.hpp"
#include "rlie/prompt.hpp"

namespace rlie {

// One block per example, in order, separated by blank lines. The label is
// rendered through the manifest's token lexicon.
inline std::string render_observations(std::span<const Example> examples, const PromptTemplate& tmpl,
                                       const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : examples) {
    Binding b;
    for (const auto& name : tmpl.declared()) {
      if (name == "label") continue;
      const auto* value = e.field(name);
      if (!value) throw TemplateError("example '" + e.id + "' is missing field '" + name + "'");
      b[name] = *value;
    }
    b["label"] = manifest.token_for_label(e.label);
    if (!out.empty()) out += "\n\n";
    out += tmpl.render(b).user;
  }
  return out;
}

// Items of a "1. ..." list in order. Lines before the first item are
// ignored; an item continues over following non-numbered lines until a
// blank line or the next numbered line. Surrounding [brackets] and a
// trailing period after them are stripped.
inline std::vector<std::string> parse_numbered_list(std::string_view text) {
  std::vector<std::string> items;
  bool open = false;

  auto finish = [&] {
    if (!open) return;
    auto& s = items.back();
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    s.erase(0, std::min(s.size(), s.find_first_not_of(" \t\r")));
    if (s.size() >= 2 && s.front() == '[') {
      auto close = s.rfind(']');
      if (close != std::string::npos && s.find_first_not_of(" .", close + 1) == std::string::npos) {
        s = s.substr(1, close - 1);
      }
    }
    std::string collapsed;
    bool space = false;
    for (char c : s) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        space = !collapsed.empty();
        continue;
      }
      if (space) collapsed.push_back(' ');
      space = false;
      collapsed.push_back(c);
    }
    if (collapsed.empty()) {
      items.pop_back();
    } else {
      s = std::move(collapsed);
    }
    open = false;
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;

    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    line.remove_prefix(b);
    if (line.empty()) {
      finish();
      continue;
    }
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    const bool numbered = digits > 0 && digits < line.size() && line[digits] == '.' &&
                          (digits + 1 == line.size() || line[digits + 1] == '[' ||
                           std::isspace(static_cast<unsigned char>(line[digits + 1])));
    if (numbered) {
      finish();
      items.emplace_back(line.substr(digits + 1));
      open = true;
    } else if (open) {
      items.back() += ' ';
      items.back() += line;
    }
    if (nl == text.size()) break;
  }
  finish();
  return items;
}

inline std::string format_numbered_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + items[i];
  }
  return out;
}

enum class GenerationMode { Initial, Refinement };

struct GenerationRequest {
  GenerationMode mode = GenerationMode::Initial;
  std::vector<Example> observations;
  std::vector<Rule> prior_rules;
  std::size_t num_hypotheses = 5;
  int iteration = 1;
};

inline void validate(const GenerationRequest& r) {
  if (r.num_hypotheses < 1) throw UsageError("num_hypotheses must be >= 1");
  if (r.iteration < 1) throw UsageError("iteration must be >= 1");
  if (r.mode == GenerationMode::Refinement && r.prior_rules.empty()) {
    throw UsageError("refinement generation requires prior rules");
  }
  if (r.mode == GenerationMode::Initial && !r.prior_rules.empty()) {
    throw UsageError("initial generation must not carry prior rules");
  }
}

inline ChatRequest generation_prompt(const GenerationRequest& req, const TemplateSet& templates,
                                     const DatasetManifest& manifest) {
  validate(req);
  Binding b;
  b["num_hypotheses"] = std::to_string(req.num_hypotheses);
  b["observations"] = render_observations(req.observations, templates.observation, manifest);
  ChatRequest chat;
  chat.iteration = req.iteration;
  if (req.mode == GenerationMode::Initial) {
    chat.prompt = templates.generation_initial.render(b);
    chat.purpose = Purpose::GenerateInitial;
  } else {
    std::vector<std::string> texts;
    for (const auto& r : req.prior_rules) texts.push_back(r.text);
    b["hypotheses_text"] = format_numbered_list(texts);
    chat.prompt = templates.generation_refine.render(b);
    chat.purpose = Purpose::GenerateRefinement;
    chat.rules = req.prior_rules;
  }
  return chat;
}

// Parses a generator reply into at most num_hypotheses rules, dropping
// items that duplicate an earlier item of the same batch. Rule ids are
// "t<iteration>-r<k>".
inline std::vector<Rule> rules_from_response(const std::string& response, const GenerationRequest& req) {
  const auto origin = req.mode == GenerationMode::Initial ? RuleOrigin::Initial : RuleOrigin::Refinement;
  std::vector<Rule> rules;
  std::unordered_set<std::string> seen;
  for (const auto& item : parse_numbered_list(response)) {
    if (rules.size() >= req.num_hypotheses) break;
    std::string text;
    try {
      text = normalize_rule_text(item);
    } catch (const InvalidRuleError&) {
      continue;
    }
    if (!seen.insert(text).second) continue;
    rules.push_back({"t" + std::to_string(req.iteration) + "-r" + std::to_string(rules.size() + 1), text,
                     req.iteration, origin});
  }
  if (rules.empty()) throw GenerationError("generator reply contained no rules: " + response);
  return rules;
}

struct GenerationResult {
  ChatRequest request;
  std::string raw_response;
  std::vector<Rule> rules;
};

inline GenerationResult generate_rules(Backend& backend, const GenerationRequest& req,
                                       const TemplateSet& templates, const DatasetManifest& manifest) {
  GenerationResult out;
  out.request = generation_prompt(req, templates, manifest);
  out.raw_response = backend.complete(out.request);
  out.rules = rules_from_response(out.raw_response, req);
  return out;
}

}  // namespace rlie
