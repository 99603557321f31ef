#pragma once

// Versioned prompt templates with ${placeholder} substitution, loaded from
// YAML files on disk:
//
//   name: judge
//   version: 3
//   placeholders: [hypothesis, first_tweet, second_tweet]
//   system: |-
//     ...
//   user: |-
//     Pattern: ${hypothesis}
//
// The observation template uses `multi_content` in place of system/user.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "rlie/errors.hpp"

namespace rlie {

using Binding = std::map<std::string, std::string, std::less<>>;

struct RenderedPrompt {
  std::string system;
  std::string user;

  bool operator==(const RenderedPrompt&) const = default;
};

// Names of every ${...} placeholder in `text`, in order of first appearance.
inline std::vector<std::string> placeholders_in(std::string_view text) {
  std::vector<std::string> names;
  std::set<std::string, std::less<>> seen;
  std::size_t pos = 0;
  while ((pos = text.find("${", pos)) != std::string_view::npos) {
    const auto close = text.find('}', pos + 2);
    if (close == std::string_view::npos) throw TemplateError("unterminated placeholder in template");
    std::string name(text.substr(pos + 2, close - pos - 2));
    if (name.empty()) throw TemplateError("empty placeholder name in template");
    if (seen.insert(name).second) names.push_back(name);
    pos = close + 1;
  }
  return names;
}

// Single pass: substituted values are never re-expanded.
inline std::string substitute(std::string_view text, const Binding& binding,
                              std::string_view template_name) {
  std::string out;
  out.reserve(text.size() * 2);
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("${", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const auto close = text.find('}', open + 2);
    if (close == std::string_view::npos) throw TemplateError("unterminated placeholder in template");
    out.append(text.substr(pos, open - pos));
    const auto name = text.substr(open + 2, close - open - 2);
    auto it = binding.find(name);
    if (it == binding.end()) {
      throw TemplateError("template '" + std::string(template_name) + "' has no binding for ${" +
                          std::string(name) + "}");
    }
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

class PromptTemplate {
 public:
  PromptTemplate() = default;

  PromptTemplate(std::string name, int version, std::vector<std::string> declared,
                 std::string system, std::string user)
      : name_(std::move(name)),
        version_(version),
        declared_(declared.begin(), declared.end()),
        system_(std::move(system)),
        user_(std::move(user)) {
    for (const auto* text : {&system_, &user_}) {
      for (const auto& p : placeholders_in(*text)) {
        if (!declared_.contains(p)) {
          throw TemplateError("template '" + name_ + "' uses undeclared placeholder ${" + p + "}");
        }
      }
    }
  }

  static PromptTemplate load(const std::filesystem::path& path) {
    YAML::Node doc;
    try {
      doc = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
      throw TemplateError("cannot load template '" + path.string() + "': " + e.what());
    }
    try {
      std::vector<std::string> declared;
      if (doc["placeholders"]) declared = doc["placeholders"].as<std::vector<std::string>>();
      std::string system = doc["system"] ? doc["system"].as<std::string>() : "";
      std::string user;
      if (doc["user"]) {
        user = doc["user"].as<std::string>();
      } else if (doc["multi_content"]) {
        user = doc["multi_content"].as<std::string>();
      } else {
        throw TemplateError("template '" + path.string() + "' has neither user nor multi_content");
      }
      return PromptTemplate(doc["name"] ? doc["name"].as<std::string>() : path.stem().string(),
                            doc["version"] ? doc["version"].as<int>() : 1, std::move(declared),
                            std::move(system), std::move(user));
    } catch (const YAML::Exception& e) {
      throw TemplateError("malformed template '" + path.string() + "': " + e.what());
    }
  }

  const std::string& name() const noexcept { return name_; }
  int version() const noexcept { return version_; }
  const std::string& system() const noexcept { return system_; }
  const std::string& user() const noexcept { return user_; }
  const std::set<std::string, std::less<>>& declared() const noexcept { return declared_; }

  // "name@version"; feeds cache keys so template edits invalidate entries.
  std::string tag() const { return name_ + "@" + std::to_string(version_); }

  RenderedPrompt render(const Binding& binding) const {
    return {substitute(system_, binding, name_), substitute(user_, binding, name_)};
  }

 private:
  std::string name_;
  int version_ = 1;
  std::set<std::string, std::less<>> declared_;
  std::string system_;
  std::string user_;
};

// The seven templates a task needs, loaded from one directory.
struct TemplateSet {
  PromptTemplate observation;
  PromptTemplate generation_initial;
  PromptTemplate generation_refine;
  PromptTemplate judge;
  PromptTemplate infer_rules;
  PromptTemplate infer_weights;
  PromptTemplate infer_weights_label;

  static TemplateSet load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
      throw TemplateError("template directory '" + dir.string() + "' does not exist");
    }
    return {PromptTemplate::load(dir / "observation.yaml"),
            PromptTemplate::load(dir / "generation_initial.yaml"),
            PromptTemplate::load(dir / "generation_refine.yaml"),
            PromptTemplate::load(dir / "judge.yaml"),
            PromptTemplate::load(dir / "infer_rules.yaml"),
            PromptTemplate::load(dir / "infer_weights.yaml"),
            PromptTemplate::load(dir / "infer_weights_label.yaml")};
  }

  std::vector<std::string> versions() const {
    return {observation.tag(), generation_initial.tag(), generation_refine.tag(), judge.tag(),
            infer_rules.tag(), infer_weights.tag(), infer_weights_label.tag()};
  }
};

}  // namespace rlie
