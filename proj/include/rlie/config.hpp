#pragma once

// Run configuration: one INI file with sections. Every knob has a default, so
// a minimal file names only the dataset and the backend:
//
//   [dataset]
//   path = data/reviews.jsonl
//   name = reviews
//   [model]
//   kind = openai
//
// Relative paths are resolved against the directory holding the file.
// Credentials are never read from the file; the model section only names the
// environment variable that holds the key.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rlie/dataset.hpp"
#include "rlie/eval.hpp"
#include "rlie/loop.hpp"
#include "rlie/openai_backend.hpp"

namespace rlie {

enum class BackendKind { OpenAI, Synthetic };

inline const char* to_string(BackendKind k) { return k == BackendKind::OpenAI ? "openai" : "synthetic"; }

struct RunConfig {
  std::string name = "rlie";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<StrategyKind> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};
  std::filesystem::path out_dir = "runs";
  std::filesystem::path cache_path;  // default: <out_dir>/judgments.jsonl

  std::filesystem::path dataset_path;
  DatasetManifest manifest;
  std::filesystem::path template_dir;
  SplitSizes splits;

  BackendKind backend = BackendKind::OpenAI;
  ModelConfig model;
  std::filesystem::path synthetic_spec;  // kind = synthetic: {"judge": ..., "generator": ...}

  LoopConfig loop;
  CombinerConfig combiner;

  std::size_t repeats() const { return seeds.size(); }
  std::filesystem::path effective_cache_path() const {
    return cache_path.empty() ? out_dir / "judgments.jsonl" : cache_path;
  }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& section, const std::string& key, const std::string& raw) {
  std::istringstream in(raw);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + raw + "' as a number");
  }
  if constexpr (std::is_unsigned_v<T>) {
    if (!raw.empty() && raw.front() == '-') throw ConfigError("[" + section + "] " + key + " must be non-negative");
  }
  return v;
}

template <class T>
std::string join(const std::vector<T>& items, auto&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

// Label tokens and field names for the bundled datasets.
inline DatasetManifest preset_manifest(const std::string& name) {
  if (name == "retweets") return {name, "first", "second", "not applicable", {"first_tweet", "second_tweet"}};
  if (name == "reviews") return {name, "deceptive", "truthful", "not applicable", {"review"}};
  if (name == "synthetic") return {name, "positive", "negative", "not applicable", {"text"}};
  return {name, "first", "second", "not applicable", {}};
}

inline std::filesystem::path default_template_dir(const std::filesystem::path& base, const std::string& name) {
  auto local = base / "templates" / name;
  if (std::filesystem::is_directory(local)) return local;
#ifdef RLIE_TEMPLATE_ROOT
  return std::filesystem::path(RLIE_TEMPLATE_ROOT) / name;
#else
  return local;
#endif
}

}  // namespace detail

// Parses INI text. Unknown sections or keys are errors (typos would
// otherwise silently fall back to defaults).
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  static const std::map<std::string, std::set<std::string>> kKeys{
      {"run", {"name", "repeats", "seed", "seeds", "strategies", "out_dir", "cache"}},
      {"dataset", {"path", "name", "positive_token", "negative_token", "abstain_token", "fields", "templates"}},
      {"splits", {"train", "validation", "test"}},
      {"model",
       {"kind", "endpoint", "model", "temperature", "max_tokens", "timeout_s", "retries", "backoff_ms",
        "max_in_flight", "api_key_env", "synthetic_spec"}},
      {"loop",
       {"capacity", "hard_k", "gen_h", "init_h", "coverage_gamma", "margin_delta", "patience", "max_iterations"}},
      {"combiner", {"lambdas", "alphas", "folds", "tol", "max_iter", "tau"}},
  };
  for (const auto& [section, body] : tree) {
    auto allowed = kKeys.find(section);
    if (allowed == kKeys.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, _] : body) {
      if (key == "api_key" || key == "key" || key == "token") {
        throw ConfigError("[" + section + "] " + key +
                          ": credentials are not accepted in config files; set the environment variable named by "
                          "[model] api_key_env");
      }
      if (!allowed->second.contains(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    }
  }

  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    auto v = tree.get_optional<std::string>(pt::ptree::path_type(section + "." + key, '.'));
    if (!v) return std::nullopt;
    return detail::trim(*v);
  };
  auto path_of = [&](const std::string& raw) {
    std::filesystem::path p(raw);
    return p.is_relative() && !base_dir.empty() ? (base_dir / p).lexically_normal() : p;
  };
  auto set_num = [&](const std::string& section, const std::string& key, auto& field) {
    if (auto v = get(section, key)) field = detail::parse_number<std::decay_t<decltype(field)>>(section, key, *v);
  };

  RunConfig c;

  if (auto v = get("run", "name")) c.name = *v;
  if (auto v = get("run", "seeds")) {
    c.seeds.clear();
    for (const auto& s : detail::split_list(*v)) c.seeds.push_back(detail::parse_number<std::uint64_t>("run", "seeds", s));
    if (auto r = get("run", "repeats"); r && detail::parse_number<std::size_t>("run", "repeats", *r) != c.seeds.size()) {
      throw ConfigError("[run] repeats disagrees with the number of seeds listed");
    }
  } else {
    std::size_t repeats = c.seeds.size();
    std::uint64_t base = 0;
    set_num("run", "repeats", repeats);
    set_num("run", "seed", base);
    c.seeds.clear();
    for (std::size_t i = 0; i < repeats; ++i) c.seeds.push_back(base + i);
  }
  if (auto v = get("run", "strategies")) {
    c.strategies.clear();
    for (const auto& s : detail::split_list(*v)) c.strategies.push_back(parse_strategy(s));
  }
  if (auto v = get("run", "out_dir")) c.out_dir = path_of(*v);
  else c.out_dir = path_of("runs");
  if (auto v = get("run", "cache")) c.cache_path = path_of(*v);

  if (auto v = get("dataset", "name")) c.manifest = detail::preset_manifest(*v);
  if (auto v = get("dataset", "path")) c.dataset_path = path_of(*v);
  if (auto v = get("dataset", "positive_token")) c.manifest.positive_token = *v;
  if (auto v = get("dataset", "negative_token")) c.manifest.negative_token = *v;
  if (auto v = get("dataset", "abstain_token")) c.manifest.abstain_token = *v;
  if (auto v = get("dataset", "fields")) c.manifest.field_names = detail::split_list(*v);
  if (auto v = get("dataset", "templates")) c.template_dir = path_of(*v);
  else c.template_dir = detail::default_template_dir(base_dir, c.manifest.name);

  set_num("splits", "train", c.splits.train);
  set_num("splits", "validation", c.splits.validation);
  set_num("splits", "test", c.splits.test);

  if (auto v = get("model", "kind")) {
    if (*v == "openai") c.backend = BackendKind::OpenAI;
    else if (*v == "synthetic") c.backend = BackendKind::Synthetic;
    else throw ConfigError("[model] kind must be 'openai' or 'synthetic', got '" + *v + "'");
  }
  if (auto v = get("model", "endpoint")) c.model.endpoint = *v;
  if (auto v = get("model", "model")) c.model.model = *v;
  set_num("model", "temperature", c.model.temperature);
  set_num("model", "max_tokens", c.model.max_tokens);
  set_num("model", "timeout_s", c.model.timeout_s);
  set_num("model", "retries", c.model.retries);
  set_num("model", "backoff_ms", c.model.backoff_ms);
  set_num("model", "max_in_flight", c.model.max_in_flight);
  if (auto v = get("model", "api_key_env")) c.model.api_key_env = *v;
  if (auto v = get("model", "synthetic_spec")) c.synthetic_spec = path_of(*v);

  set_num("loop", "capacity", c.loop.capacity);
  set_num("loop", "hard_k", c.loop.hard_k);
  set_num("loop", "gen_h", c.loop.gen_h);
  set_num("loop", "init_h", c.loop.init_h);
  set_num("loop", "coverage_gamma", c.loop.coverage_gamma);
  set_num("loop", "margin_delta", c.loop.margin_delta);
  set_num("loop", "patience", c.loop.patience);
  set_num("loop", "max_iterations", c.loop.max_iterations);

  auto lambdas = get("combiner", "lambdas");
  auto alphas = get("combiner", "alphas");
  if (lambdas || alphas) {
    std::vector<double> ls, as;
    for (const auto& g : c.combiner.grid) {
      if (std::find(ls.begin(), ls.end(), g.lambda) == ls.end()) ls.push_back(g.lambda);
      if (std::find(as.begin(), as.end(), g.alpha) == as.end()) as.push_back(g.alpha);
    }
    if (lambdas) {
      ls.clear();
      for (const auto& s : detail::split_list(*lambdas)) ls.push_back(detail::parse_number<double>("combiner", "lambdas", s));
    }
    if (alphas) {
      as.clear();
      for (const auto& s : detail::split_list(*alphas)) as.push_back(detail::parse_number<double>("combiner", "alphas", s));
    }
    c.combiner.grid.clear();
    for (double l : ls)
      for (double a : as) c.combiner.grid.push_back({l, a});
  }
  set_num("combiner", "folds", c.combiner.folds);
  set_num("combiner", "tol", c.combiner.solver.tol);
  set_num("combiner", "max_iter", c.combiner.solver.max_iter);
  set_num("combiner", "tau", c.combiner.predict.tau);

  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

// Writes every field explicitly; parse_config(to_ini(c)) == c.
inline std::string to_ini(const RunConfig& c) {
  std::vector<double> ls, as;
  for (const auto& g : c.combiner.grid) {
    if (std::find(ls.begin(), ls.end(), g.lambda) == ls.end()) ls.push_back(g.lambda);
    if (std::find(as.begin(), as.end(), g.alpha) == as.end()) as.push_back(g.alpha);
  }
  if (ls.size() * as.size() != c.combiner.grid.size()) {
    throw ConfigError("combiner grid is not a lambda x alpha product and cannot be written as a config file");
  }
  const auto num = [](auto v) { return std::to_string(v); };
  const auto dbl = [](double v) { return detail::fmt_double(v); };

  std::ostringstream o;
  o << "[run]\n"
    << "name = " << c.name << '\n'
    << "repeats = " << c.seeds.size() << '\n'
    << "seeds = " << detail::join(c.seeds, num) << '\n'
    << "strategies = " << detail::join(c.strategies, [](StrategyKind s) { return std::string(short_name(s)); })
    << '\n'
    << "out_dir = " << c.out_dir.string() << '\n';
  if (!c.cache_path.empty()) o << "cache = " << c.cache_path.string() << '\n';

  o << "\n[dataset]\n"
    << "name = " << c.manifest.name << '\n'
    << "path = " << c.dataset_path.string() << '\n'
    << "positive_token = " << c.manifest.positive_token << '\n'
    << "negative_token = " << c.manifest.negative_token << '\n'
    << "abstain_token = " << c.manifest.abstain_token << '\n'
    << "fields = " << detail::join(c.manifest.field_names, [](const std::string& s) { return s; }) << '\n'
    << "templates = " << c.template_dir.string() << '\n';

  o << "\n[splits]\n"
    << "train = " << c.splits.train << '\n'
    << "validation = " << c.splits.validation << '\n'
    << "test = " << c.splits.test << '\n';

  o << "\n[model]\n"
    << "kind = " << to_string(c.backend) << '\n'
    << "endpoint = " << c.model.endpoint << '\n'
    << "model = " << c.model.model << '\n'
    << "temperature = " << dbl(c.model.temperature) << '\n'
    << "max_tokens = " << c.model.max_tokens << '\n'
    << "timeout_s = " << dbl(c.model.timeout_s) << '\n'
    << "retries = " << c.model.retries << '\n'
    << "backoff_ms = " << c.model.backoff_ms << '\n'
    << "max_in_flight = " << c.model.max_in_flight << '\n'
    << "api_key_env = " << c.model.api_key_env << '\n';
  if (!c.synthetic_spec.empty()) o << "synthetic_spec = " << c.synthetic_spec.string() << '\n';

  o << "\n[loop]\n"
    << "capacity = " << c.loop.capacity << '\n'
    << "hard_k = " << c.loop.hard_k << '\n'
    << "gen_h = " << c.loop.gen_h << '\n'
    << "init_h = " << c.loop.init_h << '\n'
    << "coverage_gamma = " << dbl(c.loop.coverage_gamma) << '\n'
    << "margin_delta = " << dbl(c.loop.margin_delta) << '\n'
    << "patience = " << c.loop.patience << '\n'
    << "max_iterations = " << c.loop.max_iterations << '\n';

  o << "\n[combiner]\n"
    << "lambdas = " << detail::join(ls, dbl) << '\n'
    << "alphas = " << detail::join(as, dbl) << '\n'
    << "folds = " << c.combiner.folds << '\n'
    << "tol = " << dbl(c.combiner.solver.tol) << '\n'
    << "max_iter = " << c.combiner.solver.max_iter << '\n'
    << "tau = " << dbl(c.combiner.predict.tau) << '\n';
  return o.str();
}

// Semantic checks plus existence of every referenced path. Runs before any
// backend is constructed.
inline void validate(const RunConfig& c) {
  if (c.seeds.empty()) throw ConfigError("repeats must be >= 1");
  if (c.strategies.empty()) throw ConfigError("at least one strategy is required");
  if (c.dataset_path.empty()) throw ConfigError("[dataset] path is required");
  if (!std::filesystem::is_regular_file(c.dataset_path)) {
    throw ConfigError("dataset '" + c.dataset_path.string() + "' does not exist");
  }
  if (c.manifest.field_names.empty()) throw ConfigError("[dataset] fields must name at least one field");
  validate(c.manifest);
  if (!std::filesystem::is_directory(c.template_dir)) {
    throw ConfigError("template directory '" + c.template_dir.string() + "' does not exist");
  }
  if (c.backend == BackendKind::Synthetic && !std::filesystem::is_regular_file(c.synthetic_spec)) {
    throw ConfigError("synthetic spec '" + c.synthetic_spec.string() + "' does not exist");
  }
  validate(c.model);
  validate(c.loop);
  validate(c.combiner.predict);
  if (c.combiner.grid.empty()) throw ConfigError("combiner grid is empty");
  for (const auto& g : c.combiner.grid) {
    if (!(g.lambda >= 0.0) || !(g.alpha >= 0.0 && g.alpha <= 1.0)) {
      throw ConfigError("combiner grid needs lambda >= 0 and alpha in [0, 1]");
    }
  }
  if (c.combiner.folds < 2) throw ConfigError("combiner folds must be >= 2");
  if (c.splits.train == 0 || c.splits.validation == 0 || c.splits.test == 0) {
    throw ConfigError("split sizes must be positive");
  }
}

}  // namespace rlie
