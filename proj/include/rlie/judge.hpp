#pragma once

// Ternary rule judgments: answer parsing, the persistent judgment cache and
// (concurrent) filling of judgment matrices.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <openssl/evp.h>

#include "rlie/backend.hpp"
#include "rlie/core.hpp"
#include "rlie/dataset.hpp"
#include "rlie/prompt.hpp"

namespace rlie {

// ---------------------------------------------------------------------------
// Answer parsing

namespace detail {

inline std::string trim_answer(std::string_view s) {
  auto is_junk = [](unsigned char c) {
    return std::isspace(c) || c == '{' || c == '}' || c == '[' || c == ']' || c == '"' || c == '\'' ||
           c == '*' || c == '.' || c == ',' || c == ';' || c == '!' || c == '`';
  };
  std::size_t b = 0, e = s.size();
  while (b < e && is_junk(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_junk(static_cast<unsigned char>(s[e - 1]))) --e;
  return lower(s.substr(b, e - b));
}

}  // namespace detail

// Maps "... Final answer: <token>" onto a judgment. Exactly one marker must
// be present. The answer is the text after the marker up to a closing brace
// or end of line; it must equal one of the manifest tokens (case-insensitive)
// or start with one followed by a non-alphanumeric character
// ("first tweet"). With allow_abstain=false the abstain token is a parse
// error.
inline Judgment parse_final_answer(std::string_view response, const DatasetManifest& manifest,
                                   bool allow_abstain = true) {
  static constexpr std::string_view kMarker = "final answer:";
  const auto lowered = detail::lower(response);

  std::vector<std::size_t> hits;
  for (auto pos = lowered.find(kMarker); pos != std::string::npos;
       pos = lowered.find(kMarker, pos + kMarker.size())) {
    hits.push_back(pos);
  }
  if (hits.empty()) throw ParseError("no 'Final answer:' marker in response", std::string(response));
  if (hits.size() > 1) {
    throw ParseError("ambiguous response: " + std::to_string(hits.size()) + " final-answer markers",
                     std::string(response));
  }

  auto start = hits.front() + kMarker.size();
  auto end = lowered.find_first_of("}\n", start);
  if (end == std::string::npos) end = lowered.size();
  const auto answer = detail::trim_answer(std::string_view(lowered).substr(start, end - start));

  struct Candidate {
    std::string token;
    Judgment value;
  };
  std::vector<Candidate> candidates{{detail::lower(manifest.positive_token), Judgment::Positive},
                                    {detail::lower(manifest.negative_token), Judgment::Negative},
                                    {detail::lower(manifest.abstain_token), Judgment::Abstain}};
  // Longest token first so "not applicable" beats a hypothetical "not".
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.token.size() > b.token.size(); });

  for (const auto& c : candidates) {
    const bool exact = answer == c.token;
    const bool prefix = answer.size() > c.token.size() && answer.starts_with(c.token) &&
                        !std::isalnum(static_cast<unsigned char>(answer[c.token.size()]));
    if (exact || prefix) {
      if (c.value == Judgment::Abstain && !allow_abstain) {
        throw ParseError("abstain answer not permitted here", std::string(response));
      }
      return c.value;
    }
  }
  throw ParseError("unrecognized final answer '" + answer + "'", std::string(response));
}

// ---------------------------------------------------------------------------
// Cache keys

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

// digest(template version, model, normalized rule text, example id + fields)
inline std::string judgment_cache_key(std::string_view template_tag, std::string_view model,
                                      std::string_view rule_text, const Example& example) {
  json payload = json::array();
  payload.push_back(template_tag);
  payload.push_back(model);
  payload.push_back(normalize_rule_text(rule_text));
  payload.push_back(example.id);
  for (const auto& [k, v] : example.fields) payload.push_back(json::array({k, v}));
  return sha256_hex(payload.dump());
}

// ---------------------------------------------------------------------------
// JudgmentCache

struct CacheEntry {
  std::string key;
  Judgment value = Judgment::Abstain;
  std::string rule;
  std::string example_id;
};

struct CacheWarning {
  std::size_t line = 0;
  std::string key;  // empty when the line could not be parsed at all
  std::string message;
};

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;

  double hit_rate() const {
    const auto total = hits + misses;
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }
  bool operator==(const CacheStats&) const = default;
};

inline void to_json(json& j, const CacheStats& s) {
  j = json{{"hits", s.hits}, {"misses", s.misses}, {"hit_rate", s.hit_rate()}};
}

// Append-only JSONL key-value store, one record per line:
//   {"key": <sha256>, "z": -1|0|1, "rule": <text>, "example": <id>}
// Loading tolerates corrupt lines (reported as warnings). Writes are
// serialized and flushed immediately so an interrupted run loses nothing
// that was already judged. An empty path gives an in-memory cache.
class JudgmentCache {
 public:
  JudgmentCache() = default;

  // read_only: load existing entries but never create or append to the file.
  explicit JudgmentCache(std::filesystem::path path, bool read_only = false) : path_(std::move(path)) {
    if (path_.empty()) return;
    if (read_only) {
      load();
      return;
    }
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    load();
    out_.open(path_, std::ios::app);
    if (!out_) throw Error("cannot open judgment cache '" + path_.string() + "' for appending");
    // A write cut short by a kill leaves a partial last line; start fresh.
    if (ends_mid_line_) out_ << '\n' << std::flush;
  }

  JudgmentCache(const JudgmentCache&) = delete;
  JudgmentCache& operator=(const JudgmentCache&) = delete;

  std::optional<Judgment> lookup(const std::string& key) {
    std::lock_guard lock(mu_);
    auto it = index_.find(key);
    if (it == index_.end()) {
      ++stats_.misses;
      return std::nullopt;
    }
    ++stats_.hits;
    return entries_[it->second].value;
  }

  // No-op when the key already exists.
  void store(CacheEntry entry) {
    std::lock_guard lock(mu_);
    if (index_.contains(entry.key)) return;
    if (out_.is_open()) {
      out_ << json{{"key", entry.key}, {"z", to_int(entry.value)}, {"rule", entry.rule},
                   {"example", entry.example_id}}
                  .dump()
           << '\n';
      out_.flush();
    }
    index_.emplace(entry.key, entries_.size());
    entries_.push_back(std::move(entry));
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  std::vector<CacheEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  const std::vector<CacheWarning>& warnings() const noexcept { return warnings_; }

  CacheStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  const std::filesystem::path& path() const noexcept { return path_; }

  static std::filesystem::path stats_path(const std::filesystem::path& cache_path) {
    return cache_path.string() + ".stats.json";
  }

  // Records hit/miss counts of this session next to the cache file.
  void save_stats() const {
    if (path_.empty()) return;
    std::ofstream(stats_path(path_)) << json(stats()).dump(2) << '\n';
  }

 private:
  void load() {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      ends_mid_line_ = in.eof();
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        warnings_.push_back({lineno, "", "unparseable record"});
        continue;
      }
      const std::string key = j.value("key", std::string{});
      if (key.empty()) {
        warnings_.push_back({lineno, "", "record without key"});
        continue;
      }
      if (!j.contains("z") || !j["z"].is_number_integer() || j["z"].get<long>() < -1 ||
          j["z"].get<long>() > 1) {
        warnings_.push_back({lineno, key, "judgment missing or outside {-1,0,1}"});
        continue;
      }
      if (index_.contains(key)) continue;
      CacheEntry e{key, judgment_from_int(j["z"].get<long>()), j.value("rule", std::string{}),
                   j.value("example", std::string{})};
      index_.emplace(key, entries_.size());
      entries_.push_back(std::move(e));
    }
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<CacheEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<CacheWarning> warnings_;
  CacheStats stats_;
  std::ofstream out_;
  bool ends_mid_line_ = false;
};

// ---------------------------------------------------------------------------
// Judging

// Binds the rule text and the example's fields for the judgment template.
inline Binding judge_binding(const Rule& rule, const Example& example) {
  Binding b;
  for (const auto& [k, v] : example.fields) b[k] = v;
  b["hypothesis"] = rule.text;
  return b;
}

inline ChatRequest judge_request(const PromptTemplate& tmpl, const Rule& rule, const Example& example) {
  ChatRequest req;
  req.prompt = tmpl.render(judge_binding(rule, example));
  req.purpose = Purpose::Judge;
  req.rule = rule;
  req.example = example;
  return req;
}

inline Judgment judge_one(Backend& backend, const PromptTemplate& tmpl, const Rule& rule,
                          const Example& example, const DatasetManifest& manifest) {
  return parse_final_answer(backend.complete(judge_request(tmpl, rule, example)), manifest, true);
}

// Fills every (example, rule) cell, consulting the cache first. New
// judgments are written to the cache as they complete, so a failure leaves
// every finished cell cached. Up to max_in_flight requests run at once; the
// assembled matrix does not depend on completion order.
inline JudgmentMatrix judge_matrix(Backend& backend, const PromptTemplate& tmpl,
                                   std::span<const Rule> rules, std::span<const Example> examples,
                                   JudgmentCache& cache, const DatasetManifest& manifest) {
  if (rules.empty() || examples.empty()) throw UsageError("judge_matrix needs rules and examples");
  const std::size_t n = examples.size();
  const std::size_t m = rules.size();
  const auto model = backend.model_name();
  const auto tag = tmpl.tag();

  std::vector<Judgment> values(n * m, Judgment::Abstain);
  std::vector<std::string> keys(n * m);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto cell = i * m + j;
      keys[cell] = judgment_cache_key(tag, model, rules[j].text, examples[i]);
      if (auto hit = cache.lookup(keys[cell])) {
        values[cell] = *hit;
      } else {
        pending.push_back(cell);
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failed{0};
  std::mutex err_mu;
  std::exception_ptr first_backend_error;
  std::exception_ptr first_parse_error;

  auto worker = [&] {
    for (auto k = next++; k < pending.size(); k = next++) {
      const auto cell = pending[k];
      const auto& rule = rules[cell % m];
      const auto& example = examples[cell / m];
      try {
        const auto z = judge_one(backend, tmpl, rule, example, manifest);
        values[cell] = z;
        cache.store({keys[cell], z, normalize_rule_text(rule.text), example.id});
      } catch (const ParseError&) {
        ++failed;
        std::lock_guard lock(err_mu);
        if (!first_parse_error) first_parse_error = std::current_exception();
      } catch (...) {
        ++failed;
        std::lock_guard lock(err_mu);
        if (!first_backend_error) first_backend_error = std::current_exception();
      }
    }
  };

  const auto workers =
      std::min<std::size_t>(std::max<std::size_t>(1, backend.capabilities().max_in_flight), pending.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (failed > 0) {
    const std::string summary = std::to_string(failed.load()) + " of " + std::to_string(n * m) +
                                " judgment cells missing";
    if (first_backend_error) {
      try {
        std::rethrow_exception(first_backend_error);
      } catch (const std::exception& e) {
        throw BackendError(summary + ": " + e.what());
      }
    }
    try {
      std::rethrow_exception(first_parse_error);
    } catch (const ParseError& e) {
      throw ParseError(summary + ": " + e.what(), e.raw());
    }
  }

  std::vector<std::string> rule_ids;
  rule_ids.reserve(m);
  for (const auto& r : rules) rule_ids.push_back(r.rule_id);
  return JudgmentMatrix(ids_of(examples), std::move(rule_ids), std::move(values));
}

}  // namespace rlie
