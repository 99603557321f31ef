#pragma once

// Dataset ingestion (JSONL), seeded splitting and example sampling.

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlie/core.hpp"
#include "rlie/rng.hpp"

namespace rlie {

// Label lexicon for one task: how the judge's textual answers map onto
// +1 / -1 / abstain, and which fields each example must carry.
struct DatasetManifest {
  std::string name;
  std::string positive_token = "first";
  std::string negative_token = "second";
  std::string abstain_token = "not applicable";
  std::vector<std::string> field_names;

  const std::string& token_for_label(int label) const {
    return label == 1 ? positive_token : negative_token;
  }

  bool operator==(const DatasetManifest&) const = default;
};

namespace detail {
inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

inline void validate(const DatasetManifest& m) {
  const auto p = detail::lower(m.positive_token);
  const auto n = detail::lower(m.negative_token);
  const auto a = detail::lower(m.abstain_token);
  if (p.empty() || n.empty() || a.empty()) throw ConfigError("manifest tokens must be non-empty");
  if (p == n || p == a || n == a) {
    throw ConfigError("manifest tokens must be pairwise distinct (case-insensitive)");
  }
}

// Reads one JSON object per line: {"id": str, "fields": {str: str}, "label": 0|1}.
// Blank lines are skipped. Labels given as booleans or numeric strings are
// coerced; anything outside {0,1} is an integrity error.
inline std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset '" + path.string() + "'");

  std::vector<Example> out;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FileParseError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what(),
                           lineno);
    }
    auto bad = [&](const std::string& msg) {
      return FileParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg, lineno);
    };
    if (!j.is_object() || !j.contains("id") || !j.contains("fields") || !j.contains("label")) {
      throw bad("expected an object with keys id, fields, label");
    }
    if (!j["id"].is_string()) throw bad("id must be a string");
    if (!j["fields"].is_object()) throw bad("fields must be an object");

    Example e;
    e.id = j["id"].get<std::string>();
    for (const auto& [k, v] : j["fields"].items()) {
      if (!v.is_string()) throw bad("field '" + k + "' must be a string");
      e.fields.emplace_back(k, v.get<std::string>());
    }

    const auto& label = j["label"];
    long value = -1;
    if (label.is_boolean()) {
      value = label.get<bool>() ? 1 : 0;
    } else if (label.is_number_integer()) {
      value = label.get<long>();
    } else if (label.is_number_float()) {
      const double d = label.get<double>();
      value = (d == 0.0 || d == 1.0) ? static_cast<long>(d) : 2;
    } else if (label.is_string()) {
      const auto s = label.get<std::string>();
      value = s == "0" ? 0 : s == "1" ? 1 : 2;
    } else {
      throw bad("label must be 0 or 1");
    }
    if (value != 0 && value != 1) {
      throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": label " + label.dump() +
                           " outside {0,1}");
    }
    e.label = static_cast<int>(value);
    if (e.fields.empty()) throw IntegrityError(path.string() + ":" + std::to_string(lineno) + ": no fields");

    auto [it, inserted] = first_line.emplace(e.id, lineno);
    if (!inserted) {
      throw IntegrityError(path.string() + ": duplicate id '" + e.id + "' on lines " +
                           std::to_string(it->second) + " and " + std::to_string(lineno));
    }
    out.push_back(std::move(e));
  }
  return out;
}

struct SplitSizes {
  std::size_t train = 200;
  std::size_t validation = 200;
  std::size_t test = 300;

  std::size_t total() const { return train + validation + test; }
  bool operator==(const SplitSizes&) const = default;
};

// Sizes actually used for a pool of `n` examples. When the pool is too small
// the requested sizes shrink proportionally (largest remainder) so that all
// examples are used and every split keeps at least one.
inline SplitSizes effective_split_sizes(std::size_t n, const SplitSizes& requested) {
  if (n < 3) throw CannotSplitError("need at least 3 examples to split, got " + std::to_string(n));
  if (requested.train == 0 || requested.validation == 0 || requested.test == 0) {
    throw UsageError("requested split sizes must be positive");
  }
  if (n >= requested.total()) return requested;

  const std::array<std::size_t, 3> want{requested.train, requested.validation, requested.test};
  const auto total = requested.total();
  std::array<std::size_t, 3> got{};
  std::array<std::size_t, 3> rem{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    got[k] = n * want[k] / total;
    rem[k] = n * want[k] % total;
    used += got[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++got[order[k % 3]];

  for (std::size_t k = 0; k < 3; ++k) {
    if (got[k] == 0) {
      auto donor = std::max_element(got.begin(), got.end());
      --*donor;
      ++got[k];
    }
  }
  return {got[0], got[1], got[2]};
}

// Deterministic shuffle under `seed`, then sequential slicing.
inline SplitBundle make_splits(const std::vector<Example>& examples, const SplitSizes& sizes,
                               std::uint64_t seed) {
  if (examples.empty()) throw CannotSplitError("no examples to split");
  const auto eff = effective_split_sizes(examples.size(), sizes);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  SplitBundle b;
  b.seed = seed;
  std::size_t pos = 0;
  auto take = [&](std::vector<Example>& dst, std::size_t count) {
    dst.reserve(count);
    for (std::size_t i = 0; i < count; ++i) dst.push_back(examples[order[pos++]]);
  };
  take(b.train, eff.train);
  take(b.validation, eff.validation);
  take(b.test, eff.test);
  validate(b);
  return b;
}

// k distinct examples drawn uniformly without replacement; all of `train`
// (shuffled) if k exceeds its size.
inline std::vector<Example> sample_initial(const std::vector<Example>& train, std::size_t k,
                                           std::uint64_t seed) {
  if (train.empty()) throw UsageError("cannot sample from an empty training split");
  if (k < 1) throw UsageError("sample size must be >= 1");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  const std::size_t take = std::min(k, train.size());
  // Partial Fisher-Yates from the front.
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<Example> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(train[order[i]]);
  return out;
}

// Split manifest: the ids per split plus the seed.
inline json split_manifest(const SplitBundle& b) {
  return json{{"seed", b.seed},
              {"train", ids_of(b.train)},
              {"validation", ids_of(b.validation)},
              {"test", ids_of(b.test)}};
}

// Rebuild a bundle from a manifest and the full pool.
inline SplitBundle splits_from_manifest(const json& manifest, const std::vector<Example>& pool) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& e : pool) by_id.emplace(e.id, &e);
  auto pick = [&](const char* key) {
    std::vector<Example> out;
    for (const auto& id : manifest.at(key)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) {
        throw IntegrityError("split manifest references unknown example '" + id.get<std::string>() + "'");
      }
      out.push_back(*it->second);
    }
    return out;
  };
  SplitBundle b;
  b.seed = manifest.at("seed").get<std::uint64_t>();
  b.train = pick("train");
  b.validation = pick("validation");
  b.test = pick("test");
  validate(b);
  return b;
}

}  // namespace rlie
