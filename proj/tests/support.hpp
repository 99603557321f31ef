#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rlie/rlie.hpp"

namespace rlie::testing {

inline std::filesystem::path source_dir() { return RLIE_SOURCE_DIR; }
inline std::filesystem::path template_dir(const std::string& dataset) { return source_dir() / "templates" / dataset; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rlie") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Example text_example(std::string id, std::string text, int label) {
  return Example{std::move(id), {{"text", std::move(text)}}, label};
}

inline std::vector<Example> numbered_examples(std::size_t n, const std::string& prefix = "e") {
  std::vector<Example> out;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix.c_str(), i);
    out.push_back(text_example(buf, "text " + std::to_string(i), static_cast<int>(i % 2)));
  }
  return out;
}

inline Rule rule(std::string id, std::string text, int born = 1) {
  return Rule{std::move(id), std::move(text), born, born == 1 ? RuleOrigin::Initial : RuleOrigin::Refinement};
}

inline std::vector<Judgment> judgments(std::initializer_list<int> values) {
  std::vector<Judgment> out;
  for (int v : values) out.push_back(judgment_from_int(v));
  return out;
}

// Random ternary design with labels from a planted logistic model.
struct Instance {
  JudgmentMatrix z;
  std::vector<int> y;
};

inline Instance random_instance(std::size_t n, std::size_t m, std::uint64_t seed, double abstain = 0.3) {
  Rng rng(seed);
  std::vector<double> w(m);
  for (auto& v : w) v = 2.0 * rng.unit() - 1.0;
  std::vector<std::string> ids, rules;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("x" + std::to_string(i));
  for (std::size_t j = 0; j < m; ++j) rules.push_back("r" + std::to_string(j));
  std::vector<Judgment> values(n * m);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      int z = rng.unit() < abstain ? 0 : (rng.unit() < 0.5 ? -1 : 1);
      values[i * m + j] = judgment_from_int(z);
      u += w[j] * z;
    }
    y[i] = rng.unit() < sigmoid(u) ? 1 : 0;
  }
  // Both classes present.
  y[0] = 0;
  if (n > 1) y[1] = 1;
  return {JudgmentMatrix(ids, rules, values), y};
}

}  // namespace rlie::testing
