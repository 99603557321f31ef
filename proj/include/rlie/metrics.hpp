#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rlie/errors.hpp"

namespace rlie {

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw UsageError("accuracy: length mismatch");
  if (preds.empty()) throw UsageError("accuracy of zero predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Unweighted mean of the F1 of class 1 and class 0. A class with no
// predicted and no actual members contributes 0.
inline double macro_f1(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw UsageError("macro_f1: length mismatch");
  if (preds.empty()) throw UsageError("macro_f1 of zero predictions");
  double total = 0;
  for (int c : {1, 0}) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c;
      const bool a = labels[i] == c;
      tp += p && a;
      fp += p && !a;
      fn += !p && a;
    }
    const auto denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / 2.0;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample (n-1) standard deviation
  std::size_t n = 0;
  bool std_undefined = false;  // n == 1: std reported as 0
};

inline MetricSummary aggregate_runs(std::span<const double> values) {
  if (values.empty()) throw UsageError("aggregate of zero runs");
  MetricSummary s;
  s.n = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n == 1) {
    s.std_undefined = true;
    return s;
  }
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

}  // namespace rlie
