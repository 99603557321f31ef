#pragma once

// Independent reference computations for the combiner. Nothing here calls
// into the solver under test.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

namespace rlie::testing {

struct Dense {
  std::size_t n = 0, m = 0;
  std::vector<double> x;  // row-major n x m
  std::vector<int> y;
};

inline Dense dense(const JudgmentMatrix& z, const std::vector<int>& y) {
  Dense d{z.rows(), z.cols(), {}, y};
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t j = 0; j < d.m; ++j) d.x.push_back(static_cast<double>(to_int(z.at(i, j))));
  return d;
}

// Mean cross-entropy with p clipped to [1e-12, 1-1e-12] plus the elastic net
// penalty on beta. theta = [beta..., bias].
inline double oracle_objective(const Dense& d, const std::vector<double>& theta, double lambda, double alpha) {
  double loss = 0;
  for (std::size_t i = 0; i < d.n; ++i) {
    double u = theta[d.m];
    for (std::size_t j = 0; j < d.m; ++j) u += d.x[i * d.m + j] * theta[j];
    double p = 1.0 / (1.0 + std::exp(-u));
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    loss -= d.y[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  double l1 = 0, l2 = 0;
  for (std::size_t j = 0; j < d.m; ++j) {
    l1 += std::abs(theta[j]);
    l2 += theta[j] * theta[j];
  }
  return loss / static_cast<double>(d.n) + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2);
}

inline std::vector<double> oracle_smooth_gradient(const Dense& d, const std::vector<double>& theta, double lambda,
                                                  double alpha) {
  std::vector<double> g(d.m + 1, 0.0);
  for (std::size_t i = 0; i < d.n; ++i) {
    double u = theta[d.m];
    for (std::size_t j = 0; j < d.m; ++j) u += d.x[i * d.m + j] * theta[j];
    const double r = 1.0 / (1.0 + std::exp(-u)) - d.y[i];
    for (std::size_t j = 0; j < d.m; ++j) g[j] += r * d.x[i * d.m + j];
    g[d.m] += r;
  }
  for (auto& v : g) v /= static_cast<double>(d.n);
  for (std::size_t j = 0; j < d.m; ++j) g[j] += lambda * (1.0 - alpha) * theta[j];
  return g;
}

struct OracleFit {
  std::vector<double> theta;
  double objective = 0.0;
  int iterations = 0;
};

// Full-batch descent along the minimum-norm subgradient with Armijo
// backtracking; a coordinate that would cross zero is stopped at zero.
// Runs until the minimum-norm subgradient is below `tol`, or until 100
// consecutive steps each lower the objective by less than 1e-15 relative.
inline OracleFit subgradient_oracle(const Dense& d, double lambda, double alpha, double tol = 1e-12,
                                    int max_iter = 200000) {
  std::vector<double> theta(d.m + 1, 0.0), cand(d.m + 1), pg(d.m + 1);
  const double l1 = lambda * alpha;
  double f = oracle_objective(d, theta, lambda, alpha);
  double step = 1.0;
  int it = 0, stalled = 0;
  for (; it < max_iter; ++it) {
    const auto g = oracle_smooth_gradient(d, theta, lambda, alpha);
    double norm = 0;
    for (std::size_t j = 0; j <= d.m; ++j) {
      if (j == d.m) {
        pg[j] = g[j];
      } else if (theta[j] > 0) {
        pg[j] = g[j] + l1;
      } else if (theta[j] < 0) {
        pg[j] = g[j] - l1;
      } else if (g[j] + l1 < 0) {
        pg[j] = g[j] + l1;
      } else if (g[j] - l1 > 0) {
        pg[j] = g[j] - l1;
      } else {
        pg[j] = 0;
      }
      norm = std::max(norm, std::abs(pg[j]));
    }
    if (norm < tol) break;

    step = std::min(step * 4.0, 1e6);
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings, step *= 0.5) {
      double decrease = 0;
      for (std::size_t j = 0; j <= d.m; ++j) {
        cand[j] = theta[j] - step * pg[j];
        if (j < d.m) {
          const double orthant = theta[j] != 0 ? theta[j] : -pg[j];
          if (cand[j] * orthant < 0) cand[j] = 0;
        }
        decrease += pg[j] * (theta[j] - cand[j]);
      }
      const double fc = oracle_objective(d, cand, lambda, alpha);
      if (fc <= f - 1e-4 * decrease) {
        stalled = f - fc < 1e-15 * std::abs(f) ? stalled + 1 : 0;
        theta = cand;
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted || stalled >= 100) break;  // no representable decrease left
  }
  return {theta, f, it};
}

// Lines of `b` not matched by a longest common subsequence with `a`, plus
// the number of lines of `a` left unmatched.
inline std::pair<std::vector<std::string>, std::size_t> lcs_diff(const std::vector<std::string>& a,
                                                                 const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> t(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;) t[i][j] = a[i] == b[j] ? t[i + 1][j + 1] + 1 : std::max(t[i + 1][j], t[i][j + 1]);
  std::vector<std::string> inserted;
  std::size_t i = 0, j = 0, deleted = 0;
  while (i < n && j < m) {
    if (a[i] == b[j]) {
      ++i;
      ++j;
    } else if (t[i + 1][j] >= t[i][j + 1]) {
      ++i;
      ++deleted;
    } else {
      inserted.push_back(b[j++]);
    }
  }
  deleted += n - i;
  while (j < m) inserted.push_back(b[j++]);
  return {inserted, deleted};
}

inline std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace rlie::testing
