#pragma once

// Probabilistic rule combiner: logistic regression over ternary judgment
// features with an elastic-net penalty on the weights,
//
//   p(x) = sigmoid(z(x)' beta + b)
//   F(beta, b) = mean_i CE(y_i, p_i) + lambda * (alpha*|beta|_1 + (1-alpha)/2*|beta|_2^2)
//
// The intercept is not penalized and features are used as-is (no
// standardization), so weights stay directly interpretable per rule.
//
// fit() minimizes F by proximal gradient: gradient steps on the smooth part
// (cross-entropy + L2) followed by soft-thresholding for the L1 term. Steps
// use Nesterov momentum with a function-value restart: whenever the
// accelerated step would increase F, momentum is dropped and a plain
// proximal step is taken from the current iterate, so F never increases.
// The step size comes from a Lipschitz estimate (power iteration on the
// Gram matrix) and is enlarged by backtracking whenever the quadratic upper
// bound fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rlie/core.hpp"

namespace rlie {

struct CombinerParams {
  std::vector<std::string> rule_ids;
  std::vector<double> beta;
  double bias = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;

  bool operator==(const CombinerParams&) const = default;
};

struct PredictConfig {
  double tau = 0.5;
  bool operator==(const PredictConfig&) const = default;
};

inline void validate(const PredictConfig& c) {
  if (!(c.tau > 0.0 && c.tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
}

struct SolverConfig {
  double tol = 1e-8;
  int max_iter = 10000;
  bool operator==(const SolverConfig&) const = default;
};

struct GridPoint {
  double lambda = 0.0;
  double alpha = 0.0;
  bool operator==(const GridPoint&) const = default;
};

struct CandidateScore {
  double lambda = 0.0;
  double alpha = 0.0;
  double mean_log_loss = 0.0;
  std::vector<double> fold_scores;
};

struct FitReport {
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double last_change = 0.0;
  std::vector<CandidateScore> selection;
  std::string selection_metric = "validation log-loss, mean over stratified folds";
};

// Probability clipping bounds for cross-entropy, expressed on the loss.
inline constexpr double kProbClip = 1e-12;

inline double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// log(1 + e^u) without overflow.
inline double log1pexp(double u) {
  return u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Cross-entropy of label y at logit u, with p clipped to [1e-12, 1-1e-12].
inline double example_loss(double u, int y) {
  static const double lo = -std::log1p(-kProbClip);
  static const double hi = -std::log(kProbClip);
  return std::clamp(y == 1 ? log1pexp(-u) : log1pexp(u), lo, hi);
}

inline double elastic_net_penalty(std::span<const double> beta, double lambda, double alpha) {
  double l1 = 0, l2 = 0;
  for (double b : beta) {
    l1 += std::abs(b);
    l2 += b * b;
  }
  return lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2);
}

namespace detail {

inline void check_labels(std::span<const int> y, std::size_t rows) {
  if (y.size() != rows) {
    throw UsageError("label count " + std::to_string(y.size()) + " does not match " + std::to_string(rows) +
                     " rows");
  }
  for (int v : y) {
    if (v != 0 && v != 1) throw UsageError("label " + std::to_string(v) + " outside {0,1}");
  }
}

inline void check_hyper(double lambda, double alpha) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("lambda must be finite and >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0,1]");
}

// Row-major dense copy of a judgment matrix as doubles.
struct Design {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> x;

  explicit Design(const JudgmentMatrix& z) : n(z.rows()), m(z.cols()), x(n * m) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) x[i * m + j] = to_int(z.at(i, j));
    }
  }

  double margin(std::size_t i, std::span<const double> beta, double bias) const {
    double u = bias;
    const double* row = &x[i * m];
    for (std::size_t j = 0; j < m; ++j) u += row[j] * beta[j];
    return u;
  }
};

// Parameter vector layout: beta[0..m), bias at m.
struct Smooth {
  const Design& d;
  std::span<const int> y;
  double lambda;
  double alpha;

  double value(std::span<const double> theta) const {
    const auto beta = theta.first(d.m);
    double loss = 0;
    for (std::size_t i = 0; i < d.n; ++i) loss += example_loss(d.margin(i, beta, theta[d.m]), y[i]);
    double l2 = 0;
    for (double b : beta) l2 += b * b;
    return loss / static_cast<double>(d.n) + 0.5 * lambda * (1.0 - alpha) * l2;
  }

  double value_and_gradient(std::span<const double> theta, std::vector<double>& grad) const {
    const auto beta = theta.first(d.m);
    grad.assign(d.m + 1, 0.0);
    double loss = 0;
    for (std::size_t i = 0; i < d.n; ++i) {
      const double u = d.margin(i, beta, theta[d.m]);
      loss += example_loss(u, y[i]);
      const double r = sigmoid(u) - y[i];
      const double* row = &d.x[i * d.m];
      for (std::size_t j = 0; j < d.m; ++j) grad[j] += r * row[j];
      grad[d.m] += r;
    }
    const double inv_n = 1.0 / static_cast<double>(d.n);
    double l2 = 0;
    for (std::size_t j = 0; j <= d.m; ++j) grad[j] *= inv_n;
    for (std::size_t j = 0; j < d.m; ++j) {
      grad[j] += lambda * (1.0 - alpha) * beta[j];
      l2 += beta[j] * beta[j];
    }
    return loss * inv_n + 0.5 * lambda * (1.0 - alpha) * l2;
  }

  double l1(std::span<const double> theta) const {
    double s = 0;
    for (std::size_t j = 0; j < d.m; ++j) s += std::abs(theta[j]);
    return lambda * alpha * s;
  }
};

// Largest eigenvalue of [X 1]'[X 1] / n by power iteration.
inline double gram_spectral_estimate(const Design& d) {
  const std::size_t k = d.m + 1;
  std::vector<double> g(k * k, 0.0);
  for (std::size_t i = 0; i < d.n; ++i) {
    const double* row = &d.x[i * d.m];
    for (std::size_t a = 0; a < k; ++a) {
      const double xa = a < d.m ? row[a] : 1.0;
      if (xa == 0.0) continue;
      for (std::size_t b = 0; b < k; ++b) g[a * k + b] += xa * (b < d.m ? row[b] : 1.0);
    }
  }
  for (auto& v : g) v /= static_cast<double>(d.n);
  std::vector<double> v(k, 1.0), w(k);
  double eig = 0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t a = 0; a < k; ++a) {
      w[a] = 0;
      for (std::size_t b = 0; b < k; ++b) w[a] += g[a * k + b] * v[b];
    }
    double norm = 0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 1.0;
    for (std::size_t a = 0; a < k; ++a) v[a] = w[a] / norm;
    if (std::abs(norm - eig) <= 1e-12 * norm) {
      eig = norm;
      break;
    }
    eig = norm;
  }
  return eig;
}

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Prediction

inline double predict_proba(const CombinerParams& params, std::span<const Judgment> features) {
  if (features.size() != params.beta.size()) {
    throw UsageError("feature length " + std::to_string(features.size()) + " does not match " +
                     std::to_string(params.beta.size()) + " weights");
  }
  double u = params.bias;
  for (std::size_t j = 0; j < features.size(); ++j) u += to_int(features[j]) * params.beta[j];
  return sigmoid(u);
}

// 1 iff p >= tau.
inline int predict_label(const CombinerParams& params, std::span<const Judgment> features,
                         const PredictConfig& config = {}) {
  return predict_proba(params, features) >= config.tau ? 1 : 0;
}

inline std::vector<double> predict_proba_all(const CombinerParams& params, const JudgmentMatrix& z) {
  std::vector<double> p(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) p[i] = predict_proba(params, z.row(i));
  return p;
}

// ---------------------------------------------------------------------------
// Objective

inline double objective(const CombinerParams& params, const JudgmentMatrix& z, std::span<const int> labels) {
  detail::check_labels(labels, z.rows());
  if (z.rows() == 0) throw UsageError("objective over zero examples");
  if (params.beta.size() != z.cols()) throw UsageError("weight count does not match rule columns");
  double loss = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double u = params.bias;
    for (std::size_t j = 0; j < z.cols(); ++j) u += to_int(z.at(i, j)) * params.beta[j];
    loss += example_loss(u, labels[i]);
  }
  return loss / static_cast<double>(z.rows()) + elastic_net_penalty(params.beta, params.lambda, params.alpha);
}

// Smooth part (cross-entropy + L2) and its analytic gradient, laid out as
// [d/dbeta..., d/dbias].
inline double smooth_objective(const CombinerParams& params, const JudgmentMatrix& z,
                               std::span<const int> labels) {
  detail::check_labels(labels, z.rows());
  detail::Design d(z);
  std::vector<double> theta(params.beta);
  theta.push_back(params.bias);
  return detail::Smooth{d, labels, params.lambda, params.alpha}.value(theta);
}

inline std::vector<double> smooth_gradient(const CombinerParams& params, const JudgmentMatrix& z,
                                           std::span<const int> labels) {
  detail::check_labels(labels, z.rows());
  detail::Design d(z);
  std::vector<double> theta(params.beta);
  theta.push_back(params.bias);
  std::vector<double> grad;
  detail::Smooth{d, labels, params.lambda, params.alpha}.value_and_gradient(theta, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Fitting

// Per-iteration objective trace, for tests of monotone descent.
using ObjectiveTrace = std::vector<double>;

inline std::pair<CombinerParams, FitReport> fit(const JudgmentMatrix& z, std::span<const int> labels,
                                                double lambda, double alpha, const SolverConfig& cfg = {},
                                                ObjectiveTrace* trace = nullptr) {
  if (z.rows() == 0) throw UsageError("cannot fit on zero examples");
  detail::check_labels(labels, z.rows());
  detail::check_hyper(lambda, alpha);
  if (cfg.tol <= 0 || cfg.max_iter < 1) throw ConfigError("solver tol must be > 0 and max_iter >= 1");

  const std::size_t n = z.rows();
  const std::size_t m = z.cols();
  const double positives = std::accumulate(labels.begin(), labels.end(), 0.0);
  const double prior = std::clamp(positives / static_cast<double>(n), 1e-6, 1.0 - 1e-6);

  CombinerParams params{z.rule_ids(), std::vector<double>(m, 0.0), logit(prior), lambda, alpha};
  FitReport report;
  if (m == 0) {
    report.objective = objective(params, z, labels);
    report.converged = true;
    if (trace) trace->push_back(report.objective);
    return {std::move(params), std::move(report)};
  }

  const detail::Design d(z);
  const detail::Smooth f{d, labels, lambda, alpha};
  double lip = std::max(detail::gram_spectral_estimate(d) / 4.0 + lambda * (1.0 - alpha), 1e-12);

  std::vector<double> x(m + 1, 0.0), x_prev, y(m + 1), cand(m + 1), grad;
  x[m] = params.bias;
  x_prev = x;
  double fx = f.value(x) + f.l1(x);
  if (trace) trace->push_back(fx);

  auto diagnose = [&](const char* what, int it) {
    return SolverError(std::string("non-finite ") + what + " at iteration " + std::to_string(it) +
                       " (lambda=" + std::to_string(lambda) + ", alpha=" + std::to_string(alpha) +
                       ", step=1/" + std::to_string(lip) + ")");
  };

  // Proximal step from `from`; backtracks until the quadratic bound holds.
  auto prox_step = [&](const std::vector<double>& from, int it) {
    const double f_from = f.value_and_gradient(from, grad);
    if (!std::isfinite(f_from)) throw diagnose("objective", it);
    for (int guard = 0; guard < 60; ++guard) {
      const double step = 1.0 / lip;
      for (std::size_t j = 0; j < m; ++j) {
        cand[j] = detail::soft_threshold(from[j] - step * grad[j], step * lambda * alpha);
      }
      cand[m] = from[m] - step * grad[m];
      const double f_cand = f.value(cand);
      if (!std::isfinite(f_cand)) throw diagnose("objective", it);
      double lin = 0, quad = 0;
      for (std::size_t j = 0; j <= m; ++j) {
        const double dlt = cand[j] - from[j];
        lin += grad[j] * dlt;
        quad += dlt * dlt;
      }
      if (f_cand <= f_from + lin + 0.5 * lip * quad + 1e-15 * std::abs(f_from)) {
        return f_cand + f.l1(cand);
      }
      lip *= 2.0;
    }
    throw diagnose("step size", it);
  };

  double t = 1.0;
  double prev_change = std::numeric_limits<double>::infinity();
  int it = 1;
  for (; it <= cfg.max_iter; ++it) {
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double mom = (t - 1.0) / t_next;
    for (std::size_t j = 0; j <= m; ++j) y[j] = x[j] + mom * (x[j] - x_prev[j]);

    double f_new = prox_step(y, it);
    if (f_new > fx) {
      // Restart: plain step from x, which cannot increase F.
      t = 1.0;
      f_new = prox_step(x, it);
    } else {
      t = t_next;
    }

    double change = 0;
    for (std::size_t j = 0; j <= m; ++j) {
      if (!std::isfinite(cand[j])) throw diagnose("parameter", it);
      change = std::max(change, std::abs(cand[j] - x[j]));
    }
    x_prev = x;
    x = cand;
    fx = f_new;
    if (trace) trace->push_back(fx);
    report.last_change = change;
    if (change < cfg.tol && prev_change < cfg.tol) {
      report.converged = true;
      break;
    }
    prev_change = change;
  }

  params.beta.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(m));
  params.bias = x[m];
  report.iterations = std::min(it, cfg.max_iter);
  report.objective = fx;
  return {std::move(params), std::move(report)};
}

// ---------------------------------------------------------------------------
// Hyperparameter selection

inline std::vector<GridPoint> default_grid() {
  std::vector<GridPoint> grid;
  for (double l : {0.001, 0.01, 0.1, 1.0}) {
    for (double a : {0.0, 0.5, 1.0}) grid.push_back({l, a});
  }
  return grid;
}

// Stratified K folds: each class's indices, in order, dealt round-robin.
// Folds that end up empty (fewer examples than folds) are dropped.
inline std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k) {
  if (k < 2) throw UsageError("need at least 2 folds");
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t dealt = 0;
  for (int c : {0, 1}) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) folds[dealt++ % k].push_back(i);
    }
  }
  std::erase_if(folds, [](const auto& f) { return f.empty(); });
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline double mean_log_loss(const CombinerParams& params, const JudgmentMatrix& z, std::span<const int> labels,
                            std::span<const std::size_t> rows) {
  double s = 0;
  for (auto i : rows) {
    double u = params.bias;
    for (std::size_t j = 0; j < z.cols(); ++j) u += to_int(z.at(i, j)) * params.beta[j];
    s += example_loss(u, labels[i]);
  }
  return s / static_cast<double>(rows.size());
}

struct Selection {
  double lambda = 0.0;
  double alpha = 0.0;
  std::vector<CandidateScore> scores;
};

// Fits each grid point on the training matrix and scores it by mean
// log-loss over stratified folds of the validation matrix. Lowest score
// wins; ties go to larger lambda, then larger alpha.
inline Selection select_hyperparams(const JudgmentMatrix& z_train, std::span<const int> y_train,
                                    const JudgmentMatrix& z_val, std::span<const int> y_val,
                                    const std::vector<GridPoint>& grid, std::size_t folds,
                                    const SolverConfig& cfg = {}) {
  if (grid.empty()) throw UsageError("hyperparameter grid is empty");
  if (folds < 2) throw UsageError("need at least 2 folds");
  if (z_train.rule_ids() != z_val.rule_ids()) {
    throw IntegrityError("training and validation matrices have different rule columns");
  }
  detail::check_labels(y_train, z_train.rows());
  detail::check_labels(y_val, z_val.rows());
  const auto pos = std::count(y_val.begin(), y_val.end(), 1);
  if (pos == 0 || pos == static_cast<long>(y_val.size())) {
    throw SelectionError("validation set contains a single class");
  }
  const auto fold_rows = stratified_folds(y_val, folds);

  auto score = [&](const GridPoint& g) {
    const auto params = fit(z_train, y_train, g.lambda, g.alpha, cfg).first;
    CandidateScore s{g.lambda, g.alpha, 0.0, {}};
    for (const auto& rows : fold_rows) s.fold_scores.push_back(mean_log_loss(params, z_val, y_val, rows));
    s.mean_log_loss = std::accumulate(s.fold_scores.begin(), s.fold_scores.end(), 0.0) /
                      static_cast<double>(s.fold_scores.size());
    return s;
  };

  Selection sel;
  sel.scores.resize(grid.size());
  if (std::thread::hardware_concurrency() > 1 && grid.size() > 1) {
    std::vector<std::future<CandidateScore>> jobs;
    for (const auto& g : grid) jobs.push_back(std::async(std::launch::async, score, g));
    for (std::size_t k = 0; k < grid.size(); ++k) sel.scores[k] = jobs[k].get();
  } else {
    for (std::size_t k = 0; k < grid.size(); ++k) sel.scores[k] = score(grid[k]);
  }

  const CandidateScore* best = &sel.scores.front();
  for (const auto& s : sel.scores) {
    const double tie_eps = 1e-12 * std::max(1.0, std::abs(best->mean_log_loss));
    if (s.mean_log_loss < best->mean_log_loss - tie_eps) {
      best = &s;
    } else if (std::abs(s.mean_log_loss - best->mean_log_loss) <= tie_eps) {
      if (s.lambda > best->lambda || (s.lambda == best->lambda && s.alpha > best->alpha)) best = &s;
    }
  }
  sel.lambda = best->lambda;
  sel.alpha = best->alpha;
  return sel;
}

inline CombinerParams refit_final(const JudgmentMatrix& z_train, std::span<const int> y_train, double lambda,
                                  double alpha, const SolverConfig& cfg = {}) {
  return fit(z_train, y_train, lambda, alpha, cfg).first;
}

// ---------------------------------------------------------------------------
// Serialization: weights keyed by rule id so saved parameters survive
// reordering of the rule set.

inline void to_json(json& j, const CombinerParams& p) {
  json weights = json::object();
  for (std::size_t k = 0; k < p.rule_ids.size(); ++k) weights[p.rule_ids[k]] = p.beta[k];
  j = json{{"weights", weights}, {"bias", p.bias}, {"lambda", p.lambda}, {"alpha", p.alpha}};
}

// Aligns stored weights to `rule_order`; the id sets must match exactly.
inline CombinerParams params_from_json(const json& j, const std::vector<std::string>& rule_order) {
  CombinerParams p;
  const auto& weights = j.at("weights");
  if (weights.size() != rule_order.size()) {
    throw IntegrityError("stored weights cover " + std::to_string(weights.size()) + " rules, rule set has " +
                         std::to_string(rule_order.size()));
  }
  for (const auto& id : rule_order) {
    if (!weights.contains(id)) throw IntegrityError("no stored weight for rule '" + id + "'");
    p.rule_ids.push_back(id);
    p.beta.push_back(weights.at(id).get<double>());
  }
  p.bias = j.at("bias").get<double>();
  p.lambda = j.at("lambda").get<double>();
  p.alpha = j.at("alpha").get<double>();
  return p;
}

inline std::string format_fixed(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s == "-0.0000" || (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos)) s.erase(0, 1);
  return s;
}

}  // namespace rlie
