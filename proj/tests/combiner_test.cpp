#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"

using namespace rlie;
using namespace rlie::testing;

namespace {

CombinerParams params(std::vector<double> beta, double bias) {
  CombinerParams p;
  for (std::size_t j = 0; j < beta.size(); ++j) p.rule_ids.push_back("r" + std::to_string(j));
  p.beta = std::move(beta);
  p.bias = bias;
  return p;
}

std::vector<double> theta_of(const CombinerParams& p) {
  auto t = p.beta;
  t.push_back(p.bias);
  return t;
}

}  // namespace

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(sigmoid(0), 0.5);
  EXPECT_GE(sigmoid(-800), 0.0);
  EXPECT_EQ(sigmoid(800), 1.0);
  EXPECT_TRUE(std::isfinite(log1pexp(800)));
  EXPECT_NEAR(log1pexp(800), 800, 1e-12);
  EXPECT_NEAR(sigmoid(-30), std::exp(-30) / (1 + std::exp(-30)), 1e-25);
}

TEST(PredictProba, Examples) {
  EXPECT_DOUBLE_EQ(predict_proba(params({0, 0}, 0), judgments({0, 0})), 0.5);
  EXPECT_NEAR(predict_proba(params({std::log(3.0)}, 0), judgments({1})), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(predict_proba(params({2, 1}, -1), judgments({1, -1})), 0.5);
  EXPECT_THROW(predict_proba(params({1}, 0), judgments({1, 1})), UsageError);
}

TEST(PredictLabel, ThresholdInclusive) {
  EXPECT_EQ(predict_label(params({}, 0), {}, {}), 1);
  EXPECT_EQ(predict_label(params({}, logit(0.4999)), {}, {}), 0);
  EXPECT_EQ(predict_label(params({}, logit(0.9)), {}, {}), 1);
  EXPECT_EQ(predict_label(params({}, logit(0.6)), {}, PredictConfig{0.7}), 0);
  EXPECT_THROW(validate(PredictConfig{1.0}), ConfigError);
  EXPECT_THROW(validate(PredictConfig{0.0}), ConfigError);
}

TEST(Objective, Examples) {
  JudgmentMatrix z({"a", "b"}, {"r0"}, judgments({1, -1}));
  const std::vector<int> y{1, 0};
  EXPECT_NEAR(objective(params({0}, 0), z, y), std::log(2.0), 1e-15);

  const std::vector<double> beta{2, -1};
  EXPECT_DOUBLE_EQ(elastic_net_penalty(beta, 1.0, 0.5), 2.75);

  const std::vector<int> bad{1, 2};
  EXPECT_THROW(objective(params({0}, 0), z, bad), UsageError);
}

TEST(Objective, MatchesIndependentImplementation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance(50, 4, seed);
    const auto d = dense(inst.z, inst.y);
    Rng rng(seed);
    auto p = params({0, 0, 0, 0}, 0);
    for (auto& b : p.beta) b = 6 * rng.unit() - 3;
    p.bias = 2 * rng.unit() - 1;
    p.lambda = rng.unit();
    p.alpha = rng.unit();
    EXPECT_NEAR(objective(p, inst.z, inst.y), oracle_objective(d, theta_of(p), p.lambda, p.alpha), 1e-12);
  }
}

// Loss clipping keeps saturated predictions finite.
TEST(Objective, ClippedWhenSaturated) {
  JudgmentMatrix z({"a"}, {"r0"}, judgments({1}));
  const std::vector<int> y{0};
  const double v = objective(params({1000}, 0), z, y);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(Gradient, MatchesCentralDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(30 + rng.below(40), 1 + rng.below(6), rng.next());
    auto p = params(std::vector<double>(inst.z.cols()), 0);
    p.rule_ids = inst.z.rule_ids();
    for (auto& b : p.beta) b = 4 * rng.unit() - 2;
    p.bias = 2 * rng.unit() - 1;
    p.lambda = rng.unit();
    p.alpha = rng.unit();
    const auto g = smooth_gradient(p, inst.z, inst.y);
    std::vector<double> fd(g.size());
    const double h = 1e-5;
    for (std::size_t k = 0; k < g.size(); ++k) {
      auto hi = p, lo = p;
      if (k < p.beta.size()) {
        hi.beta[k] += h;
        lo.beta[k] -= h;
      } else {
        hi.bias += h;
        lo.bias -= h;
      }
      fd[k] = (smooth_objective(hi, inst.z, inst.y) - smooth_objective(lo, inst.z, inst.y)) / (2 * h);
    }
    double num = 0, den = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      num += (g[k] - fd[k]) * (g[k] - fd[k]);
      den = std::max({den, g[k] * g[k], fd[k] * fd[k]});
    }
    EXPECT_LT(std::sqrt(num) / std::max(std::sqrt(den), 1e-12), 1e-5) << "trial " << trial;
  }
}

TEST(Fit, ZeroRulesGivesClippedPriorLogit) {
  JudgmentMatrix z({"a", "b", "c"}, {}, {});
  const std::vector<int> ones{1, 1, 1};
  const auto [p, rep] = fit(z, ones, 0.1, 0.5);
  EXPECT_NEAR(p.bias, 13.8155, 1e-4);
  EXPECT_DOUBLE_EQ(p.bias, logit(1 - 1e-6));
  EXPECT_TRUE(p.beta.empty());
  const std::vector<int> mixed{1, 0, 0};
  EXPECT_NEAR(fit(z, mixed, 0.1, 0.5).first.bias, std::log(0.5), 1e-12);
}

TEST(Fit, LargeL1PenaltyZeroesEveryWeight) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance(200, 10, seed);
    const auto [p, rep] = fit(inst.z, inst.y, 1e3, 1.0);
    for (double b : p.beta) EXPECT_EQ(b, 0.0);
    const double prior = std::accumulate(inst.y.begin(), inst.y.end(), 0.0) / inst.y.size();
    EXPECT_NEAR(p.bias, std::log(prior / (1 - prior)), 1e-6);
    EXPECT_TRUE(rep.converged);
  }
}

TEST(Fit, SoftThresholdBoundary) {
  // One feature; at beta=0 with the optimal bias the smooth gradient is g.
  const auto inst = random_instance(80, 1, 5, 0.0);
  const auto d = dense(inst.z, inst.y);
  const double prior = std::accumulate(inst.y.begin(), inst.y.end(), 0.0) / inst.y.size();
  const auto g = oracle_smooth_gradient(d, {0.0, std::log(prior / (1 - prior))}, 0, 1)[0];
  ASSERT_GT(std::abs(g), 1e-3);
  EXPECT_EQ(fit(inst.z, inst.y, 1.01 * std::abs(g), 1.0).first.beta[0], 0.0);
  EXPECT_NE(fit(inst.z, inst.y, 0.5 * std::abs(g), 1.0).first.beta[0], 0.0);
}

TEST(Fit, MonotoneDescent) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto inst = random_instance(120, 8, seed);
    for (double alpha : {0.0, 0.5, 1.0}) {
      ObjectiveTrace trace;
      fit(inst.z, inst.y, 0.01, alpha, {}, &trace);
      ASSERT_GE(trace.size(), 2u);
      for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1] + 1e-12) << k;
    }
  }
}

TEST(Fit, ConvergedMeansSmallFinalChange) {
  const auto inst = random_instance(100, 5, 4);
  const auto [p, rep] = fit(inst.z, inst.y, 0.1, 0.5);
  ASSERT_TRUE(rep.converged);
  EXPECT_LT(rep.last_change, SolverConfig{}.tol);
  EXPECT_NEAR(rep.objective, objective(p, inst.z, inst.y), 1e-12);
}

TEST(Fit, MatchesSubgradientOracleOnSmallProblems) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance(20, 3, 100 + seed);
    const auto d = dense(inst.z, inst.y);
    const auto oracle = subgradient_oracle(d, 0.1, 0.5);
    const auto [p, rep] = fit(inst.z, inst.y, 0.1, 0.5);
    EXPECT_LE(objective(p, inst.z, inst.y), oracle.objective + 1e-6) << seed;
    EXPECT_NEAR(objective(p, inst.z, inst.y), oracle.objective, 1e-8) << seed;
  }
}

TEST(Fit, SeparableOneDimensionalProblem) {
  // One rule firing +1 everywhere, all labels 1, no penalty: only beta+b
  // matters. Oracle: grid search over s = beta+b in [-10, 10].
  JudgmentMatrix z({"a", "b", "c", "d"}, {"r0"}, judgments({1, 1, 1, 1}));
  const std::vector<int> y{1, 1, 1, 1};
  double grid_best = std::numeric_limits<double>::infinity();
  for (int k = -10000; k <= 10000; ++k) {
    const double s = k * 1e-3;
    grid_best = std::min(grid_best, std::log1p(std::exp(-s)));
  }
  const auto [p, rep] = fit(z, y, 0.0, 0.0);
  const double obj = objective(p, z, y);
  EXPECT_LT(obj, 0.01);
  EXPECT_LE(obj, grid_best + 1e-6);
}

TEST(Fit, PermutingColumnsPermutesWeights) {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = random_instance(150, 6, rng.next());
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<std::vector<Judgment>> cols;
    std::vector<std::string> ids;
    for (auto j : perm) {
      cols.push_back(inst.z.column(j));
      ids.push_back(inst.z.rule_ids()[j]);
    }
    const auto zp = JudgmentMatrix::from_columns(inst.z.example_ids(), ids, cols);
    const auto a = fit(inst.z, inst.y, 0.01, 0.5).first;
    const auto b = fit(zp, inst.y, 0.01, 0.5).first;
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_NEAR(b.beta[k], a.beta[perm[k]], 1e-6);
    for (std::size_t i = 0; i < inst.z.rows(); ++i) {
      EXPECT_NEAR(predict_proba(a, inst.z.row(i)), predict_proba(b, zp.row(i)), 1e-7);
      EXPECT_EQ(predict_label(a, inst.z.row(i), {}), predict_label(a, inst.z.row(i), {}));
    }
  }
}

TEST(Fit, RejectsBadInputs) {
  const auto inst = random_instance(10, 2, 1);
  EXPECT_THROW(fit(inst.z, std::vector<int>{1, 0}, 0.1, 0.5), UsageError);
  EXPECT_THROW(fit(inst.z, inst.y, -1, 0.5), UsageError);
  EXPECT_THROW(fit(inst.z, inst.y, 0.1, 1.5), UsageError);
  EXPECT_THROW(fit(JudgmentMatrix({}, {"r"}, {}), std::vector<int>{}, 0.1, 0.5), UsageError);
}

TEST(StratifiedFolds, EveryIndexOnceAndClassesSpread) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> y(5 + rng.below(200));
    for (auto& v : y) v = rng.unit() < 0.3 ? 1 : 0;
    const std::size_t k = 2 + rng.below(5);
    const auto folds = stratified_folds(y, k);
    std::vector<int> seen(y.size(), 0);
    const double pos = std::accumulate(y.begin(), y.end(), 0.0);
    for (const auto& f : folds) {
      double fp = 0;
      for (auto i : f) {
        ++seen[i];
        fp += y[i];
      }
      EXPECT_NEAR(fp, pos / folds.size(), 1.0 + 1e-9);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_LE(folds.size(), k);
  }
}

TEST(SelectHyperparams, SingletonGrid) {
  const auto tr = random_instance(60, 3, 1);
  const auto va = random_instance(60, 3, 2);
  const auto sel = select_hyperparams(tr.z, tr.y, va.z, va.y, {{0.1, 0.5}}, 5);
  EXPECT_EQ(sel.lambda, 0.1);
  EXPECT_EQ(sel.alpha, 0.5);
  ASSERT_EQ(sel.scores.size(), 1u);
  EXPECT_GE(sel.scores[0].fold_scores.size(), 2u);
}

TEST(SelectHyperparams, TiesPreferLargerLambdaThenAlpha) {
  // An all-abstain column leaves every grid point with the same model.
  JudgmentMatrix tr({"a", "b", "c", "d"}, {"r"}, judgments({0, 0, 0, 0}));
  JudgmentMatrix va({"e", "f", "g", "h"}, {"r"}, judgments({0, 0, 0, 0}));
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_EQ(select_hyperparams(tr, y, va, y, {{0.1, 0.5}, {1.0, 0.5}}, 2).lambda, 1.0);
  const auto s = select_hyperparams(tr, y, va, y, {{1.0, 0.0}, {1.0, 1.0}, {0.1, 1.0}}, 2);
  EXPECT_EQ(s.lambda, 1.0);
  EXPECT_EQ(s.alpha, 1.0);
}

TEST(SelectHyperparams, Errors) {
  const auto tr = random_instance(20, 2, 1);
  JudgmentMatrix va({"e", "f"}, tr.z.rule_ids(), judgments({1, 1, 0, 0}));
  EXPECT_THROW(select_hyperparams(tr.z, tr.y, va, std::vector<int>{1, 1}, default_grid(), 2), SelectionError);
  EXPECT_THROW(select_hyperparams(tr.z, tr.y, va, std::vector<int>{1, 0}, {}, 2), UsageError);
  EXPECT_THROW(select_hyperparams(tr.z, tr.y, va, std::vector<int>{1, 0}, default_grid(), 1), UsageError);
  JudgmentMatrix other({"e", "f"}, {"x", "y"}, judgments({1, 1, 0, 0}));
  EXPECT_THROW(select_hyperparams(tr.z, tr.y, other, std::vector<int>{1, 0}, default_grid(), 2), IntegrityError);
}

// On the planted task the selected model must beat the all-zero model that
// a huge L1 penalty forces.
TEST(SelectHyperparams, BeatsOverRegularizedRefitOnPlantedData) {
  const auto task = make_planted_task({});
  const SyntheticJudge judge(task.judge_spec);
  std::vector<Rule> rules;
  for (std::size_t k = 0; k < 6; ++k) rules.push_back(rule("r" + std::to_string(k), task.judge_spec.predicates[k].rule));
  const auto splits = make_splits(task.examples, {}, 1);
  auto matrix = [&](const std::vector<Example>& ex) {
    std::vector<std::vector<Judgment>> cols(rules.size());
    for (std::size_t j = 0; j < rules.size(); ++j)
      for (const auto& e : ex) cols[j].push_back(judge(rules[j], e));
    std::vector<std::string> rids;
    for (const auto& r : rules) rids.push_back(r.rule_id);
    return JudgmentMatrix::from_columns(ids_of(ex), rids, cols);
  };
  const auto ztr = matrix(splits.train), zva = matrix(splits.validation), zte = matrix(splits.test);
  const auto ytr = labels_of(splits.train), yva = labels_of(splits.validation), yte = labels_of(splits.test);
  const auto sel = select_hyperparams(ztr, ytr, zva, yva, default_grid(), 5);
  const auto chosen = refit_final(ztr, ytr, sel.lambda, sel.alpha);
  const auto heavy = refit_final(ztr, ytr, 1e3, 1.0);
  EXPECT_EQ(chosen.lambda, sel.lambda);
  auto acc = [&](const CombinerParams& p) {
    std::vector<int> pred;
    for (std::size_t i = 0; i < zte.rows(); ++i) pred.push_back(predict_label(p, zte.row(i), {}));
    return accuracy(pred, yte);
  };
  EXPECT_GT(acc(chosen), acc(heavy));
  EXPECT_GE(acc(chosen), 0.95);
}

TEST(CombinerParams, JsonKeyedByRuleId) {
  auto p = params({0.5, -1.25}, 0.3);
  p.lambda = 0.1;
  p.alpha = 0.5;
  const json j = p;
  EXPECT_EQ(j["weights"]["r1"], -1.25);
  const auto reordered = params_from_json(j, {"r1", "r0"});
  EXPECT_EQ(reordered.beta, (std::vector<double>{-1.25, 0.5}));
  EXPECT_EQ(reordered.bias, 0.3);
  EXPECT_EQ(reordered.lambda, 0.1);
  EXPECT_THROW(params_from_json(j, {"r0"}), IntegrityError);
  EXPECT_THROW(params_from_json(j, {"r0", "zz"}), IntegrityError);
}

TEST(FormatFixed, NoNegativeZero) {
  EXPECT_EQ(format_fixed(-0.00001), "0.0000");
  EXPECT_EQ(format_fixed(1.23456), "1.2346");
  EXPECT_EQ(format_fixed(-2.5), "-2.5000");
}
