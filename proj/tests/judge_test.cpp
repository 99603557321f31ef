#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "support.hpp"

using namespace rlie;
using namespace rlie::testing;

namespace {

const DatasetManifest kTweets{"retweets", "first", "second", "not applicable", {"text"}};

PromptTemplate judge_template() {
  return PromptTemplate("judge", 1, {"hypothesis", "text"}, "", "Rule: ${hypothesis}\nText: ${text}");
}

// Answers positive when the example text contains the rule text's last word.
std::string keyword_answer(const ChatRequest& req) {
  const auto& t = req.rule->text;
  const auto word = t.substr(t.rfind(' ') + 1);
  const bool hit = req.example->field("text")->find(word) != std::string::npos;
  return std::string("Reasoning...\n{Final answer: ") + (hit ? "first" : "second") + "}";
}

}  // namespace

TEST(ParseFinalAnswer, Examples) {
  EXPECT_EQ(parse_final_answer("...{Final answer: first}", kTweets), Judgment::Positive);
  EXPECT_EQ(parse_final_answer("Final answer: not applicable", kTweets), Judgment::Abstain);
  EXPECT_THROW(parse_final_answer("I think maybe.", kTweets), ParseError);
}

TEST(ParseFinalAnswer, CaseAndDecoration) {
  EXPECT_EQ(parse_final_answer("FINAL ANSWER: Second.", kTweets), Judgment::Negative);
  EXPECT_EQ(parse_final_answer("{Final answer: first tweet}", kTweets), Judgment::Positive);
  EXPECT_EQ(parse_final_answer("final answer: **first**\nbecause", kTweets), Judgment::Positive);
  EXPECT_THROW(parse_final_answer("Final answer: firstly", kTweets), ParseError);
  EXPECT_THROW(parse_final_answer("Final answer: ", kTweets), ParseError);
}

TEST(ParseFinalAnswer, MultipleMarkersAreAmbiguous) {
  try {
    parse_final_answer("Final answer: first. On reflection, Final answer: second", kTweets);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("ambiguous"), std::string::npos);
    EXPECT_NE(e.raw().find("On reflection"), std::string::npos);
  }
}

TEST(ParseFinalAnswer, AbstainCanBeForbidden) {
  EXPECT_THROW(parse_final_answer("{Final answer: not applicable}", kTweets, false), ParseError);
}

// Every string maps to exactly one judgment or a parse error.
TEST(ParseFinalAnswer, Total) {
  Rng rng(21);
  const std::vector<std::string> pieces{"Final answer:", "final ANSWER:", " first", " second", " not applicable",
                                        "{", "}", "\n", "x", " ", ".", "not", "applicable", "!!", "é"};
  for (int trial = 0; trial < 5000; ++trial) {
    std::string s;
    const auto len = rng.below(7);
    for (std::uint64_t k = 0; k < len; ++k) s += pieces[rng.below(pieces.size())];
    try {
      const auto z = parse_final_answer(s, kTweets);
      EXPECT_TRUE(z == Judgment::Positive || z == Judgment::Negative || z == Judgment::Abstain);
    } catch (const ParseError& e) {
      EXPECT_EQ(e.raw(), s);
    }
  }
}

TEST(CacheKey, SensitiveToEveryComponent) {
  const auto e = text_example("a", "hello", 1);
  const auto base = judgment_cache_key("judge@1", "m", "Rule x", e);
  EXPECT_EQ(base.size(), 64u);
  EXPECT_EQ(base, judgment_cache_key("judge@1", "m", "  Rule   x ", e));
  EXPECT_NE(base, judgment_cache_key("judge@2", "m", "Rule x", e));
  EXPECT_NE(base, judgment_cache_key("judge@1", "m2", "Rule x", e));
  EXPECT_NE(base, judgment_cache_key("judge@1", "m", "Rule y", e));
  EXPECT_NE(base, judgment_cache_key("judge@1", "m", "Rule x", text_example("b", "hello", 1)));
  EXPECT_NE(base, judgment_cache_key("judge@1", "m", "Rule x", text_example("a", "hello!", 1)));
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(JudgmentCache, PersistsAndReloads) {
  TempDir dir;
  const auto path = dir / "cache.jsonl";
  {
    JudgmentCache c(path);
    EXPECT_FALSE(c.lookup("k1"));
    c.store({"k1", Judgment::Positive, "r", "a"});
    c.store({"k2", Judgment::Abstain, "r", "b"});
    c.store({"k1", Judgment::Negative, "r", "a"});  // no-op
    EXPECT_EQ(c.size(), 2u);
    EXPECT_EQ(c.stats().misses, 1u);
  }
  JudgmentCache c(path);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.lookup("k1"), Judgment::Positive);
  EXPECT_EQ(c.lookup("k2"), Judgment::Abstain);
  EXPECT_EQ(c.stats().hits, 2u);
  EXPECT_DOUBLE_EQ(c.stats().hit_rate(), 1.0);
}

TEST(JudgmentCache, CorruptLinesBecomeWarnings) {
  TempDir dir;
  const auto path = dir / "cache.jsonl";
  write_file(path,
             "{\"key\":\"k1\",\"z\":1,\"rule\":\"r\",\"example\":\"a\"}\n"
             "not json at all\n"
             "{\"key\":\"k3\",\"z\":7,\"rule\":\"r\",\"example\":\"c\"}\n"
             "{\"key\":\"k4\",\"z\":-1,\"rule\":\"r\",\"example\":\"d\"}\n");
  JudgmentCache c(path, true);
  EXPECT_EQ(c.size(), 2u);
  ASSERT_EQ(c.warnings().size(), 2u);
  EXPECT_EQ(c.warnings()[0].line, 2u);
  EXPECT_EQ(c.warnings()[1].key, "k3");
}

TEST(JudgmentCache, ReadOnlyDoesNotCreateFile) {
  TempDir dir;
  JudgmentCache c(dir / "none.jsonl", true);
  c.store({"k", Judgment::Positive, "r", "a"});
  EXPECT_FALSE(std::filesystem::exists(dir / "none.jsonl"));
}

TEST(JudgeMatrix, CountingContract) {
  FunctionBackend fb("kw", keyword_answer);
  CountingBackend backend(fb);
  JudgmentCache cache;
  const std::vector<Rule> rules{rule("r1", "contains alpha"), rule("r2", "contains beta")};
  const std::vector<Example> ex{text_example("a", "alpha", 1), text_example("b", "beta", 0),
                                text_example("c", "alpha beta", 1)};
  const auto m = judge_matrix(backend, judge_template(), rules, ex, cache, kTweets);
  EXPECT_EQ(backend.calls(), 6u);
  EXPECT_EQ(cache.size(), 6u);
  EXPECT_EQ(feature_row(m, "a"), judgments({1, -1}));
  EXPECT_EQ(feature_row(m, "c"), judgments({1, 1}));

  const auto again = judge_matrix(backend, judge_template(), rules, ex, cache, kTweets);
  EXPECT_EQ(backend.calls(), 6u);
  EXPECT_EQ(again, m);
}

TEST(JudgeMatrix, IndependentOfCompletionOrder) {
  std::vector<Rule> rules;
  for (int j = 0; j < 4; ++j) rules.push_back(rule("r" + std::to_string(j), "has w" + std::to_string(j)));
  std::vector<Example> ex;
  Rng rng(8);
  for (int i = 0; i < 25; ++i) {
    std::string text;
    for (int j = 0; j < 4; ++j) {
      if (rng.unit() < 0.5) text += " w" + std::to_string(j);
    }
    ex.push_back(text_example("x" + std::to_string(i), text, i % 2));
  }
  JudgmentCache serial_cache;
  FunctionBackend serial("kw", keyword_answer, 1);
  const auto expected = judge_matrix(serial, judge_template(), rules, ex, serial_cache, kTweets);

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    FunctionBackend jittery(
        "kw",
        [seed](const ChatRequest& req) {
          const auto us = mix64(fnv1a64(req.example->id + req.rule->rule_id, seed)) % 300;
          std::this_thread::sleep_for(std::chrono::microseconds(us));
          return keyword_answer(req);
        },
        8);
    JudgmentCache cache;
    EXPECT_EQ(judge_matrix(jittery, judge_template(), rules, ex, cache, kTweets), expected);
  }
}

TEST(JudgeMatrix, FailureKeepsFinishedCellsAndCountsMissing) {
  int calls = 0;
  FunctionBackend flaky("kw", [&](const ChatRequest& req) {
    if (++calls == 2) throw BackendError("connection reset");
    return keyword_answer(req);
  });
  JudgmentCache cache;
  const std::vector<Rule> rules{rule("r1", "contains alpha")};
  const std::vector<Example> ex{text_example("a", "alpha", 1), text_example("b", "beta", 0),
                                text_example("c", "alpha", 1)};
  try {
    judge_matrix(flaky, judge_template(), rules, ex, cache, kTweets);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("1 of 3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(cache.size(), 2u);
  judge_matrix(flaky, judge_template(), rules, ex, cache, kTweets);
  EXPECT_EQ(calls, 4);
}

TEST(JudgeMatrix, UnparseableReplyIsParseError) {
  FunctionBackend rambling("r", [](const ChatRequest&) { return std::string("It depends."); });
  JudgmentCache cache;
  const std::vector<Rule> rules{rule("r1", "x")};
  const std::vector<Example> ex{text_example("a", "alpha", 1)};
  EXPECT_THROW(judge_matrix(rambling, judge_template(), rules, ex, cache, kTweets), ParseError);
  EXPECT_EQ(cache.size(), 0u);
  EXPECT_THROW(judge_matrix(rambling, judge_template(), {}, ex, cache, kTweets), UsageError);
}

TEST(JudgeMatrix, ConcurrentWritersPersistEveryCell) {
  TempDir dir;
  std::vector<Rule> rules;
  for (int j = 0; j < 5; ++j) rules.push_back(rule("r" + std::to_string(j), "has w" + std::to_string(j)));
  const auto ex = numbered_examples(40);
  {
    FunctionBackend fb("kw", keyword_answer, 6);
    JudgmentCache cache(dir / "c.jsonl");
    judge_matrix(fb, judge_template(), rules, ex, cache, kTweets);
  }
  JudgmentCache reloaded(dir / "c.jsonl");
  EXPECT_EQ(reloaded.size(), 200u);
  EXPECT_TRUE(reloaded.warnings().empty());
}

TEST(JudgmentCache, TruncatedLastLineDoesNotSwallowNextRecord) {
  TempDir dir;
  const auto path = dir / "c.jsonl";
  write_file(path, "{\"key\":\"k1\",\"z\":1,\"rule\":\"r\",\"example\":\"a\"}\n{\"key\":\"k2\",\"z\"");
  {
    JudgmentCache c(path);
    EXPECT_EQ(c.size(), 1u);
    EXPECT_EQ(c.warnings().size(), 1u);
    c.store({"k3", Judgment::Negative, "r", "c"});
  }
  JudgmentCache c(path);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.lookup("k3"), Judgment::Negative);
}
