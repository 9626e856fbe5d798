#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "fixtures.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/concept_scoring.hpp"
#include "latentdemo/tiny_lm.hpp"

using namespace latentdemo;
using fixtures::TempDir;

namespace {

// Unknown bytes collapse to "?" so any template text tokenizes.
std::unique_ptr<StubBackend> scoring_stub(const std::string& rules, const std::string& deflt,
                                          std::size_t budget = 4096) {
  return fixtures::stub(R"({"vocab": ["?", "A", "B"], "unk": "?", "embedding_dim": 2, "context_budget": )" +
                        std::to_string(budget) + R"(, "rules": )" + rules + R"(, "default": )" + deflt + "}");
}

ConceptTokenSet make_concept(ModelBackend& b, const std::string& task, std::size_t c) {
  return {task, b.extend_embeddings(task, c, InitRule::zeros, 0), c, ""};
}

DemonstrationPair demo(const std::string& id, const std::string& prompt, const std::string& code = "x") {
  return {id, prompt, code, {"assert True"}, "python"};
}

}  // namespace

TEST_CASE("each concept token at 1/4 gives ln(1/16)") {
  auto b = scoring_stub("[]", R"([{"added": true, "p": 0.25}])");
  const auto theta = make_concept(*b, "t", 2);
  const auto s = score_demonstration(*b, theta, demo("d", "q"));
  CHECK(s.status == ScoreStatus::ok);
  CHECK(s.per_token_logprobs.size() == 2);
  CHECK(s.log_posterior == doctest::Approx(std::log(1.0 / 16)).epsilon(1e-15));
  CHECK(std::abs(s.log_posterior - std::log(1.0 / 16)) <= 1e-15);
}

TEST_CASE("a demo that makes the concept likelier scores higher") {
  auto b = scoring_stub(R"([{"when": {"contains": "A"}, "dist": [{"added": true, "p": 0.5}]}])",
                        R"([{"added": true, "p": 0.25}])");
  const auto theta = make_concept(*b, "t", 2);
  const double a = score_demonstration(*b, theta, demo("a", "A")).log_posterior;
  const double bb = score_demonstration(*b, theta, demo("b", "B")).log_posterior;
  CHECK(a == doctest::Approx(std::log(0.25)).epsilon(1e-15));
  CHECK(bb == doctest::Approx(std::log(0.0625)).epsilon(1e-15));
  CHECK(a > bb);
}

TEST_CASE("certain concept token scores zero") {
  auto b = scoring_stub("[]", R"([{"added": true, "p": 1.0}])");
  const auto theta = make_concept(*b, "t", 1);
  CHECK(score_demonstration(*b, theta, demo("d", "q")).log_posterior == 0.0);
}

TEST_CASE("score_pool shape and cache") {
  TempDir dir;
  auto b = scoring_stub("[]", R"([{"added": true, "p": 0.1}])");
  const std::vector<ConceptTokenSet> thetas = {make_concept(*b, "t1", 2), make_concept(*b, "t2", 3)};
  const std::vector<DemonstrationPair> pool = {demo("d1", "A"), demo("d2", "B"), demo("d3", "AB")};

  ScoreCache cache(dir / "scores.jsonl");
  const auto first = score_pool(*b, thetas, pool, &cache);
  REQUIRE(first.size() == 2);
  std::size_t n = 0;
  for (const auto& row : first) n += row.size();
  CHECK(n == 6);
  CHECK(cache.misses() == 6);
  CHECK(cache.hits() == 0);
  CHECK(first[1][0].log_posterior == doctest::Approx(3 * std::log(0.1)).epsilon(1e-15));

  const auto second = score_pool(*b, thetas, pool, &cache);
  CHECK(cache.hits() == 6);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::memcmp(&first[i][j].log_posterior, &second[i][j].log_posterior, sizeof(double)) == 0);
      CHECK(first[i][j].per_token_logprobs == second[i][j].per_token_logprobs);
    }
  }

  ScoreCache reopened(dir / "scores.jsonl");
  CHECK(reopened.size() == 6);
  const auto third = score_pool(*b, thetas, pool, &reopened);
  CHECK(reopened.hits() == 6);
  CHECK(reopened.misses() == 0);
  CHECK(third[0][2].log_posterior == first[0][2].log_posterior);
}

TEST_CASE("cache misses when the demo content changes") {
  auto b = scoring_stub("[]", R"([{"added": true, "p": 0.25}])");
  const std::vector<ConceptTokenSet> thetas = {make_concept(*b, "t", 2)};
  ScoreCache cache;
  score_pool(*b, thetas, {demo("d", "A")}, &cache);
  score_pool(*b, thetas, {demo("d", "AB")}, &cache);
  CHECK(cache.hits() == 0);
  CHECK(cache.misses() == 2);
}

TEST_CASE("overflowing demo becomes a sentinel") {
  auto b = scoring_stub("[]", R"([{"added": true, "p": 0.25}])", 60);
  const std::vector<ConceptTokenSet> thetas = {make_concept(*b, "t", 2)};
  std::vector<DemonstrationPair> pool;
  for (int i = 0; i < 5; ++i) pool.push_back(demo("d" + std::to_string(i), "A"));
  pool.push_back(demo("long", std::string(200, 'A')));
  CHECK_THROWS_AS(score_demonstration(*b, thetas[0], pool.back()), OverflowError);
  ScoreCache cache;
  const auto m = score_pool(*b, thetas, pool, &cache);
  const auto sentinels = std::count_if(m[0].begin(), m[0].end(), [](const auto& s) { return !s.scoreable(); });
  CHECK(sentinels == 1);
  CHECK(!m[0][5].scoreable());
  CHECK(cache.size() == 5);
  CHECK(!best_concept_score({m[0][5]}).has_value());
}

TEST_CASE("score_pool preconditions") {
  auto b = scoring_stub("[]", "[]");
  const auto theta = make_concept(*b, "t", 1);
  CHECK_THROWS_AS(score_pool(*b, {}, {demo("d", "A")}), ConfigError);
  CHECK_THROWS_AS(score_pool(*b, {theta}, {}), ConfigError);
}

TEST_CASE("best_concept_score") {
  auto s = [](std::string task, double v) {
    ConceptScore c;
    c.task_id = std::move(task);
    c.log_posterior = v;
    return c;
  };
  auto best = best_concept_score({s("t1", -2.0), s("t2", -1.0)});
  REQUIRE(best);
  CHECK(best->first == "t2");
  CHECK(best->second == -1.0);
  best = best_concept_score({s("t1", -3.5)});
  CHECK(best->first == "t1");
  CHECK(best->second == -3.5);
  best = best_concept_score({s("t2", -1.0), s("t1", -1.0)});
  CHECK(best->first == "t1");
}

TEST_CASE("ranking survives division by c") {
  auto b = scoring_stub(R"([{"when": {"contains": "A"}, "dist": [{"added": true, "p": 0.3}]},
                           {"when": {"contains": "B"}, "dist": [{"added": true, "p": 0.1}]}])",
                        R"([{"added": true, "p": 0.2}])");
  const auto theta = make_concept(*b, "t", 3);
  const std::vector<DemonstrationPair> pool = {demo("a", "A"), demo("b", "B"), demo("c", "?")};
  std::vector<std::pair<double, std::string>> raw, scaled;
  for (const auto& p : pool) {
    const double v = score_demonstration(*b, theta, p).log_posterior;
    raw.emplace_back(v, p.task_id);
    scaled.emplace_back(v / 3.0, p.task_id);
  }
  std::sort(raw.rbegin(), raw.rend());
  std::sort(scaled.rbegin(), scaled.rend());
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(raw[i].second == scaled[i].second);
  CHECK(raw[0].second == "a");
}

TEST_CASE("scoring leaves the backend untouched") {
  TinyLmConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.context = 256;
  TinyCausalLM lm(cfg);
  const std::vector<ConceptTokenSet> thetas = {make_concept(lm, "t1", 2), make_concept(lm, "t2", 2)};
  const auto digest = lm.base_digest();
  const auto ext = lm.extension_snapshot().rows;
  score_pool(lm, thetas, {demo("a", "abc"), demo("b", "xyz")}, nullptr, 2, ScoringMethod::bayes);
  CHECK(lm.base_digest() == digest);
  CHECK(lm.extension_snapshot().rows == ext);
}

TEST_CASE("bayes posteriors normalize with the no-concept hypothesis") {
  TinyLmConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.context = 256;
  TinyCausalLM lm(cfg);
  std::vector<ConceptTokenSet> thetas = {{"t1", lm.extend_embeddings("t1", 2, InitRule::copy_vocab_row, 1), 2, ""},
                                         {"t2", lm.extend_embeddings("t2", 2, InitRule::copy_vocab_row, 2), 2, ""}};
  const std::vector<DemonstrationPair> pool = {demo("a", "abc", "def f(): pass"), demo("b", "xyz", "y = 1")};
  ScoreCache cache;
  const auto m = score_pool(lm, thetas, pool, &cache, 1, ScoringMethod::bayes);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const double base = base_log_likelihood(lm, pool[j]);
    const double evidence = m[0][j].log_likelihood - m[0][j].log_posterior;
    CHECK(m[1][j].log_likelihood - m[1][j].log_posterior == doctest::Approx(evidence).epsilon(1e-12));
    CHECK(m[0][j].log_likelihood == doctest::Approx(concept_log_likelihood(lm, thetas[0], pool[j])).epsilon(1e-12));
    const double total = std::exp(m[0][j].log_posterior) + std::exp(m[1][j].log_posterior) + std::exp(base - evidence);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m[0][j].method == ScoringMethod::bayes);
  }
  const auto again = score_pool(lm, thetas, pool, &cache, 2, ScoringMethod::bayes);
  CHECK(again[1][1].log_posterior == m[1][1].log_posterior);
  CHECK(cache.hits() > 0);
}

TEST_CASE("scoring method names") {
  CHECK(parse_scoring_method("bayes") == ScoringMethod::bayes);
  CHECK(parse_scoring_method(to_string(ScoringMethod::appended)) == ScoringMethod::appended);
  CHECK_THROWS_AS(parse_scoring_method("max"), ConfigError);
}
