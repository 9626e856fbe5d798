#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "latentdemo/common.hpp"
#include "latentdemo/selection.hpp"

using namespace latentdemo;

namespace {

DemonstrationPair pair(const std::string& id, const std::string& prompt = "p") {
  return {id, prompt, "x", {"assert True"}, "python"};
}

std::vector<std::string> ids(const SelectionResult& r) {
  std::vector<std::string> out;
  for (const auto& s : r.selected) out.push_back(s.demo_task_id);
  return out;
}

std::vector<DemonstrationPair> numbered_pool(std::size_t n) {
  std::vector<DemonstrationPair> pool;
  for (std::size_t i = 0; i < n; ++i) pool.push_back(pair("d" + std::to_string(i)));
  return pool;
}

}  // namespace

TEST_CASE("latent selection sorts by score") {
  const std::vector<LatentCandidate> c = {{"A", -1.0}, {"B", -3.0}, {"C", -2.0}};
  const auto r = select_latent(c, pair("Q"), 2);
  CHECK(ids(r) == std::vector<std::string>{"A", "C"});
  CHECK(r.selected[0].score == -1.0);
  CHECK(r.strategy == Strategy::latent);
  CHECK(ids(select_latent(c, pair("Q"), 10)) == std::vector<std::string>{"A", "C", "B"});
}

TEST_CASE("latent ties keep pool order") {
  const std::vector<LatentCandidate> c = {{"A", -1.0}, {"B", -1.0}, {"C", -1.0}};
  CHECK(ids(select_latent(c, pair("Q"), 2)) == std::vector<std::string>{"A", "B"});
}

TEST_CASE("latent selection excludes the query and unscoreable demos") {
  const std::vector<LatentCandidate> c = {{"Q", 0.0}, {"A", -1.0}, {"B", std::nullopt}};
  const auto r = select_latent(c, pair("Q"), 3);
  CHECK(ids(r) == std::vector<std::string>{"A"});
  CHECK(r.excluded.size() == 2);
  CHECK_THROWS_AS(select_latent({{"Q", 0.0}, {"B", std::nullopt}}, pair("Q"), 1), RuntimeError);
  CHECK_THROWS_AS(select_latent(c, pair("Q"), 0), ConfigError);
}

TEST_CASE("latent ranking is invariant under positive scaling") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 0);
  std::vector<LatentCandidate> c, scaled;
  for (int i = 0; i < 50; ++i) {
    const double v = u(rng);
    c.push_back({"d" + std::to_string(i), v});
    scaled.push_back({"d" + std::to_string(i), v / 7.0});
  }
  CHECK(ids(select_latent(c, pair("Q"), 10)) == ids(select_latent(scaled, pair("Q"), 10)));
}

TEST_CASE("latent selection matches a brute-force argsort") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<LatentCandidate> c;
    for (std::size_t i = 0; i < n; ++i) c.push_back({"d" + std::to_string(i), static_cast<double>(rng() % 40) - 40});
    const std::size_t k = 1 + rng() % 12;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return *c[a].score > *c[b].score; });
    std::vector<std::string> expect;
    for (std::size_t i = 0; i < std::min(k, n); ++i) expect.push_back(c[order[i]].demo_task_id);
    CHECK(ids(select_latent(c, pair("Q"), k)) == expect);
  }
}

TEST_CASE("semantic selection uses edit similarity") {
  const std::vector<DemonstrationPair> pool = {pair("1", "abc"), pair("2", "abd"), pair("3", "xyz")};
  const auto r = select_semantic(pool, pair("Q", "abc"), 2);
  CHECK(ids(r) == std::vector<std::string>{"1", "2"});
  CHECK(*r.selected[0].score == 1.0);
  CHECK(*r.selected[1].score == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("semantic selection excludes the query itself") {
  const std::vector<DemonstrationPair> pool = {pair("Q", "abc"), pair("1", "abd"), pair("2", "zzz")};
  const auto r = select_semantic(pool, pair("Q", "abc"), 1);
  CHECK(ids(r) == std::vector<std::string>{"1"});
}

TEST_CASE("semantic ties go to the first pool index") {
  const std::vector<DemonstrationPair> pool = {pair("1", "same"), pair("2", "same"), pair("3", "same")};
  CHECK(ids(select_semantic(pool, pair("Q", "other"), 1)) == std::vector<std::string>{"1"});
}

TEST_CASE("random selection is seeded and exhaustive") {
  const auto pool = numbered_pool(10);
  const auto a = select_random(pool, pair("Q"), 4, 99);
  CHECK(a == select_random(pool, pair("Q"), 4, 99));
  CHECK(ids(a) != ids(select_random(pool, pair("Q"), 4, 100)));
  const auto all = select_random(pool, pair("Q"), 10, 5);
  auto got = ids(all);
  std::sort(got.begin(), got.end());
  auto expect = ids(select_semantic(pool, pair("Q"), 10));
  std::sort(expect.begin(), expect.end());
  CHECK(got == expect);
  for (const auto& s : all.selected) CHECK(!s.score.has_value());
}

TEST_CASE("random selection excludes the query") {
  auto pool = numbered_pool(5);
  pool.push_back(pair("Q"));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (const auto& id : ids(select_random(pool, pair("Q"), 5, seed))) CHECK(id != "Q");
  }
  CHECK_THROWS_AS(select_random({pair("Q")}, pair("Q"), 1, 0), RuntimeError);
}

TEST_CASE("random inclusion is roughly uniform") {
  const auto pool = numbered_pool(10);
  std::map<std::string, int> counts;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    for (const auto& id : ids(select_random(pool, pair("Q"), 3, seed))) ++counts[id];
  }
  for (const auto& [id, n] : counts) CHECK(std::abs(n / 4000.0 - 0.3) < 0.05);
}

TEST_CASE("selection JSON round trip") {
  SelectionResult r;
  r.query_task_id = "Q";
  r.strategy = Strategy::semantic;
  r.k = 2;
  r.selected = {{"A", 0.5}, {"B", std::nullopt}};
  r.excluded = {{"Q", "query itself"}};
  CHECK(selection_from_json(selection_to_json(r)) == r);
  CHECK_THROWS_AS(selection_from_json("[1,"), ParseError);
}

TEST_CASE("strategy names") {
  for (auto s : {Strategy::latent, Strategy::semantic, Strategy::random}) CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("best"), ConfigError);
}
