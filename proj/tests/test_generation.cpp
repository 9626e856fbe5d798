#include "doctest.h"

#include <map>

#include "fixtures.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/generation.hpp"

using namespace latentdemo;

namespace {

std::unique_ptr<StubBackend> text_stub(std::size_t budget = 4096) {
  return fixtures::stub(R"({"vocab": ["?", "A", "B", "<eot>"], "unk": "?", "eot": "<eot>", "context_budget": )" +
                        std::to_string(budget) + R"(, "default": [{"piece": "<eot>", "p": 0.05}]})");
}

struct Pool {
  std::map<std::string, DemonstrationPair> by_id;
  PoolLookup lookup() const {
    return [this](std::string_view id) -> const DemonstrationPair* {
      auto it = by_id.find(std::string(id));
      return it == by_id.end() ? nullptr : &it->second;
    };
  }
};

DemonstrationPair pair(const std::string& id, const std::string& prompt, const std::string& code) {
  return {id, prompt, code, {"assert True"}, "python"};
}

SelectionResult selection_of(std::vector<std::string> ids) {
  SelectionResult r;
  r.query_task_id = "q";
  r.k = ids.size();
  for (auto& id : ids) r.selected.push_back({id, std::nullopt});
  return r;
}

}  // namespace

TEST_CASE("prompt with no demonstrations is the query block") {
  auto b = text_stub();
  Pool pool;
  const auto p = assemble_few_shot_prompt(*b, selection_of({}), pair("q", "Reverse s.", ""), pool.lookup(), 16);
  CHECK(p.rendered_text == "### Problem:\nReverse s.\n### Solution:\n");
  CHECK(p.demo_ids.empty());
  CHECK(p.token_count == b->tokenize(p.rendered_text).size());
}

TEST_CASE("two demonstrations render lowest-ranked first") {
  auto b = text_stub();
  Pool pool;
  pool.by_id["best"] = pair("best", "P1", "c1");
  pool.by_id["second"] = pair("second", "P2", "c2");
  const auto p = assemble_few_shot_prompt(*b, selection_of({"best", "second"}), pair("q", "Q", ""), pool.lookup(), 16);
  CHECK(p.rendered_text ==
        "### Problem:\nP2\n### Solution:\nc2\n\n"
        "### Problem:\nP1\n### Solution:\nc1\n\n"
        "### Problem:\nQ\n### Solution:\n");
  CHECK(p.demo_ids == std::vector<std::string>{"second", "best"});
}

TEST_CASE("missing demonstration is named") {
  auto b = text_stub();
  Pool pool;
  try {
    assemble_few_shot_prompt(*b, selection_of({"ghost"}), pair("q", "Q", ""), pool.lookup(), 16);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

TEST_CASE("budget overflow and demo dropping") {
  auto b = text_stub(120);
  Pool pool;
  pool.by_id["a"] = pair("a", std::string(30, 'A'), "x");
  pool.by_id["b"] = pair("b", std::string(30, 'B'), "y");
  const auto sel = selection_of({"a", "b"});
  CHECK_THROWS_AS(assemble_few_shot_prompt(*b, sel, pair("q", "Q", ""), pool.lookup(), 20), OverflowError);
  CHECK_THROWS_AS(assemble_few_shot_prompt(*b, selection_of({}), pair("q", "Q", ""), pool.lookup(), 120),
                  OverflowError);
  std::vector<std::string> dropped;
  const auto p = assemble_within_budget(*b, sel, pair("q", "Q", ""), pool.lookup(), 20, &dropped);
  CHECK(dropped == std::vector<std::string>{"b"});
  CHECK(p.demo_ids == std::vector<std::string>{"a"});
  CHECK(p.token_count <= 120 - 20);
}

TEST_CASE("extract_code") {
  const std::vector<std::string> m = {"### Problem:"};
  CHECK(extract_code("x = 1\n### Problem:junk", m) == "x = 1");
  CHECK(extract_code("y = 2  \n\n", m) == "y = 2");
  CHECK(extract_code("### Problem: at start", m).empty());
  CHECK(extract_code("  lead\n", m) == "  lead");
  CHECK(extract_code("a STOP b END c", {"END", "STOP"}) == "a");
  for (std::string s : {"x = 1\n### Problem:junk", "plain\n", "### Problem:"}) {
    const auto once = extract_code(s, m);
    CHECK(extract_code(once, m) == once);
  }
}

TEST_CASE("sample generation") {
  auto b = text_stub();
  Pool pool;
  const auto prompt = assemble_few_shot_prompt(*b, selection_of({}), pair("q", "Q", ""), pool.lookup(), 32);
  SamplingConfig cfg;
  cfg.max_new_tokens = 32;
  cfg.temperature = 1.0;
  cfg.top_p = 1.0;

  CHECK_THROWS_AS(generate_samples(*b, prompt, 0, cfg, 1), ConfigError);

  SUBCASE("greedy single sample is deterministic") {
    auto g = cfg;
    g.greedy = true;
    const auto a = generate_samples(*b, prompt, 1, g, 1);
    const auto c = generate_samples(*b, prompt, 1, g, 2);
    REQUIRE(a.size() == 1);
    CHECK(a[0].raw_text == c[0].raw_text);
  }
  SUBCASE("same base seed gives the same samples") {
    const auto a = generate_samples(*b, prompt, 5, cfg, 40);
    const auto c = generate_samples(*b, prompt, 5, cfg, 40);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(a[i].raw_text == c[i].raw_text);
      CHECK(a[i].sample_index == i);
      CHECK(a[i].sampling_seed == 40 + i);
      CHECK(a[i].query_task_id == "q");
    }
  }
  SUBCASE("samples are independent of each other") {
    const auto a = generate_samples(*b, prompt, 5, cfg, 40);
    CHECK(generate_samples(*b, prompt, 1, cfg, 43)[0].raw_text == a[3].raw_text);
  }
}
