#include "doctest.h"

#include <json.hpp>

#include "fixtures.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/corpus.hpp"

using namespace latentdemo;
using fixtures::TempDir;

namespace {

std::string mbpp_line(int id, bool with_tests = true) {
  nlohmann::json j;
  j["task_id"] = id;
  j["text"] = "Write a function f" + std::to_string(id) + ".";
  j["code"] = "def f" + std::to_string(id) + "():\n    return " + std::to_string(id);
  if (with_tests) j["test_list"] = {"assert f" + std::to_string(id) + "() == " + std::to_string(id)};
  return j.dump() + "\n";
}

DatasetManifest ten_records() {
  std::string text;
  for (int i = 1; i <= 10; ++i) text += mbpp_line(i);
  return parse_dataset(text, SourceFormat::mbpp, "ten");
}

}  // namespace

TEST_CASE("mbpp file of 427 valid records loads 427 pairs") {
  TempDir dir;
  std::string text;
  for (int i = 1; i <= 427; ++i) text += mbpp_line(i);
  fixtures::write_file(dir / "mbpp.jsonl", text);
  const auto m = load_dataset(dir / "mbpp.jsonl", SourceFormat::mbpp);
  CHECK(m.records.size() == 427);
  CHECK(m.issues.empty());
  CHECK(m.name == "mbpp");
  const auto* r = m.find("12");
  REQUIRE(r != nullptr);
  CHECK(r->prompt_text == "Write a function f12.");
  CHECK(r->golden_code == "def f12():\n    return 12");
  CHECK(r->tests == std::vector<std::string>{"assert f12() == 12"});
  CHECK(r->language_tag == "python");
}

TEST_CASE("empty file is fatal") {
  TempDir dir;
  fixtures::write_file(dir / "empty.jsonl", "");
  CHECK_THROWS_AS(load_dataset(dir / "empty.jsonl", SourceFormat::mbpp), RuntimeError);
  try {
    load_dataset(dir / "empty.jsonl", SourceFormat::mbpp);
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("zero valid records") != std::string::npos);
  }
}

TEST_CASE("record without test_list becomes a record-level issue") {
  const auto m = parse_dataset(mbpp_line(5, false), SourceFormat::mbpp, "x");
  CHECK(m.records.empty());
  REQUIRE(m.issues.size() == 1);
  CHECK(m.issues[0].task_id == "5");
  CHECK(m.issues[0].line == 1);
  CHECK(m.issues[0].message.find("test_list") != std::string::npos);
}

TEST_CASE("malformed line reports its line number") {
  const std::string text = mbpp_line(1) + "{not json\n";
  try {
    parse_dataset(text, SourceFormat::mbpp, "bad");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("missing dataset file is a config error") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/data.jsonl", SourceFormat::mbpp), ConfigError);
}

TEST_CASE("humaneval adapter joins prompt and body and wraps the check") {
  nlohmann::json j;
  j["task_id"] = "HumanEval/0";
  j["prompt"] = "def add(a, b):\n    \"\"\"Add.\"\"\"\n";
  j["canonical_solution"] = "    return a + b\n";
  j["test"] = "def check(candidate):\n    assert candidate(1, 2) == 3\n";
  j["entry_point"] = "add";
  const auto m = parse_dataset(j.dump() + "\n", SourceFormat::humaneval, "he");
  REQUIRE(m.records.size() == 1);
  const auto& r = m.records[0];
  CHECK(r.golden_code == "def add(a, b):\n    \"\"\"Add.\"\"\"\n    return a + b\n");
  REQUIRE(r.tests.size() == 1);
  CHECK(r.tests[0].find("check(add)") != std::string::npos);
}

TEST_CASE("split_pool_query partitions by id") {
  const auto m = ten_records();
  SUBCASE("two query ids") {
    const auto s = split_pool_query(m, {"3", "7"});
    CHECK(s.pool.size() == 8);
    REQUIRE(s.queries.size() == 2);
    CHECK(s.queries[0].task_id == "3");
    CHECK(s.queries[1].task_id == "7");
    for (const auto& p : s.pool) CHECK((p.task_id != "3" && p.task_id != "7"));
  }
  SUBCASE("no query ids") {
    const auto s = split_pool_query(m, {});
    CHECK(s.pool.size() == 10);
    CHECK(s.queries.empty());
  }
  SUBCASE("every id is a query") {
    std::set<std::string> all;
    for (const auto& r : m.records) all.insert(r.task_id);
    const auto s = split_pool_query(m, all);
    CHECK(s.pool.empty());
    CHECK(s.queries.size() == 10);
  }
  SUBCASE("unknown ids are listed") {
    try {
      split_pool_query(m, {"3", "99"});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("99") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic corpus is deterministic and balanced") {
  const SyntheticSpec spec{{"reverse", "arith"}, 10};
  const auto a = build_synthetic_corpus(spec, 7);
  const auto b = build_synthetic_corpus(spec, 7);
  CHECK(a.records.size() == 20);
  CHECK(a.content_hash == b.content_hash);
  CHECK(a.records == b.records);
  std::map<std::string, int> per_family;
  for (const auto& r : a.records) ++per_family[task_family(r.task_id)];
  CHECK(per_family["reverse"] == 10);
  CHECK(per_family["arith"] == 10);
  CHECK(build_synthetic_corpus(spec, 8).content_hash != a.content_hash);
}

TEST_CASE("synthetic corpus needs two families") {
  CHECK_THROWS_AS(build_synthetic_corpus({{"reverse"}, 10}, 7), ConfigError);
  CHECK_THROWS_AS(build_synthetic_corpus({{"reverse", "reverse"}, 10}, 7), ConfigError);
  CHECK_THROWS_AS(build_synthetic_corpus({{"reverse", "nope"}, 10}, 7), ConfigError);
}

TEST_CASE("every synthetic family produces valid records") {
  const auto names = synthetic_family_names();
  REQUIRE(names.size() >= 2);
  const auto m = build_synthetic_corpus({names, 3}, 1);
  CHECK(m.records.size() == names.size() * 3);
  for (const auto& r : m.records) {
    CHECK(!r.prompt_text.empty());
    CHECK(!r.golden_code.empty());
    CHECK(!r.tests.empty());
  }
}

TEST_CASE("native round trip keeps the content hash") {
  TempDir dir;
  const auto m = build_synthetic_corpus({{"reverse", "arith"}, 4}, 3);
  write_dataset(m, dir / "native.jsonl");
  const auto back = load_dataset(dir / "native.jsonl", SourceFormat::native);
  CHECK(back.records == m.records);
  CHECK(back.content_hash == m.content_hash);
}

TEST_CASE("content hash tracks record order") {
  auto records = ten_records().records;
  const auto h1 = manifest_hash(records);
  std::swap(records[0], records[1]);
  CHECK(manifest_hash(records) != h1);
}
