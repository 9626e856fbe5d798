#include "doctest.h"

#include <set>

#include "fixtures.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/pipeline.hpp"

using namespace latentdemo;
using fixtures::TempDir;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.synthetic = SyntheticSpec{{"reverse", "arith"}, 6};
  cfg.queries_per_task = 1;
  cfg.backend = "tiny";
  cfg.tiny.d_model = 16;
  cfg.tiny.d_ff = 32;
  cfg.tiny.context = 512;
  cfg.training.c = 3;
  cfg.training.epochs = 2;
  cfg.k = 2;
  cfg.sampling.max_new_tokens = 12;
  cfg.n = 2;
  cfg.metrics = {parse_metric_request("correctness@2"), parse_metric_request("similarity@2"),
                 parse_metric_request("pass@1"), parse_metric_request("pass@2")};
  cfg.sandbox.timeout_s = 3;
  cfg.sandbox_parallelism = 2;
  cfg.seed = 5;
  return cfg;
}

fs::path write_stub(const TempDir& dir) {
  const auto path = dir / "stub.json";
  fixtures::write_file(path, R"({"vocab": ["?", "x", " ", "=", "1", "\n", "<eot>"], "unk": "?", "eot": "<eot>",
    "embedding_dim": 4, "context_budget": 4096, "seed": 2,
    "rules": [{"when": {"last": "="}, "dist": [{"piece": " ", "p": 0.9}]}],
    "default": [{"piece": "<eot>", "p": 0.2}, {"piece": "x", "p": 0.3}]})");
  return path;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("config parsing is strict") {
  CHECK_THROWS_AS(parse_experiment_config(R"({"seed": 1, "bogus": 2})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"sampling": {"n": 1, "temp": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
  const auto cfg = parse_experiment_config(
      R"({"synthetic": {"families": ["reverse", "arith"], "per_family": 4}, "queries": {"per_task": 1},
          "selection": {"strategies": "all", "k": 2}, "sampling": {"n": 5}, "metrics": ["pass@1", "pass@5"],
          "seed": 3})");
  CHECK(cfg.strategies.size() == 3);
  CHECK(cfg.k == 2);
  CHECK(cfg.scoring == ScoringMethod::bayes);
  const auto back = parse_experiment_config(cfg.to_json());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("validation catches inconsistent configs") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.synthetic.reset();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("missing dataset fails before any training") {
  TempDir dir;
  auto cfg = small_config();
  cfg.synthetic.reset();
  cfg.datasets = {{dir / "nope.jsonl", SourceFormat::mbpp, "mbpp"}};
  CHECK_THROWS_AS(Pipeline(cfg, dir / "run"), ConfigError);
  CHECK(count_files(dir / "run" / "checkpoints") == 0);
}

TEST_CASE("config digest tracks content") {
  auto a = small_config();
  auto b = small_config();
  CHECK(a.digest() == b.digest());
  b.seed = 6;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("task labels") {
  const DemonstrationPair p{"reverse/003", "p", "c", {"t"}, "python"};
  CHECK(task_of(p, "syn") == "reverse");
  const DemonstrationPair q{"11", "p", "c", {"t"}, "python"};
  CHECK(task_of(q, "mbpp") == "mbpp");
}

TEST_CASE("tiny end-to-end run") {
  TempDir dir;
  const auto cfg = small_config();
  std::string report_json;
  {
    Pipeline p(cfg, dir / "run");
    p.train();
    const auto ckpts = dir / "run" / "checkpoints";
    CHECK(count_files(ckpts) == 2);
    const auto a = p.backend().ids_of("reverse");
    const auto b = p.backend().ids_of("arith");
    REQUIRE(a.size() == 3);
    REQUIRE(b.size() == 3);
    CHECK((a.back() < b.front() || b.back() < a.front()));
    CHECK(fs::exists(dir / "run" / "manifest.json"));
    CHECK(fs::exists(dir / "run" / "traces"));

    p.select();
    for (const char* s : {"semantic", "latent", "random"}) {
      CHECK(count_files(dir / "run" / "selections" / s) == p.queries().size());
    }
    const auto table = p.report();
    CHECK(table.find("semantic") < table.find("latent"));
    CHECK(table.find("latent") < table.find("random"));
    for (const char* m : {"correctness@2", "similarity@2", "pass@1", "pass@2"}) CHECK(table.find(m) != std::string::npos);
    const auto reports = p.reports();
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].strategy == "semantic");
    CHECK(reports[1].strategy == "latent");
    CHECK(reports[2].strategy == "random");
    CHECK(reports[0].problems == 2);
    report_json = fixtures::read_file(dir / "run" / "report.json");
  }

  SUBCASE("same seed retrains bit-identical checkpoints") {
    Pipeline again(cfg, dir / "run2");
    again.train();
    for (const auto& e : fs::directory_iterator(dir / "run" / "checkpoints")) {
      CHECK(fixtures::read_file(e.path()) ==
            fixtures::read_file(dir / "run2" / "checkpoints" / e.path().filename()));
    }
  }
  SUBCASE("latent reselection is served from the score cache") {
    fs::remove_all(dir / "run" / "selections");
    Pipeline again(cfg, dir / "run");
    again.select();
    CHECK(again.score_cache_misses() == 0);
    CHECK(again.score_cache_hits() > 0);
    CHECK(count_files(dir / "run" / "selections" / "latent") == again.queries().size());
  }
  SUBCASE("evaluation resumes to an identical report") {
    fs::remove(dir / "run" / "report.json");
    fs::remove(dir / "run" / "outcomes.jsonl");
    fs::remove_all(dir / "run" / "reports");
    Pipeline again(cfg, dir / "run");
    again.evaluate();
    CHECK(fixtures::read_file(dir / "run" / "report.json") == report_json);
  }
}

TEST_CASE("k beyond the pool saturates") {
  TempDir dir;
  auto cfg = small_config();
  cfg.k = 50;
  cfg.strategies = {Strategy::semantic, Strategy::random};
  Pipeline p(cfg, dir / "run");
  p.select();
  const auto text = fixtures::read_file(dir / "run" / "selections" / "semantic" /
                                        fs::directory_iterator(dir / "run" / "selections" / "semantic")->path().filename());
  const auto sel = selection_from_json(text);
  CHECK(sel.selected.size() == p.pool().size());
}

TEST_CASE("stub runs reproduce identical reports") {
  TempDir dir;
  auto cfg = small_config();
  cfg.backend = "stub";
  cfg.stub_table = write_stub(dir);
  {
    Pipeline p(cfg, dir / "a");
    p.report();
  }
  {
    Pipeline p(cfg, dir / "b");
    p.report();
  }
  CHECK(fixtures::read_file(dir / "a" / "report.json") == fixtures::read_file(dir / "b" / "report.json"));
  CHECK(fixtures::read_file(dir / "a" / "samples.jsonl") == fixtures::read_file(dir / "b" / "samples.jsonl"));
}

TEST_CASE("run directory reuse by config digest") {
  TempDir dir;
  auto cfg = small_config();
  cfg.backend = "stub";
  cfg.stub_table = write_stub(dir);
  fs::path first;
  {
    Pipeline p(cfg, "", dir / "runs");
    first = p.run_dir();
    CHECK(first.filename().string().find(cfg.digest().substr(0, 12)) != std::string::npos);
  }
  {
    Pipeline p(cfg, "", dir / "runs");
    CHECK(p.run_dir() == first);
  }
  cfg.seed = 99;
  Pipeline other(cfg, "", dir / "runs");
  CHECK(other.run_dir() != first);
}
