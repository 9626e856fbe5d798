#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentdemo/latentdemo.h"

namespace {

int exit_code(ld_status s) {
  switch (s) {
    case LD_OK: return 0;
    case LD_ERR_CONFIG:
    case LD_ERR_INVALID_ARGUMENT: return 1;
    case LD_ERR_SANDBOX: return 3;
    default: return 2;
  }
}

int report_failure(ld_status s) {
  std::fprintf(stderr, "error: %s\n", ld_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot demonstration selection experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ld_version());

  std::string config = "experiment.json";
  std::string run_dir;
  std::string runs_root = "runs";
  std::string log_level = "info";
  std::string backend;
  std::string strategy;
  std::uint64_t seed = 0;
  std::uint64_t k = 0;
  std::uint64_t n = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  auto* k_opt = app.add_option("--k", k, "Demonstrations per prompt")->check(CLI::PositiveNumber);
  auto* n_opt = app.add_option("--n", n, "Samples per query")->check(CLI::PositiveNumber);
  app.add_option("--config", config, "Experiment config (JSON)")->capture_default_str();
  app.add_option("--run-dir", run_dir, "Run directory (default: newest run for this config)");
  app.add_option("--runs-root", runs_root, "Parent of generated run directories")->capture_default_str();
  app.add_option("--backend", backend, "Model backend")->check(CLI::IsMember({"tiny", "stub"}));
  app.add_option("--strategy", strategy, "Selection strategy")
      ->check(CLI::IsMember({"latent", "semantic", "random", "all"}));
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train one concept per task");
  auto* score = app.add_subcommand("score", "Score the pool under every concept");
  std::vector<std::string> select_ids;
  auto* select = app.add_subcommand("select", "Write demonstration selections");
  select->add_option("queries", select_ids, "Query task ids (default: configured queries)");
  auto* generate = app.add_subcommand("generate", "Sample candidate programs");
  auto* evaluate = app.add_subcommand("evaluate", "Execute samples and compute metrics");
  auto* report = app.add_subcommand("report", "Print result tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (ld_status s = ld_set_log_level(log_level.c_str()); s != LD_OK) return report_failure(s);

  ld_overrides ov{};
  ov.has_seed = seed_opt->count() > 0;
  ov.seed = seed;
  ov.backend = backend.empty() ? nullptr : backend.c_str();
  ov.strategy = strategy.empty() ? nullptr : strategy.c_str();
  ov.has_k = k_opt->count() > 0;
  ov.k = k;
  ov.has_n = n_opt->count() > 0;
  ov.n = n;

  ld_pipeline* p = nullptr;
  if (ld_status s = ld_pipeline_open(config.c_str(), run_dir.c_str(), runs_root.c_str(), &ov, &p); s != LD_OK) {
    return report_failure(s);
  }

  ld_status s = LD_OK;
  if (train->parsed()) {
    s = ld_pipeline_train(p);
  } else if (score->parsed()) {
    s = ld_pipeline_score(p);
    if (s == LD_OK) {
      std::uint64_t hits = 0, misses = 0;
      ld_pipeline_cache_stats(p, &hits, &misses);
      std::printf("scores: %llu cached, %llu computed\n", static_cast<unsigned long long>(hits),
                  static_cast<unsigned long long>(misses));
    }
  } else if (select->parsed()) {
    std::vector<const char*> ids;
    for (const auto& id : select_ids) ids.push_back(id.c_str());
    s = ld_pipeline_select(p, ids.empty() ? nullptr : ids.data(), ids.size());
  } else if (generate->parsed()) {
    s = ld_pipeline_generate(p);
  } else if (evaluate->parsed() || report->parsed()) {
    s = evaluate->parsed() ? ld_pipeline_evaluate(p) : LD_OK;
    char* table = nullptr;
    if (s == LD_OK) s = ld_pipeline_report(p, &table);
    if (s == LD_OK) {
      std::fputs(table, stdout);
      ld_string_free(table);
    }
  }
  if (s == LD_OK) {
    char* dir = nullptr;
    if (ld_pipeline_run_dir(p, &dir) == LD_OK) {
      std::fprintf(stderr, "run directory: %s\n", dir);
      ld_string_free(dir);
    }
  }
  const int rc = s == LD_OK ? 0 : report_failure(s);
  ld_pipeline_close(p);
  return rc;
}
