#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latentdemo/backend.hpp"
#include "latentdemo/concept_learning.hpp"
#include "latentdemo/concept_scoring.hpp"
#include "latentdemo/corpus.hpp"
#include "latentdemo/evaluation.hpp"
#include "latentdemo/sandbox.hpp"
#include "latentdemo/selection.hpp"
#include "latentdemo/tiny_lm.hpp"

namespace latentdemo {

struct DatasetSource {
  std::filesystem::path path;
  SourceFormat format = SourceFormat::native;
  std::string name;  // defaults to the file stem
};

enum class ConceptMode {
  per_task,    // a query is ranked under the concept of its own task
  multi_task,  // every demo is ranked by its best score over all concepts
};

struct ExperimentConfig {
  std::vector<DatasetSource> datasets;
  std::optional<SyntheticSpec> synthetic;
  std::vector<std::string> query_ids;        // explicit held-out queries
  std::optional<std::size_t> queries_per_task;  // or: last N records of each task

  std::string backend = "tiny";  // "tiny" or "stub"
  TinyLmConfig tiny;
  std::filesystem::path stub_table;

  TrainingConfig training;
  ConceptMode concept_mode = ConceptMode::per_task;
  std::vector<std::string> concept_tasks;  // empty: every task in the pool
  std::vector<std::filesystem::path> concept_checkpoints;  // preloaded, not retrained
  ScoringMethod scoring = ScoringMethod::bayes;
  std::size_t scoring_parallelism = 1;

  std::vector<Strategy> strategies = {Strategy::semantic, Strategy::latent, Strategy::random};
  std::size_t k = 4;

  SamplingConfig sampling;
  std::size_t n = 100;  // the reference metrics go up to k = 100

  SandboxPolicy sandbox;
  std::size_t sandbox_parallelism = 4;

  std::vector<MetricRequest> metrics = reference_metric_requests();
  std::uint64_t seed = 0;

  /// Checks every invariant that does not need data: counts, n against the
  /// largest metric k, existence of referenced files. Throws ConfigError.
  void validate() const;
  /// Canonical JSON form; the config digest hashes this text.
  std::string to_json() const;
  std::string digest() const;
};

/// Parses the JSON config; relative paths resolve against `base_dir`.
/// Unknown keys are rejected.
ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Task label of a record: the task_id prefix before '/', else the dataset name.
std::string task_of(const DemonstrationPair& pair, const std::string& dataset_name);

std::unique_ptr<ModelBackend> make_backend(const ExperimentConfig& cfg);

/// One experiment run rooted in a run directory. Each stage reuses artifacts
/// already on disk and runs the stages before it when they are missing:
///   checkpoints/<task>.dcpt, traces/<task>.json, scores.jsonl,
///   selections/<strategy>/<query>.json, samples.jsonl, outcomes.jsonl,
///   reports/<dataset>-<strategy>.json, report.json, report.txt, manifest.json.
class Pipeline {
 public:
  /// An empty `run_dir` reuses the newest runs/<timestamp>-<digest> under
  /// `runs_root` with this config digest, or creates a fresh one.
  Pipeline(ExperimentConfig cfg, std::filesystem::path run_dir, const std::filesystem::path& runs_root = "runs");
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void train();
  void score();
  void select(std::optional<std::vector<std::string>> query_ids = std::nullopt);
  void generate();
  void evaluate();
  /// Rendered comparison tables, one per dataset, strategy columns in
  /// semantic, latent, random order. Evaluates first when needed.
  std::string report();

  const std::filesystem::path& run_dir() const noexcept;
  const ExperimentConfig& config() const noexcept;
  const ModelBackend& backend() const noexcept;
  const std::vector<DemonstrationPair>& pool() const noexcept;
  const std::vector<DemonstrationPair>& queries() const noexcept;
  std::vector<MetricReport> reports() const;
  std::size_t score_cache_hits() const noexcept;
  std::size_t score_cache_misses() const noexcept;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

}  // namespace latentdemo
