#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "latentdemo/backend.hpp"
#include "latentdemo/concept_learning.hpp"
#include "latentdemo/corpus.hpp"

namespace latentdemo {

enum class ScoreStatus : std::uint8_t { ok, overflow };

/// How log P(theta | X, Y) is obtained.
///   appended: read off the model directly as the log-probability of the c
///     concept tokens placed after the demonstration, [X][Y][theta].
///   bayes: log P(Y | theta_i, X) - log sum_j P(Y | h_j, X) over the concept
///     set plus the no-concept hypothesis, with a uniform prior.
enum class ScoringMethod : std::uint8_t { appended, bayes };

std::string_view to_string(ScoringMethod m);
ScoringMethod parse_scoring_method(std::string_view name);

/// log P(theta | X, Y) of one demonstration under one concept.
struct ConceptScore {
  std::string task_id;  // owner of theta
  std::string demo_task_id;
  ScoreStatus status = ScoreStatus::ok;
  ScoringMethod method = ScoringMethod::appended;
  double log_posterior = 0.0;
  std::vector<double> per_token_logprobs;  // appended: c entries summing to log_posterior
  double log_likelihood = 0.0;             // bayes: log P(Y | theta, X)

  bool scoreable() const noexcept { return status == ScoreStatus::ok; }
};

/// Scores the layout [X][Y][theta] and sums the c concept-token log-probs.
/// Throws OverflowError when the sequence exceeds the context.
ConceptScore score_demonstration(const ModelBackend& backend, const ConceptTokenSet& theta,
                                 const DemonstrationPair& pair);

/// log P(Y | theta, X) over the solution tokens of [theta][X][Y].
double concept_log_likelihood(const ModelBackend& backend, const ConceptTokenSet& theta, const DemonstrationPair& pair);

/// log P(Y | X) with no concept tokens.
double base_log_likelihood(const ModelBackend& backend, const DemonstrationPair& pair);

/// JSONL cache of scores keyed by model fingerprint, concept digest, concept
/// owner, demo id, demo content hash and scoring method. Entries hold
/// the method's raw quantity; bayes posteriors are recomputed from cached
/// likelihoods. Reads may run concurrently.
class ScoreCache {
 public:
  ScoreCache() = default;  // in-memory only
  explicit ScoreCache(std::filesystem::path file);

  std::optional<ConceptScore> find(const std::string& fingerprint, const std::string& concept_digest,
                                   const std::string& theta, const DemonstrationPair& demo,
                                   ScoringMethod method) const;
  void insert(const std::string& fingerprint, const std::string& concept_digest, const ConceptScore& score,
              const DemonstrationPair& demo);

  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }
  std::size_t size() const;

 private:
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string, ScoringMethod>;
  std::filesystem::path file_;
  std::map<Key, ConceptScore> entries_;
  mutable std::shared_mutex mutex_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

/// One row per concept, one column per pool entry. Overflowing demos get an
/// overflow sentinel rather than a score; under bayes a demo that overflows
/// for any hypothesis is a sentinel in every row. Sentinels are never cached.
std::vector<std::vector<ConceptScore>> score_pool(const ModelBackend& backend,
                                                  const std::vector<ConceptTokenSet>& thetas,
                                                  const std::vector<DemonstrationPair>& pool,
                                                  ScoreCache* cache = nullptr, std::size_t parallelism = 1,
                                                  ScoringMethod method = ScoringMethod::appended);

/// Highest log_posterior across concepts for one demo, ties to the
/// lexically smallest concept owner. nullopt when every score is a sentinel.
std::optional<std::pair<std::string, double>> best_concept_score(const std::vector<ConceptScore>& scores);

/// Concept owner used for the no-concept hypothesis in cache entries.
inline constexpr std::string_view kNoConcept = "";

std::string score_to_jsonl(const ConceptScore& score, const std::string& fingerprint,
                           const std::string& concept_digest, const std::string& demo_hash);

}  // namespace latentdemo
