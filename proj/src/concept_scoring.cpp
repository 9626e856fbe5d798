#include "latentdemo/concept_scoring.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "json.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/generation.hpp"

namespace latentdemo {

namespace fs = std::filesystem;

ConceptScore score_demonstration(const ModelBackend& backend, const ConceptTokenSet& theta,
                                 const DemonstrationPair& pair) {
  if (theta.token_ids.empty()) throw ConfigError("concept for " + theta.task_id + " has no tokens");
  TokenSequence seq;
  try {
    seq = backend.tokenize(render_problem_part(pair), Segment::input);
    seq.append(backend.tokenize(render_solution_part(pair), Segment::output));
  } catch (const OverflowError& e) {
    throw OverflowError(fmt::format("demo {} does not fit the context: {}", pair.task_id, e.what()));
  }
  for (TokenId id : theta.token_ids) seq.append(id, Segment::concept_token);
  if (seq.size() > backend.context_budget()) {
    throw OverflowError(fmt::format("demo {} needs {} tokens with concept {}; context budget is {}", pair.task_id,
                                    seq.size(), theta.task_id, backend.context_budget()));
  }
  const auto lp = backend.sequence_logprobs(seq);
  ConceptScore s;
  s.task_id = theta.task_id;
  s.demo_task_id = pair.task_id;
  s.per_token_logprobs.assign(lp.end() - static_cast<std::ptrdiff_t>(theta.token_ids.size()), lp.end());
  for (double v : s.per_token_logprobs) s.log_posterior += v;
  return s;
}

std::string_view to_string(ScoringMethod m) { return m == ScoringMethod::bayes ? "bayes" : "appended"; }

ScoringMethod parse_scoring_method(std::string_view name) {
  if (name == "appended") return ScoringMethod::appended;
  if (name == "bayes") return ScoringMethod::bayes;
  throw ConfigError("unknown scoring method '" + std::string(name) + "'");
}

double concept_log_likelihood(const ModelBackend& backend, const ConceptTokenSet& theta, const DemonstrationPair& pair) {
  const auto seq = assemble_training_sequence(backend, theta, pair);
  return -backend.concept_loss_and_gradient(seq, seq.positions(Segment::output)).loss;
}

double base_log_likelihood(const ModelBackend& backend, const DemonstrationPair& pair) {
  TokenSequence seq;
  try {
    seq = backend.tokenize(render_problem_part(pair), Segment::input);
    seq.append(backend.tokenize(render_solution_part(pair), Segment::output));
  } catch (const OverflowError& e) {
    throw OverflowError(fmt::format("demo {} does not fit the context: {}", pair.task_id, e.what()));
  }
  if (seq.size() > backend.context_budget()) {
    throw OverflowError(fmt::format("demo {} needs {} tokens; context budget is {}", pair.task_id, seq.size(),
                                    backend.context_budget()));
  }
  const auto lp = backend.sequence_logprobs(seq);
  double sum = 0.0;
  for (std::size_t pos : seq.positions(Segment::output)) sum += lp[pos - 1];
  return sum;
}

std::string score_to_jsonl(const ConceptScore& score, const std::string& fingerprint,
                           const std::string& concept_digest, const std::string& demo_hash) {
  nlohmann::ordered_json j;
  j["theta"] = score.task_id;
  j["demo"] = score.demo_task_id;
  j["checkpoint_digest"] = concept_digest;
  j["model_fingerprint"] = fingerprint;
  j["demo_hash"] = demo_hash;
  j["method"] = to_string(score.method);
  j["log_posterior"] = score.log_posterior;
  j["per_token"] = score.per_token_logprobs;
  if (score.method == ScoringMethod::bayes) j["log_likelihood"] = score.log_likelihood;
  return j.dump();
}

ScoreCache::ScoreCache(fs::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ConceptScore s;
      s.task_id = j.at("theta").get<std::string>();
      s.demo_task_id = j.at("demo").get<std::string>();
      s.method = parse_scoring_method(j.value("method", std::string("appended")));
      s.log_posterior = j.at("log_posterior").get<double>();
      s.per_token_logprobs = j.at("per_token").get<std::vector<double>>();
      s.log_likelihood = j.value("log_likelihood", 0.0);
      entries_[{j.at("model_fingerprint").get<std::string>(), j.at("checkpoint_digest").get<std::string>(),
                s.task_id, s.demo_task_id, j.value("demo_hash", std::string{}), s.method}] = std::move(s);
    } catch (const std::exception&) {
      // A torn final line from an interrupted run is expected; the entry is recomputed.
      spdlog::warn("score cache {}: ignoring unreadable line {}", file_.string(), lineno);
    }
  }
}

std::optional<ConceptScore> ScoreCache::find(const std::string& fingerprint, const std::string& concept_digest,
                                             const std::string& theta, const DemonstrationPair& demo,
                                             ScoringMethod method) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find({fingerprint, concept_digest, theta, demo.task_id, content_hash(demo), method});
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void ScoreCache::insert(const std::string& fingerprint, const std::string& concept_digest, const ConceptScore& score,
                        const DemonstrationPair& demo) {
  if (!score.scoreable()) return;
  const std::string hash = content_hash(demo);
  std::unique_lock lock(mutex_);
  entries_[{fingerprint, concept_digest, score.task_id, demo.task_id, hash, score.method}] = score;
  if (!file_.empty()) {
    if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
    std::ofstream out(file_, std::ios::app);
    out << score_to_jsonl(score, fingerprint, concept_digest, hash) << '\n';
    if (!out) throw RuntimeError("cannot append to score cache " + file_.string());
  }
}

std::size_t ScoreCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

namespace {

// Runs fn(cell) for cell in [0, total) on up to `parallelism` threads and
// rethrows the first failure.
template <typename Fn>
void parallel_cells(std::size_t total, std::size_t parallelism, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t cell = next.fetch_add(1);
      if (cell >= total) return;
      try {
        fn(cell);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(total);
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t i = 1; i < std::min(parallelism, total); ++i) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
  if (failure) std::rethrow_exception(failure);
}

ConceptScore sentinel(const std::string& theta, const std::string& demo, ScoringMethod method) {
  ConceptScore s;
  s.task_id = theta;
  s.demo_task_id = demo;
  s.status = ScoreStatus::overflow;
  s.method = method;
  return s;
}

constexpr std::string_view kBaseDigest = "base";

}  // namespace

std::vector<std::vector<ConceptScore>> score_pool(const ModelBackend& backend,
                                                  const std::vector<ConceptTokenSet>& thetas,
                                                  const std::vector<DemonstrationPair>& pool, ScoreCache* cache,
                                                  std::size_t parallelism, ScoringMethod method) {
  if (thetas.empty()) throw ConfigError("score_pool: no concepts to score with");
  if (pool.empty()) throw ConfigError("score_pool: empty pool");
  if (parallelism < 1) throw ConfigError("score_pool: parallelism must be >= 1");
  const std::string fingerprint = backend.fingerprint();
  std::vector<std::string> digests;
  for (const auto& t : thetas) digests.push_back(concept_digest(backend, t));

  // Row thetas.size() holds the no-concept hypothesis under bayes.
  const std::size_t rows = thetas.size() + (method == ScoringMethod::bayes ? 1 : 0);
  std::vector<std::vector<ConceptScore>> cells(rows, std::vector<ConceptScore>(pool.size()));
  parallel_cells(rows * pool.size(), parallelism, [&](std::size_t cell) {
    const std::size_t t = cell / pool.size();
    const std::size_t d = cell % pool.size();
    const bool none = t == thetas.size();
    const std::string owner = none ? std::string(kNoConcept) : thetas[t].task_id;
    const std::string digest = none ? std::string(kBaseDigest) : digests[t];
    if (cache != nullptr) {
      if (auto hit = cache->find(fingerprint, digest, owner, pool[d], method)) {
        cells[t][d] = std::move(*hit);
        return;
      }
    }
    try {
      if (method == ScoringMethod::appended) {
        cells[t][d] = score_demonstration(backend, thetas[t], pool[d]);
      } else {
        ConceptScore s;
        s.task_id = owner;
        s.demo_task_id = pool[d].task_id;
        s.method = method;
        s.log_likelihood = none ? base_log_likelihood(backend, pool[d])
                                : concept_log_likelihood(backend, thetas[t], pool[d]);
        cells[t][d] = std::move(s);
      }
    } catch (const OverflowError& e) {
      spdlog::warn("scoring: {} is unscoreable under {}: {}", pool[d].task_id, none ? "no concept" : owner, e.what());
      cells[t][d] = sentinel(owner, pool[d].task_id, method);
      return;
    }
    if (cache != nullptr) cache->insert(fingerprint, digest, cells[t][d], pool[d]);
  });
  if (method == ScoringMethod::appended) return cells;

  std::vector<std::vector<ConceptScore>> out(thetas.size(), std::vector<ConceptScore>(pool.size()));
  for (std::size_t d = 0; d < pool.size(); ++d) {
    bool ok = true;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < rows; ++t) {
      ok = ok && cells[t][d].scoreable();
      if (ok) peak = std::max(peak, cells[t][d].log_likelihood);
    }
    double evidence = 0.0;
    if (ok) {
      double sum = 0.0;
      for (std::size_t t = 0; t < rows; ++t) sum += std::exp(cells[t][d].log_likelihood - peak);
      evidence = peak + std::log(sum);
    }
    for (std::size_t t = 0; t < thetas.size(); ++t) {
      if (!ok) {
        out[t][d] = sentinel(thetas[t].task_id, pool[d].task_id, method);
        continue;
      }
      out[t][d] = std::move(cells[t][d]);
      out[t][d].log_posterior = out[t][d].log_likelihood - evidence;
    }
  }
  return out;
}

std::optional<std::pair<std::string, double>> best_concept_score(const std::vector<ConceptScore>& scores) {
  std::optional<std::pair<std::string, double>> best;
  for (const auto& s : scores) {
    if (!s.scoreable()) continue;
    if (!best || s.log_posterior > best->second ||
        (s.log_posterior == best->second && s.task_id < best->first)) {
      best = std::make_pair(s.task_id, s.log_posterior);
    }
  }
  return best;
}

}  // namespace latentdemo
