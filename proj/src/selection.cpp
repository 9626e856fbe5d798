#include "latentdemo/selection.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/evaluation.hpp"

namespace latentdemo {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::latent: return "latent";
    case Strategy::semantic: return "semantic";
    case Strategy::random: return "random";
  }
  return "latent";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "latent") return Strategy::latent;
  if (name == "semantic") return Strategy::semantic;
  if (name == "random") return Strategy::random;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

namespace {

void require_k(std::size_t k) {
  if (k < 1) throw ConfigError("selection: k must be >= 1");
}

[[noreturn]] void empty_pool(const DemonstrationPair& query, Strategy s) {
  throw RuntimeError(std::string("selection (") + std::string(to_string(s)) + "): no eligible demonstrations for query " +
                     query.task_id);
}

// Ranks eligible (index, score) entries by score descending, ties by index.
SelectionResult take_top(std::vector<std::pair<std::size_t, double>> ranked, const std::vector<std::string>& ids,
                         SelectionResult result) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t take = std::min(result.k, ranked.size());
  for (std::size_t i = 0; i < take; ++i) result.selected.push_back({ids[ranked[i].first], ranked[i].second});
  return result;
}

void log_text_duplicates(const std::vector<DemonstrationPair>& pool, const DemonstrationPair& query) {
  for (const auto& d : pool) {
    if (d.task_id != query.task_id && d.prompt_text == query.prompt_text && d.golden_code == query.golden_code) {
      spdlog::info("demo {} duplicates the text of query {} under a different id; kept eligible", d.task_id,
                   query.task_id);
    }
  }
}

}  // namespace

SelectionResult select_latent(const std::vector<LatentCandidate>& candidates, const DemonstrationPair& query,
                              std::size_t k) {
  require_k(k);
  SelectionResult result{query.task_id, Strategy::latent, k, {}, {}};
  std::vector<std::pair<std::size_t, double>> ranked;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ids.push_back(candidates[i].demo_task_id);
    if (candidates[i].demo_task_id == query.task_id) {
      result.excluded.push_back({candidates[i].demo_task_id, "query"});
    } else if (!candidates[i].score) {
      result.excluded.push_back({candidates[i].demo_task_id, "unscoreable"});
    } else {
      ranked.emplace_back(i, *candidates[i].score);
    }
  }
  if (ranked.empty()) empty_pool(query, Strategy::latent);
  return take_top(std::move(ranked), ids, std::move(result));
}

SelectionResult select_semantic(const std::vector<DemonstrationPair>& pool, const DemonstrationPair& query,
                                std::size_t k) {
  require_k(k);
  SelectionResult result{query.task_id, Strategy::semantic, k, {}, {}};
  std::vector<std::pair<std::size_t, double>> ranked;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    ids.push_back(pool[i].task_id);
    if (pool[i].task_id == query.task_id) {
      result.excluded.push_back({pool[i].task_id, "query"});
      continue;
    }
    ranked.emplace_back(i, normalized_edit_similarity(query.prompt_text, pool[i].prompt_text));
  }
  if (ranked.empty()) empty_pool(query, Strategy::semantic);
  log_text_duplicates(pool, query);
  return take_top(std::move(ranked), ids, std::move(result));
}

namespace {

// Unbiased draw in [0, n) by rejection; platform independent.
std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = 0;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

}  // namespace

SelectionResult select_random(const std::vector<DemonstrationPair>& pool, const DemonstrationPair& query,
                              std::size_t k, std::uint64_t seed) {
  require_k(k);
  SelectionResult result{query.task_id, Strategy::random, k, {}, {}};
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].task_id == query.task_id) {
      result.excluded.push_back({pool[i].task_id, "query"});
    } else {
      eligible.push_back(i);
    }
  }
  if (eligible.empty()) empty_pool(query, Strategy::random);
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(k, eligible.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(eligible[i], eligible[i + bounded(rng, eligible.size() - i)]);
    result.selected.push_back({pool[eligible[i]].task_id, std::nullopt});
  }
  return result;
}

std::string selection_to_json(const SelectionResult& result) {
  nlohmann::ordered_json j;
  j["query"] = result.query_task_id;
  j["strategy"] = to_string(result.strategy);
  j["k"] = result.k;
  j["selected"] = nlohmann::ordered_json::array();
  for (const auto& s : result.selected) {
    nlohmann::ordered_json e;
    e["demo"] = s.demo_task_id;
    e["score"] = s.score ? nlohmann::ordered_json(*s.score) : nlohmann::ordered_json(nullptr);
    j["selected"].push_back(e);
  }
  j["excluded"] = nlohmann::ordered_json::array();
  for (const auto& x : result.excluded) {
    nlohmann::ordered_json e;
    e["demo"] = x.demo_task_id;
    e["reason"] = x.reason;
    j["excluded"].push_back(e);
  }
  return j.dump(2);
}

SelectionResult selection_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SelectionResult r;
    r.query_task_id = j.at("query").get<std::string>();
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    r.k = j.at("k").get<std::size_t>();
    for (const auto& e : j.at("selected")) {
      SelectedDemo s{e.at("demo").get<std::string>(), std::nullopt};
      if (!e.at("score").is_null()) s.score = e["score"].get<double>();
      r.selected.push_back(std::move(s));
    }
    for (const auto& e : j.value("excluded", nlohmann::json::array())) {
      r.excluded.push_back({e.at("demo").get<std::string>(), e.at("reason").get<std::string>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("selection file: ") + e.what());
  }
}

}  // namespace latentdemo
