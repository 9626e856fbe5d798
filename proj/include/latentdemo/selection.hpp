#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latentdemo/corpus.hpp"

namespace latentdemo {

enum class Strategy { latent, semantic, random };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct SelectedDemo {
  std::string demo_task_id;
  std::optional<double> score;

  bool operator==(const SelectedDemo&) const = default;
};

struct ExcludedDemo {
  std::string demo_task_id;
  std::string reason;

  bool operator==(const ExcludedDemo&) const = default;
};

/// Top-k demonstrations for one query, best first (draw order for random).
struct SelectionResult {
  std::string query_task_id;
  Strategy strategy = Strategy::latent;
  std::size_t k = 0;
  std::vector<SelectedDemo> selected;
  std::vector<ExcludedDemo> excluded;

  bool operator==(const SelectionResult&) const = default;
};

/// One pool entry with its best concept score; nullopt marks a demo every
/// concept failed to score.
struct LatentCandidate {
  std::string demo_task_id;
  std::optional<double> score;
};

/// Sorts by score descending (ties: pool order), excluding the query and
/// unscoreable entries. Throws RuntimeError when nothing is eligible.
SelectionResult select_latent(const std::vector<LatentCandidate>& candidates, const DemonstrationPair& query,
                              std::size_t k);

/// Ranks by normalized edit similarity of prompt texts.
SelectionResult select_semantic(const std::vector<DemonstrationPair>& pool, const DemonstrationPair& query,
                                std::size_t k);

/// Uniform sample without replacement; order is draw order.
SelectionResult select_random(const std::vector<DemonstrationPair>& pool, const DemonstrationPair& query,
                              std::size_t k, std::uint64_t seed);

std::string selection_to_json(const SelectionResult& result);
SelectionResult selection_from_json(std::string_view text);

}  // namespace latentdemo
