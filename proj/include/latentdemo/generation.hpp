#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latentdemo/backend.hpp"
#include "latentdemo/corpus.hpp"
#include "latentdemo/selection.hpp"

namespace latentdemo {

// Few-shot prompt template. A demonstration renders as
//   "### Problem:\n{prompt}\n### Solution:\n{code}\n\n"
// and the query as the same block cut right after "### Solution:\n".
inline constexpr std::string_view kTemplateVersion = "fewshot-v1";
inline constexpr std::string_view kProblemHeader = "### Problem:\n";
inline constexpr std::string_view kSolutionHeader = "\n### Solution:\n";
inline constexpr std::string_view kBlockSeparator = "\n\n";
inline constexpr std::string_view kProblemMarker = "### Problem:";

/// "### Problem:\n{prompt}\n### Solution:\n" (the X part of a block).
std::string render_problem_part(const DemonstrationPair& pair);
/// "{code}\n\n" (the Y part of a block).
std::string render_solution_part(const DemonstrationPair& pair);
std::string render_demo_block(const DemonstrationPair& pair);

struct PromptAssembly {
  std::string rendered_text;
  std::vector<std::string> demo_ids;  // in rendered order
  std::string query_task_id;
  std::size_t token_count = 0;
};

using PoolLookup = std::function<const DemonstrationPair*(std::string_view task_id)>;

/// Renders the selected demonstrations lowest-ranked first, so the best one
/// sits next to the query block. Throws ConfigError for ids missing from the pool
/// and OverflowError when the prompt leaves fewer than `max_new_tokens`.
PromptAssembly assemble_few_shot_prompt(const ModelBackend& backend, const SelectionResult& selection,
                                        const DemonstrationPair& query, const PoolLookup& pool,
                                        std::size_t max_new_tokens);

/// Retries assembly, dropping the lowest-ranked demonstration on each
/// overflow. `dropped` receives the removed ids.
PromptAssembly assemble_within_budget(const ModelBackend& backend, SelectionResult selection,
                                      const DemonstrationPair& query, const PoolLookup& pool,
                                      std::size_t max_new_tokens, std::vector<std::string>* dropped = nullptr);

struct GenerationSample {
  std::string query_task_id;
  std::size_t sample_index = 0;
  std::string raw_text;
  std::string extracted_code;
  std::uint64_t sampling_seed = 0;
};

/// Default stop markers; the end-of-text token is handled by the backend.
std::vector<std::string> default_stop_markers();

/// Sample i uses seed base_seed + i.
std::vector<GenerationSample> generate_samples(const ModelBackend& backend, const PromptAssembly& prompt,
                                               std::size_t n, const SamplingConfig& cfg, std::uint64_t base_seed);

/// Text before the earliest stop marker, with trailing whitespace removed.
std::string extract_code(std::string_view raw_text, const std::vector<std::string>& stop_markers);

}  // namespace latentdemo
