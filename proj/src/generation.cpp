#include "latentdemo/generation.hpp"

#include <fmt/format.h>

#include "latentdemo/common.hpp"

namespace latentdemo {

std::string render_problem_part(const DemonstrationPair& pair) {
  std::string out(kProblemHeader);
  out += pair.prompt_text;
  out += kSolutionHeader;
  return out;
}

std::string render_solution_part(const DemonstrationPair& pair) {
  return pair.golden_code + std::string(kBlockSeparator);
}

std::string render_demo_block(const DemonstrationPair& pair) {
  return render_problem_part(pair) + render_solution_part(pair);
}

PromptAssembly assemble_few_shot_prompt(const ModelBackend& backend, const SelectionResult& selection,
                                        const DemonstrationPair& query, const PoolLookup& pool,
                                        std::size_t max_new_tokens) {
  PromptAssembly out;
  out.query_task_id = query.task_id;
  for (auto it = selection.selected.rbegin(); it != selection.selected.rend(); ++it) {
    const auto& s = *it;
    const DemonstrationPair* demo = pool ? pool(s.demo_task_id) : nullptr;
    if (demo == nullptr) {
      throw ConfigError(fmt::format("prompt for {}: demonstration '{}' is not in the pool", query.task_id,
                                    s.demo_task_id));
    }
    out.rendered_text += render_demo_block(*demo);
    out.demo_ids.push_back(s.demo_task_id);
  }
  out.rendered_text += render_problem_part(query);

  const std::size_t budget = backend.context_budget();
  if (max_new_tokens >= budget) {
    throw OverflowError(fmt::format("prompt for {}: max_new_tokens {} leaves no room in a budget of {}", query.task_id,
                                    max_new_tokens, budget));
  }
  out.token_count = backend.tokenize(out.rendered_text).size();
  if (out.token_count > budget - max_new_tokens) {
    throw OverflowError(fmt::format("prompt for {} has {} tokens; budget {} minus {} new tokens", query.task_id,
                                    out.token_count, budget, max_new_tokens));
  }
  return out;
}

PromptAssembly assemble_within_budget(const ModelBackend& backend, SelectionResult selection,
                                      const DemonstrationPair& query, const PoolLookup& pool,
                                      std::size_t max_new_tokens, std::vector<std::string>* dropped) {
  for (;;) {
    try {
      return assemble_few_shot_prompt(backend, selection, query, pool, max_new_tokens);
    } catch (const OverflowError&) {
      if (selection.selected.empty()) throw;
      if (dropped != nullptr) dropped->push_back(selection.selected.back().demo_task_id);
      selection.selected.pop_back();
    }
  }
}

std::vector<std::string> default_stop_markers() { return {std::string(kProblemMarker)}; }

std::vector<GenerationSample> generate_samples(const ModelBackend& backend, const PromptAssembly& prompt,
                                               std::size_t n, const SamplingConfig& cfg, std::uint64_t base_seed) {
  if (n < 1) throw ConfigError("generate_samples: n must be >= 1");
  cfg.validate();
  SamplingConfig run_cfg = cfg;
  if (run_cfg.stop_sequences.empty()) run_cfg.stop_sequences = default_stop_markers();
  const TokenSequence prefix = backend.tokenize(prompt.rendered_text);

  std::vector<GenerationSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GenerationSample s;
    s.query_task_id = prompt.query_task_id;
    s.sample_index = i;
    s.sampling_seed = base_seed + i;
    s.raw_text = backend.sample_continuation(prefix, run_cfg, s.sampling_seed).text;
    s.extracted_code = extract_code(s.raw_text, run_cfg.stop_sequences);
    out.push_back(std::move(s));
  }
  return out;
}

std::string extract_code(std::string_view raw_text, const std::vector<std::string>& stop_markers) {
  std::size_t cut = raw_text.size();
  for (const auto& m : stop_markers) {
    if (m.empty()) continue;
    cut = std::min(cut, raw_text.find(m));
  }
  std::string_view head = raw_text.substr(0, cut);
  while (!head.empty() && (head.back() == ' ' || head.back() == '\t' || head.back() == '\n' || head.back() == '\r' ||
                           head.back() == '\f' || head.back() == '\v')) {
    head.remove_suffix(1);
  }
  return std::string(head);
}

}  // namespace latentdemo
