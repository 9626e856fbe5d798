#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace latentdemo {

enum class Verdict : std::uint8_t { pass, fail, timeout, error };

std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view name);

struct SandboxPolicy {
  double timeout_s = 10.0;
  std::uint64_t memory_cap = 512ull << 20;
  bool allow_network = false;
  std::filesystem::path scratch_root;  // empty: system temp directory
  std::string interpreter = "python3";

  void validate() const;
};

struct ExecutionOutcome {
  std::string query_task_id;
  std::size_t sample_index = 0;
  Verdict verdict = Verdict::error;
  std::string detail;  // at most kMaxDetailBytes
  double duration_s = 0.0;
};

inline constexpr std::size_t kMaxDetailBytes = 4096;

/// Runs `code` followed by each test snippet in a fresh child process.
///
/// PASS: every snippet ran without raising. FAIL: a snippet raised, or the
/// process died. ERROR: the candidate did not compile or raised while being
/// loaded, before any test ran. TIMEOUT: wall time exceeded the policy.
/// Throws SandboxInfraError when the child cannot be set up or spawned.
ExecutionOutcome run_candidate(std::string_view code, const std::vector<std::string>& tests,
                               const SandboxPolicy& policy, std::string_view language = "python");

struct CandidateJob {
  std::string query_task_id;
  std::size_t sample_index = 0;
  std::string code;
  std::vector<std::string> tests;
  std::string language = "python";
};

/// Outcomes are aligned with `jobs` whatever the parallelism.
std::vector<ExecutionOutcome> run_batch(const std::vector<CandidateJob>& jobs, const SandboxPolicy& policy,
                                        std::size_t parallelism);

std::string outcome_to_jsonl(const ExecutionOutcome& outcome);
ExecutionOutcome outcome_from_jsonl(std::string_view line);

}  // namespace latentdemo
