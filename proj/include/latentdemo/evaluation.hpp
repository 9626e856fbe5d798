#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdemo/sandbox.hpp"

namespace latentdemo {

/// Character-level Levenshtein distance (unit costs).
std::size_t levenshtein(std::string_view a, std::string_view b);

/// 1 - levenshtein(a, b) / max(|a|, |b|); 1 when both are empty.
double normalized_edit_similarity(std::string_view a, std::string_view b);

/// Unbiased pass@k estimate 1 - C(n-c, k) / C(n, k), evaluated as the
/// product 1 - prod_{i=n-c+1}^{n} (1 - k / i). Requires 0 <= c <= n and
/// 1 <= k <= n.
double pass_at_k(std::uint64_t n, std::uint64_t c, std::uint64_t k);

/// PASS fraction among the first k verdicts (in sample-index order).
double correctness_at_k(std::span<const Verdict> verdicts, std::size_t k);

/// Per-problem evaluation record. `samples` is ordered by sample index.
struct ProblemResult {
  struct Sample {
    Verdict verdict = Verdict::fail;
    std::string code;
  };
  std::string query_task_id;
  std::vector<Sample> samples;
  std::string golden_code;

  std::size_t n() const noexcept { return samples.size(); }
  std::size_t c() const noexcept;
  /// Extracted code of PASS samples among the first `k` (the working set).
  std::vector<std::string> working_codes(std::size_t k) const;
  std::vector<Verdict> verdicts() const;
};

/// Mean similarity of working codes among the first k samples to the golden
/// solution; 0 when there are none (and `empty_count` is incremented).
double similarity_at_k(const ProblemResult& result, std::size_t k, std::size_t* empty_count = nullptr);

enum class Metric { pass, correctness, similarity };

struct MetricRequest {
  Metric metric = Metric::pass;
  std::size_t k = 1;

  std::string name() const;  // e.g. "pass@10"
  bool operator==(const MetricRequest&) const = default;
};

MetricRequest parse_metric_request(std::string_view name);

/// Row order of the rendered table: correctness, similarity, pass at
/// k in {5,20,100}, {5,20,100}, {1,10,100}.
std::vector<MetricRequest> reference_metric_requests();

struct MetricReport {
  std::string dataset;
  std::string strategy;
  std::vector<std::pair<std::string, double>> metrics;  // request order
  std::size_t problems = 0;
  std::size_t empty_s = 0;  // problems with no working sample at all
  std::map<std::string, std::size_t> empty_s_by_metric;
  std::string config_digest;

  double value(std::string_view metric) const;
};

/// Unweighted mean over problems in task_id order. Throws ConfigError when
/// a problem has fewer samples than a requested k.
MetricReport aggregate_report(std::string dataset, std::string strategy, std::vector<ProblemResult> results,
                              const std::vector<MetricRequest>& requests);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view text);

/// Text table with one column per report (in the given order); values are
/// shown as percentages.
std::string render_table(const std::string& title, const std::vector<MetricReport>& columns);

}  // namespace latentdemo
