#include "latentdemo/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "latentdemo/common.hpp"

namespace latentdemo {

std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i + 1;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const std::size_t up = row[j + 1];
      row[j + 1] = std::min({up + 1, row[j] + 1, diag + (a[i] == b[j] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double normalized_edit_similarity(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double pass_at_k(std::uint64_t n, std::uint64_t c, std::uint64_t k) {
  if (c > n) throw ConfigError("pass@k: c exceeds n");
  if (k < 1 || k > n) throw ConfigError(fmt::format("pass@k: k={} outside [1, n={}]", k, n));
  if (n - c < k) return 1.0;
  double prod = 1.0;
  for (std::uint64_t i = n - c + 1; i <= n; ++i) prod *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - prod;
}

double correctness_at_k(std::span<const Verdict> verdicts, std::size_t k) {
  if (k < 1) throw ConfigError("correctness@k: k must be >= 1");
  if (verdicts.size() < k) {
    throw ConfigError(fmt::format("correctness@k: {} outcomes available, k={}", verdicts.size(), k));
  }
  const auto passes = std::count(verdicts.begin(), verdicts.begin() + static_cast<std::ptrdiff_t>(k), Verdict::pass);
  return static_cast<double>(passes) / static_cast<double>(k);
}

std::size_t ProblemResult::c() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.verdict == Verdict::pass; }));
}

std::vector<std::string> ProblemResult::working_codes(std::size_t k) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, samples.size()); ++i) {
    if (samples[i].verdict == Verdict::pass) out.push_back(samples[i].code);
  }
  return out;
}

std::vector<Verdict> ProblemResult::verdicts() const {
  std::vector<Verdict> out;
  for (const auto& s : samples) out.push_back(s.verdict);
  return out;
}

double similarity_at_k(const ProblemResult& result, std::size_t k, std::size_t* empty_count) {
  if (k < 1) throw ConfigError("similarity@k: k must be >= 1");
  if (result.n() < k) throw ConfigError(fmt::format("similarity@k: {} samples available, k={}", result.n(), k));
  const auto working = result.working_codes(k);
  if (working.empty()) {
    if (empty_count != nullptr) ++*empty_count;
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& code : working) sum += normalized_edit_similarity(code, result.golden_code);
  return sum / static_cast<double>(working.size());
}

std::string MetricRequest::name() const {
  switch (metric) {
    case Metric::pass: return fmt::format("pass@{}", k);
    case Metric::correctness: return fmt::format("correctness@{}", k);
    case Metric::similarity: return fmt::format("similarity@{}", k);
  }
  return {};
}

MetricRequest parse_metric_request(std::string_view name) {
  const auto at = name.find('@');
  if (at == std::string_view::npos) throw ConfigError("metric '" + std::string(name) + "' lacks '@k'");
  MetricRequest r;
  const auto head = name.substr(0, at);
  if (head == "pass") {
    r.metric = Metric::pass;
  } else if (head == "correctness") {
    r.metric = Metric::correctness;
  } else if (head == "similarity") {
    r.metric = Metric::similarity;
  } else {
    throw ConfigError("unknown metric '" + std::string(head) + "'");
  }
  try {
    std::size_t used = 0;
    const std::string tail(name.substr(at + 1));
    const long long k = std::stoll(tail, &used);
    if (used != tail.size() || k < 1) throw std::invalid_argument("k");
    r.k = static_cast<std::size_t>(k);
  } catch (const std::exception&) {
    throw ConfigError("metric '" + std::string(name) + "' has an invalid k");
  }
  return r;
}

std::vector<MetricRequest> reference_metric_requests() {
  return {{Metric::correctness, 5}, {Metric::correctness, 20}, {Metric::correctness, 100},
          {Metric::similarity, 5},  {Metric::similarity, 20},  {Metric::similarity, 100},
          {Metric::pass, 1},        {Metric::pass, 10},        {Metric::pass, 100}};
}

double MetricReport::value(std::string_view metric) const {
  for (const auto& [name, v] : metrics) {
    if (name == metric) return v;
  }
  throw RuntimeError("report has no metric '" + std::string(metric) + "'");
}

MetricReport aggregate_report(std::string dataset, std::string strategy, std::vector<ProblemResult> results,
                              const std::vector<MetricRequest>& requests) {
  std::sort(results.begin(), results.end(),
            [](const ProblemResult& a, const ProblemResult& b) { return a.query_task_id < b.query_task_id; });
  for (const auto& r : results) {
    for (const auto& req : requests) {
      if (r.n() < req.k) {
        throw ConfigError(fmt::format("problem {} has n={} samples, fewer than k={} for {}", r.query_task_id, r.n(),
                                      req.k, req.name()));
      }
    }
  }
  MetricReport report;
  report.dataset = std::move(dataset);
  report.strategy = std::move(strategy);
  report.problems = results.size();
  for (const auto& r : results) report.empty_s += r.c() == 0 ? 1 : 0;

  for (const auto& req : requests) {
    double sum = 0.0;
    std::size_t empty = 0;
    for (const auto& r : results) {
      switch (req.metric) {
        case Metric::pass: sum += pass_at_k(r.n(), r.c(), req.k); break;
        case Metric::correctness: sum += correctness_at_k(r.verdicts(), req.k); break;
        case Metric::similarity: sum += similarity_at_k(r, req.k, &empty); break;
      }
    }
    const double mean = results.empty() ? 0.0 : sum / static_cast<double>(results.size());
    report.metrics.emplace_back(req.name(), mean);
    if (req.metric == Metric::similarity) report.empty_s_by_metric[req.name()] = empty;
  }
  return report;
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["dataset"] = report.dataset;
  j["strategy"] = report.strategy;
  j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [name, v] : report.metrics) j["metrics"][name] = v;
  j["problems"] = report.problems;
  j["empty_S"] = report.empty_s;
  j["empty_S_by_metric"] = report.empty_s_by_metric;
  j["config_digest"] = report.config_digest;
  return j.dump(2);
}

MetricReport report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    MetricReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    for (const auto& [name, v] : j.at("metrics").items()) r.metrics.emplace_back(name, v.get<double>());
    r.problems = j.at("problems").get<std::size_t>();
    r.empty_s = j.at("empty_S").get<std::size_t>();
    if (j.contains("empty_S_by_metric")) {
      for (const auto& [name, v] : j["empty_S_by_metric"].items()) r.empty_s_by_metric[name] = v.get<std::size_t>();
    }
    r.config_digest = j.value("config_digest", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report file: ") + e.what());
  }
}

std::string render_table(const std::string& title, const std::vector<MetricReport>& columns) {
  std::vector<std::string> rows;
  for (const auto& col : columns) {
    for (const auto& [name, v] : col.metrics) {
      if (std::find(rows.begin(), rows.end(), name) == rows.end()) rows.push_back(name);
    }
  }
  std::size_t w0 = std::string_view("Parameter").size();
  for (const auto& r : rows) w0 = std::max(w0, r.size());
  std::size_t wc = 10;
  for (const auto& c : columns) wc = std::max(wc, c.strategy.size());

  std::string out = title + "\n";
  std::string rule = "+" + std::string(w0 + 2, '-');
  for (std::size_t i = 0; i < columns.size(); ++i) rule += "+" + std::string(wc + 2, '-');
  rule += "+\n";
  out += rule;
  out += fmt::format("| {:<{}} ", "Parameter", w0);
  for (const auto& c : columns) out += fmt::format("| {:>{}} ", c.strategy, wc);
  out += "|\n" + rule;
  for (const auto& r : rows) {
    out += fmt::format("| {:<{}} ", r, w0);
    for (const auto& c : columns) {
      std::string cell = "-";
      for (const auto& [name, v] : c.metrics) {
        if (name == r) cell = fmt::format("{:.2f}%", 100.0 * v);
      }
      out += fmt::format("| {:>{}} ", cell, wc);
    }
    out += "|\n";
  }
  out += rule;
  return out;
}

}  // namespace latentdemo
