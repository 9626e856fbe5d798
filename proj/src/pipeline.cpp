#include "latentdemo/pipeline.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/generation.hpp"
#include "latentdemo/stub_backend.hpp"

#ifndef LATENTDEMO_VERSION
#define LATENTDEMO_VERSION "0.0.0"
#endif

namespace latentdemo {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(fmt::format("config: '{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("config: unknown key '{}' in '{}'", key, where));
    }
  }
}

template <typename T>
void read(const json& j, std::string_view key, T& out, std::string_view where) {
  const auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config: '{}.{}' has the wrong type", where, key));
  }
}

template <typename T>
void read_count(const json& j, std::string_view key, T& out, std::string_view where) {
  const auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(fmt::format("config: '{}.{}' must be a non-negative integer", where, key));
  }
  out = it->get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string utc_stamp(const char* format) {
  return fmt::format(fmt::runtime(format), fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

std::string now_iso() { return utc_stamp("{:%Y-%m-%dT%H:%M:%SZ}"); }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, std::string_view text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
      throw RuntimeError("cannot write " + tmp.string());
    }
  }
  fs::rename(tmp, p);
}

void append_lines(const fs::path& p, const std::vector<std::string>& lines) {
  if (lines.empty()) return;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::app | std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
  out.flush();
  if (!out) throw RuntimeError("cannot append to " + p.string());
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      spdlog::warn("{}: ignoring unreadable line {}", p.string(), lineno);
    }
  }
  return out;
}

// File-name-safe form of an id; a digest suffix keeps distinct ids distinct.
std::string safe_name(const std::string& id) {
  std::string out;
  bool changed = false;
  for (char ch : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out.push_back(ok ? ch : '_');
    changed = changed || !ok;
  }
  if (out.empty() || out[0] == '.') changed = true;
  if (changed) out += "-" + sha256_hex(id).substr(0, 8);
  return out;
}

std::string_view to_string(ConceptMode m) { return m == ConceptMode::per_task ? "per_task" : "multi_task"; }

ConceptMode parse_concept_mode(std::string_view s) {
  if (s == "per_task") return ConceptMode::per_task;
  if (s == "multi_task") return ConceptMode::multi_task;
  throw ConfigError("config: unknown concept mode '" + std::string(s) + "'");
}

std::string_view to_string(InitRule r) { return r == InitRule::zeros ? "zeros" : "copy_vocab_row"; }

InitRule parse_init(std::string_view s) {
  if (s == "zeros") return InitRule::zeros;
  if (s == "copy_vocab_row") return InitRule::copy_vocab_row;
  throw ConfigError("config: unknown concept init '" + std::string(s) + "'");
}

constexpr Strategy kColumnOrder[] = {Strategy::semantic, Strategy::latent, Strategy::random};

}  // namespace

void ExperimentConfig::validate() const {
  if (datasets.empty() && !synthetic) throw ConfigError("config: no datasets and no synthetic corpus");
  for (const auto& d : datasets) {
    if (!fs::exists(d.path)) throw ConfigError("config: dataset file not found: " + d.path.string());
  }
  if (query_ids.empty() == !queries_per_task.has_value()) {
    throw ConfigError("config: set exactly one of queries.ids and queries.per_task");
  }
  if (queries_per_task && *queries_per_task < 1) throw ConfigError("config: queries.per_task must be >= 1");
  if (backend == "tiny") {
    tiny.validate();
  } else if (backend == "stub") {
    if (stub_table.empty() || !fs::exists(stub_table)) {
      throw ConfigError("config: stub backend table not found: " + stub_table.string());
    }
  } else {
    throw ConfigError("config: unknown backend '" + backend + "'");
  }
  training.validate();
  for (const auto& p : concept_checkpoints) {
    if (!fs::exists(p)) throw ConfigError("config: checkpoint not found: " + p.string());
  }
  if (scoring_parallelism < 1) throw ConfigError("config: concepts.parallelism must be >= 1");
  if (strategies.empty()) throw ConfigError("config: no selection strategies");
  if (std::set<Strategy>(strategies.begin(), strategies.end()).size() != strategies.size()) {
    throw ConfigError("config: duplicate selection strategy");
  }
  if (k < 1) throw ConfigError("config: selection.k must be >= 1");
  sampling.validate();
  if (n < 1) throw ConfigError("config: sampling.n must be >= 1");
  sandbox.validate();
  if (sandbox_parallelism < 1) throw ConfigError("config: sandbox.parallelism must be >= 1");
  if (metrics.empty()) throw ConfigError("config: no metrics requested");
  for (const auto& m : metrics) {
    if (m.k > n) throw ConfigError(fmt::format("config: {} needs n >= {}, but n = {}", m.name(), m.k, n));
  }
}

std::string ExperimentConfig::to_json() const {
  ojson j;
  j["datasets"] = ojson::array();
  for (const auto& d : datasets) {
    j["datasets"].push_back({{"path", d.path.string()}, {"format", to_string(d.format)}, {"name", d.name}});
  }
  j["synthetic"] = synthetic ? ojson{{"families", synthetic->families}, {"per_family", synthetic->per_family}}
                             : ojson(nullptr);
  j["queries"] = queries_per_task ? ojson{{"per_task", *queries_per_task}} : ojson{{"ids", query_ids}};
  ojson b{{"name", backend}};
  if (backend == "tiny") {
    b["tiny"] = {{"alphabet", tiny.alphabet}, {"layers", tiny.layers},   {"d_model", tiny.d_model},
                 {"heads", tiny.heads},       {"d_ff", tiny.d_ff},       {"context", tiny.context},
                 {"seed", tiny.seed}};
  } else {
    b["stub"] = stub_table.string();
  }
  j["backend"] = b;
  std::vector<std::string> ckpts;
  for (const auto& p : concept_checkpoints) ckpts.push_back(p.string());
  j["concepts"] = {{"c", training.c},
                   {"epochs", training.epochs},
                   {"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"patience", training.early_stop_patience ? ojson(*training.early_stop_patience) : ojson(nullptr)},
                   {"init", to_string(training.init)},
                   {"mode", to_string(concept_mode)},
                   {"tasks", concept_tasks},
                   {"checkpoints", ckpts},
                   {"scoring", to_string(scoring)},
                   {"parallelism", scoring_parallelism}};
  std::vector<std::string> strat;
  for (auto s : strategies) strat.emplace_back(to_string(s));
  j["selection"] = {{"strategies", strat}, {"k", k}};
  j["sampling"] = {{"temperature", sampling.temperature},
                   {"top_p", sampling.top_p},
                   {"greedy", sampling.greedy},
                   {"max_new_tokens", sampling.max_new_tokens},
                   {"n", n},
                   {"stop", sampling.stop_sequences}};
  j["sandbox"] = {{"timeout_s", sandbox.timeout_s},
                  {"memory_mb", sandbox.memory_cap >> 20},
                  {"allow_network", sandbox.allow_network},
                  {"interpreter", sandbox.interpreter},
                  {"scratch_root", sandbox.scratch_root.string()},
                  {"parallelism", sandbox_parallelism}};
  std::vector<std::string> mets;
  for (const auto& m : metrics) mets.push_back(m.name());
  j["metrics"] = mets;
  j["seed"] = seed;
  return j.dump(2);
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_json()); }

ExperimentConfig parse_experiment_config(std::string_view json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"datasets", "synthetic", "queries", "backend", "concepts", "selection", "sampling", "sandbox",
                 "metrics", "seed"},
             "config");
  ExperimentConfig cfg;
  cfg.datasets.clear();
  if (j.contains("datasets")) {
    if (!j["datasets"].is_array()) throw ConfigError("config: 'datasets' must be an array");
    for (const auto& d : j["datasets"]) {
      check_keys(d, {"path", "format", "name"}, "datasets[]");
      DatasetSource src;
      std::string path, format = "native";
      read(d, "path", path, "datasets[]");
      if (path.empty()) throw ConfigError("config: dataset entry without a path");
      read(d, "format", format, "datasets[]");
      src.path = resolve(base_dir, path);
      src.format = parse_source_format(format);
      src.name = src.path.stem().string();
      read(d, "name", src.name, "datasets[]");
      cfg.datasets.push_back(std::move(src));
    }
  }
  if (j.contains("synthetic") && !j["synthetic"].is_null()) {
    const auto& s = j["synthetic"];
    check_keys(s, {"families", "per_family"}, "synthetic");
    SyntheticSpec spec;
    read(s, "families", spec.families, "synthetic");
    read_count(s, "per_family", spec.per_family, "synthetic");
    cfg.synthetic = spec;
  }
  if (j.contains("queries")) {
    const auto& q = j["queries"];
    check_keys(q, {"ids", "per_task"}, "queries");
    read(q, "ids", cfg.query_ids, "queries");
    if (q.contains("per_task")) {
      std::size_t n = 0;
      read_count(q, "per_task", n, "queries");
      cfg.queries_per_task = n;
    }
  }
  if (j.contains("backend")) {
    const auto& b = j["backend"];
    check_keys(b, {"name", "tiny", "stub"}, "backend");
    read(b, "name", cfg.backend, "backend");
    if (b.contains("tiny")) {
      const auto& t = b["tiny"];
      check_keys(t, {"alphabet", "layers", "d_model", "heads", "d_ff", "context", "seed"}, "backend.tiny");
      read(t, "alphabet", cfg.tiny.alphabet, "backend.tiny");
      read_count(t, "layers", cfg.tiny.layers, "backend.tiny");
      read_count(t, "d_model", cfg.tiny.d_model, "backend.tiny");
      read_count(t, "heads", cfg.tiny.heads, "backend.tiny");
      read_count(t, "d_ff", cfg.tiny.d_ff, "backend.tiny");
      read_count(t, "context", cfg.tiny.context, "backend.tiny");
      read_count(t, "seed", cfg.tiny.seed, "backend.tiny");
    }
    if (b.contains("stub")) {
      std::string p;
      read(b, "stub", p, "backend");
      cfg.stub_table = resolve(base_dir, p);
    }
  }
  if (j.contains("concepts")) {
    const auto& c = j["concepts"];
    check_keys(c, {"c", "epochs", "learning_rate", "batch_size", "patience", "init", "mode", "tasks", "checkpoints",
                   "scoring", "parallelism"},
               "concepts");
    read_count(c, "c", cfg.training.c, "concepts");
    read_count(c, "epochs", cfg.training.epochs, "concepts");
    read(c, "learning_rate", cfg.training.learning_rate, "concepts");
    read_count(c, "batch_size", cfg.training.batch_size, "concepts");
    if (c.contains("patience") && !c["patience"].is_null()) {
      std::size_t p = 0;
      read_count(c, "patience", p, "concepts");
      cfg.training.early_stop_patience = p;
    }
    std::string s;
    if (read(c, "init", s, "concepts"), !s.empty()) cfg.training.init = parse_init(s);
    s.clear();
    if (read(c, "mode", s, "concepts"), !s.empty()) cfg.concept_mode = parse_concept_mode(s);
    s.clear();
    if (read(c, "scoring", s, "concepts"), !s.empty()) cfg.scoring = parse_scoring_method(s);
    read(c, "tasks", cfg.concept_tasks, "concepts");
    std::vector<std::string> ckpts;
    read(c, "checkpoints", ckpts, "concepts");
    for (const auto& p : ckpts) cfg.concept_checkpoints.push_back(resolve(base_dir, p));
    read_count(c, "parallelism", cfg.scoring_parallelism, "concepts");
  }
  if (j.contains("selection")) {
    const auto& s = j["selection"];
    check_keys(s, {"strategies", "k"}, "selection");
    if (s.contains("strategies")) {
      if (s["strategies"].is_string() && s["strategies"].get<std::string>() == "all") {
        cfg.strategies.assign(std::begin(kColumnOrder), std::end(kColumnOrder));
      } else {
        std::vector<std::string> names;
        read(s, "strategies", names, "selection");
        cfg.strategies.clear();
        for (const auto& n : names) cfg.strategies.push_back(parse_strategy(n));
      }
    }
    read_count(s, "k", cfg.k, "selection");
  }
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    check_keys(s, {"temperature", "top_p", "greedy", "max_new_tokens", "n", "stop"}, "sampling");
    read(s, "temperature", cfg.sampling.temperature, "sampling");
    read(s, "top_p", cfg.sampling.top_p, "sampling");
    read(s, "greedy", cfg.sampling.greedy, "sampling");
    read_count(s, "max_new_tokens", cfg.sampling.max_new_tokens, "sampling");
    read_count(s, "n", cfg.n, "sampling");
    read(s, "stop", cfg.sampling.stop_sequences, "sampling");
  }
  if (cfg.sampling.stop_sequences.empty()) cfg.sampling.stop_sequences = default_stop_markers();
  if (j.contains("sandbox")) {
    const auto& s = j["sandbox"];
    check_keys(s, {"timeout_s", "memory_mb", "allow_network", "interpreter", "scratch_root", "parallelism"}, "sandbox");
    read(s, "timeout_s", cfg.sandbox.timeout_s, "sandbox");
    if (s.contains("memory_mb")) {
      std::uint64_t mb = 0;
      read_count(s, "memory_mb", mb, "sandbox");
      cfg.sandbox.memory_cap = mb << 20;
    }
    read(s, "allow_network", cfg.sandbox.allow_network, "sandbox");
    read(s, "interpreter", cfg.sandbox.interpreter, "sandbox");
    std::string root;
    read(s, "scratch_root", root, "sandbox");
    if (!root.empty()) cfg.sandbox.scratch_root = resolve(base_dir, root);
    read_count(s, "parallelism", cfg.sandbox_parallelism, "sandbox");
  }
  if (j.contains("metrics")) {
    std::vector<std::string> names;
    read(j, "metrics", names, "config");
    cfg.metrics.clear();
    for (const auto& n : names) cfg.metrics.push_back(parse_metric_request(n));
  }
  read_count(j, "seed", cfg.seed, "config");
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  return parse_experiment_config(text, fs::absolute(path).parent_path());
}

std::string task_of(const DemonstrationPair& pair, const std::string& dataset_name) {
  return pair.task_id.find('/') == std::string::npos ? dataset_name : task_family(pair.task_id);
}

std::unique_ptr<ModelBackend> make_backend(const ExperimentConfig& cfg) {
  if (cfg.backend == "tiny") return std::make_unique<TinyCausalLM>(cfg.tiny);
  if (cfg.backend == "stub") return StubBackend::from_file(cfg.stub_table);
  throw ConfigError("unknown backend '" + cfg.backend + "'");
}

struct Pipeline::State {
  ExperimentConfig cfg;
  std::string digest;
  fs::path dir;
  std::unique_ptr<ModelBackend> backend;

  std::vector<DemonstrationPair> records;
  std::map<std::string, std::string> dataset_of;
  std::map<std::string, std::string> task_of_id;
  std::map<std::string, const DemonstrationPair*> by_id;
  std::vector<DemonstrationPair> pool;
  std::vector<DemonstrationPair> queries;

  bool trained = false;
  std::vector<ConceptTokenSet> thetas;
  bool scored = false;
  std::vector<std::vector<ConceptScore>> scores;
  std::unique_ptr<ScoreCache> cache;
  bool evaluated = false;
  std::vector<MetricReport> reports;

  ojson manifest;

  fs::path manifest_path() const { return dir / "manifest.json"; }
  fs::path selection_path(Strategy s, const std::string& query) const {
    return dir / "selections" / std::string(to_string(s)) / (safe_name(query) + ".json");
  }

  void stage_done(const std::string& stage, ojson details) {
    details["completed"] = now_iso();
    manifest["stages"][stage] = std::move(details);
    write_text(manifest_path(), manifest.dump(2));
  }

  const std::string& task(const DemonstrationPair& p) const { return task_of_id.at(p.task_id); }
};

Pipeline::Pipeline(ExperimentConfig cfg, fs::path run_dir, const fs::path& runs_root) : s_(std::make_unique<State>()) {
  cfg.validate();
  s_->cfg = std::move(cfg);
  const auto& c = s_->cfg;
  s_->digest = c.digest();
  s_->backend = make_backend(c);

  // Corpus and split are checked before any expensive stage.
  std::set<std::string> seen;
  auto add_records = [&](const DatasetManifest& m, const std::string& name) {
    for (const auto& r : m.records) {
      if (!seen.insert(r.task_id).second) throw ConfigError("task_id '" + r.task_id + "' appears in two datasets");
      s_->records.push_back(r);
      s_->dataset_of[r.task_id] = name;
      s_->task_of_id[r.task_id] = task_of(r, name);
    }
  };
  for (const auto& d : c.datasets) add_records(load_dataset(d.path, d.format), d.name);
  if (c.synthetic) add_records(build_synthetic_corpus(*c.synthetic, derive_seed(c.seed, "corpus")), "synthetic");
  for (const auto& r : s_->records) s_->by_id[r.task_id] = &r;

  std::set<std::string> query_set;
  if (!c.query_ids.empty()) {
    for (const auto& id : c.query_ids) {
      if (!s_->by_id.count(id)) throw ConfigError("query id '" + id + "' is not in the corpus");
      query_set.insert(id);
    }
  } else {
    std::map<std::string, std::vector<std::string>> by_task;
    for (const auto& r : s_->records) by_task[s_->task_of_id[r.task_id]].push_back(r.task_id);
    for (const auto& [task, ids] : by_task) {
      if (ids.size() <= *c.queries_per_task) {
        throw ConfigError(fmt::format("task '{}' has {} records; holding out {} would leave no demonstrations",
                                      task, ids.size(), *c.queries_per_task));
      }
      query_set.insert(ids.end() - static_cast<std::ptrdiff_t>(*c.queries_per_task), ids.end());
    }
  }
  for (const auto& r : s_->records) (query_set.count(r.task_id) ? s_->queries : s_->pool).push_back(r);
  if (s_->pool.empty()) throw ConfigError("every record is a query; the demonstration pool is empty");
  for (const auto& t : c.concept_tasks) {
    const bool known = std::any_of(s_->pool.begin(), s_->pool.end(), [&](const auto& p) { return s_->task(p) == t; });
    if (!known) throw ConfigError("concept task '" + t + "' has no demonstrations in the pool");
  }
  const std::string fp = s_->backend->fingerprint();
  for (const auto& p : c.concept_checkpoints) {
    if (read_checkpoint(p).model_fingerprint != fp) {
      throw ConfigError("checkpoint " + p.string() + " was trained against a different model");
    }
  }

  if (run_dir.empty()) {
    const std::string suffix = "-" + s_->digest.substr(0, 12);
    if (fs::exists(runs_root)) {
      for (const auto& e : fs::directory_iterator(runs_root)) {
        const auto name = e.path().filename().string();
        if (e.is_directory() && name.size() > suffix.size() && name.ends_with(suffix) &&
            (run_dir.empty() || name > run_dir.filename().string())) {
          run_dir = e.path();
        }
      }
    }
    if (run_dir.empty()) run_dir = runs_root / (utc_stamp("{:%Y%m%dT%H%M%SZ}") + suffix);
  }
  s_->dir = run_dir;
  fs::create_directories(s_->dir);

  if (fs::exists(s_->manifest_path())) {
    try {
      s_->manifest = ojson::parse(read_text(s_->manifest_path()));
    } catch (const ojson::exception& e) {
      throw RuntimeError("run manifest is unreadable: " + std::string(e.what()));
    }
    if (s_->manifest.value("config_digest", std::string{}) != s_->digest) {
      throw ConfigError("run directory " + s_->dir.string() + " belongs to a different configuration");
    }
  } else {
    const auto d = s_->backend->descriptor();
    s_->manifest["config_digest"] = s_->digest;
    s_->manifest["code_version"] = LATENTDEMO_VERSION;
    s_->manifest["template_version"] = kTemplateVersion;
    s_->manifest["created"] = now_iso();
    s_->manifest["backend"] = {{"name", d.name},
                               {"model_fingerprint", d.model_fingerprint},
                               {"embedding_dim", d.embedding_dim},
                               {"base_vocab_size", d.base_vocab_size},
                               {"context_budget", d.context_budget},
                               {"determinism_seed", d.determinism_seed}};
    std::vector<std::string> qids;
    for (const auto& q : s_->queries) qids.push_back(q.task_id);
    s_->manifest["corpus"] = {{"records", s_->records.size()},
                              {"pool", s_->pool.size()},
                              {"queries", qids},
                              {"content_hash", manifest_hash(s_->records)}};
    s_->manifest["config"] = ojson::parse(c.to_json());
    s_->manifest["stages"] = ojson::object();
    write_text(s_->manifest_path(), s_->manifest.dump(2));
  }
  spdlog::info("run directory {}", s_->dir.string());
}

Pipeline::~Pipeline() = default;

const fs::path& Pipeline::run_dir() const noexcept { return s_->dir; }
const ExperimentConfig& Pipeline::config() const noexcept { return s_->cfg; }
const ModelBackend& Pipeline::backend() const noexcept { return *s_->backend; }
const std::vector<DemonstrationPair>& Pipeline::pool() const noexcept { return s_->pool; }
const std::vector<DemonstrationPair>& Pipeline::queries() const noexcept { return s_->queries; }
std::size_t Pipeline::score_cache_hits() const noexcept { return s_->cache ? s_->cache->hits() : 0; }
std::size_t Pipeline::score_cache_misses() const noexcept { return s_->cache ? s_->cache->misses() : 0; }

void Pipeline::train() {
  if (s_->trained) return;
  auto& backend = *s_->backend;
  const auto& c = s_->cfg;
  for (const auto& p : c.concept_checkpoints) s_->thetas.push_back(load_checkpoint(backend, p));

  std::vector<std::string> tasks = c.concept_tasks;
  if (tasks.empty()) {
    std::set<std::string> all;
    for (const auto& p : s_->pool) all.insert(s_->task(p));
    tasks.assign(all.begin(), all.end());
  }
  ojson artifacts = ojson::array();
  TrainingConfig tcfg = c.training;
  tcfg.seed = derive_seed(c.seed, "train");
  for (const auto& task : tasks) {
    if (backend.has_task(task)) continue;
    const fs::path ckpt = s_->dir / "checkpoints" / (safe_name(task) + ".dcpt");
    if (fs::exists(ckpt)) {
      s_->thetas.push_back(load_checkpoint(backend, ckpt));
      spdlog::info("concept {}: reusing {}", task, ckpt.string());
    } else {
      std::vector<DemonstrationPair> pairs;
      for (const auto& p : s_->pool) {
        if (s_->task(p) == task) pairs.push_back(p);
      }
      auto [theta, trace] = train_task_concept(backend, task, pairs, tcfg);
      save_checkpoint(backend, theta, ckpt);
      ojson t{{"task", task}, {"steps", ojson::array()}, {"final_loss", trace.final_loss},
              {"wall_time_s", trace.wall_time_s}};
      for (const auto& [step, loss] : trace.steps) t["steps"].push_back({step, loss});
      write_text(s_->dir / "traces" / (safe_name(task) + ".json"), t.dump(1));
      spdlog::info("concept {}: {} pairs, loss {:.4f} -> {:.4f}", task, pairs.size(), trace.steps.front().second,
                   trace.final_loss);
      s_->thetas.push_back(std::move(theta));
    }
    artifacts.push_back(ckpt.lexically_relative(s_->dir).string());
  }
  std::sort(s_->thetas.begin(), s_->thetas.end(),
            [](const ConceptTokenSet& a, const ConceptTokenSet& b) { return a.task_id < b.task_id; });
  s_->trained = true;
  s_->stage_done("train", {{"checkpoints", artifacts}});
}

void Pipeline::score() {
  if (s_->scored) return;
  train();
  if (s_->thetas.empty()) throw RuntimeError("no concepts were trained or loaded");
  s_->cache = std::make_unique<ScoreCache>(s_->dir / "scores.jsonl");
  s_->scores = score_pool(*s_->backend, s_->thetas, s_->pool, s_->cache.get(), s_->cfg.scoring_parallelism,
                          s_->cfg.scoring);
  spdlog::info("scores: {} from cache, {} computed", s_->cache->hits(), s_->cache->misses());
  s_->scored = true;
  s_->stage_done("score", {{"scores", "scores.jsonl"},
                           {"method", to_string(s_->cfg.scoring)},
                           {"cache_hits", s_->cache->hits()},
                           {"cache_misses", s_->cache->misses()}});
}

void Pipeline::select(std::optional<std::vector<std::string>> query_ids) {
  const auto& c = s_->cfg;
  std::vector<const DemonstrationPair*> targets;
  if (query_ids) {
    for (const auto& id : *query_ids) {
      const auto it = s_->by_id.find(id);
      if (it == s_->by_id.end()) throw ConfigError("query id '" + id + "' is not in the corpus");
      targets.push_back(it->second);
    }
  } else {
    for (const auto& q : s_->queries) targets.push_back(&q);
  }

  std::size_t written = 0;
  for (Strategy strategy : c.strategies) {
    for (const auto* q : targets) {
      const fs::path out = s_->selection_path(strategy, q->task_id);
      if (fs::exists(out)) continue;
      SelectionResult r;
      switch (strategy) {
        case Strategy::semantic: r = select_semantic(s_->pool, *q, c.k); break;
        case Strategy::random: r = select_random(s_->pool, *q, c.k, derive_seed(c.seed, "select-random", q->task_id)); break;
        case Strategy::latent: {
          score();
          std::optional<std::size_t> row;
          if (c.concept_mode == ConceptMode::per_task) {
            for (std::size_t t = 0; t < s_->thetas.size(); ++t) {
              if (s_->thetas[t].task_id == s_->task(*q)) row = t;
            }
            if (!row) spdlog::warn("query {}: no concept for task {}; ranking by best concept", q->task_id, s_->task(*q));
          }
          std::vector<LatentCandidate> cands;
          for (std::size_t d = 0; d < s_->pool.size(); ++d) {
            LatentCandidate lc{s_->pool[d].task_id, std::nullopt};
            if (row) {
              const auto& sc = s_->scores[*row][d];
              if (sc.scoreable()) lc.score = sc.log_posterior;
            } else {
              std::vector<ConceptScore> column;
              for (const auto& rowv : s_->scores) column.push_back(rowv[d]);
              if (auto best = best_concept_score(column)) lc.score = best->second;
            }
            cands.push_back(std::move(lc));
          }
          r = select_latent(cands, *q, c.k);
          break;
        }
      }
      if (r.selected.size() < c.k) {
        spdlog::warn("query {} ({}): only {} eligible demonstrations for k={}", q->task_id, to_string(strategy),
                     r.selected.size(), c.k);
      }
      write_text(out, selection_to_json(r));
      ++written;
    }
  }
  s_->stage_done("select", {{"selections", "selections/"}, {"written", written}});
}

namespace {

using SampleKey = std::tuple<std::string, std::string, std::size_t>;  // strategy, task, sample

}  // namespace

void Pipeline::generate() {
  select();
  const auto& c = s_->cfg;
  const fs::path path = s_->dir / "samples.jsonl";
  std::set<SampleKey> have;
  for (const auto& j : read_jsonl(path)) {
    have.insert({j.value("strategy", ""), j.value("task", ""), j.value("sample", std::size_t{0})});
  }
  const PoolLookup lookup = [this](std::string_view id) -> const DemonstrationPair* {
    const auto it = s_->by_id.find(std::string(id));
    return it == s_->by_id.end() ? nullptr : it->second;
  };
  SamplingConfig sampling = c.sampling;
  for (Strategy strategy : c.strategies) {
    const std::string sname(to_string(strategy));
    for (const auto& q : s_->queries) {
      bool complete = true;
      for (std::size_t i = 0; i < c.n && complete; ++i) complete = have.count({sname, q.task_id, i}) > 0;
      if (complete) continue;
      const auto sel = selection_from_json(read_text(s_->selection_path(strategy, q.task_id)));
      std::vector<std::string> dropped;
      const auto prompt = assemble_within_budget(*s_->backend, sel, q, lookup, sampling.max_new_tokens, &dropped);
      for (const auto& id : dropped) spdlog::warn("query {} ({}): dropped {} to fit the context", q.task_id, sname, id);
      const auto samples = generate_samples(*s_->backend, prompt, c.n, sampling, derive_seed(c.seed, "generate", q.task_id));
      std::vector<std::string> lines;
      for (const auto& s : samples) {
        ojson j{{"strategy", sname}, {"task", s.query_task_id}, {"sample", s.sample_index},
                {"seed", s.sampling_seed}, {"demos", prompt.demo_ids}, {"prompt_tokens", prompt.token_count},
                {"raw", s.raw_text},        {"code", s.extracted_code}};
        lines.push_back(j.dump(-1, ' ', false, ojson::error_handler_t::replace));
      }
      append_lines(path, lines);
    }
  }
  s_->stage_done("generate", {{"samples", "samples.jsonl"}, {"n", c.n}});
}

void Pipeline::evaluate() {
  if (s_->evaluated) return;
  generate();
  const auto& c = s_->cfg;
  std::map<SampleKey, std::string> codes;
  for (const auto& j : read_jsonl(s_->dir / "samples.jsonl")) {
    codes[{j.value("strategy", ""), j.value("task", ""), j.value("sample", std::size_t{0})}] = j.value("code", "");
  }
  const fs::path out_path = s_->dir / "outcomes.jsonl";
  std::map<SampleKey, Verdict> verdicts;
  for (const auto& j : read_jsonl(out_path)) {
    try {
      verdicts[{j.value("strategy", ""), j.value("task", ""), j.value("sample", std::size_t{0})}] =
          parse_verdict(j.value("verdict", ""));
    } catch (const ParseError&) {
    }
  }

  std::vector<CandidateJob> jobs;
  std::vector<std::string> job_strategy;
  for (Strategy strategy : c.strategies) {
    const std::string sname(to_string(strategy));
    for (const auto& q : s_->queries) {
      for (std::size_t i = 0; i < c.n; ++i) {
        if (verdicts.count({sname, q.task_id, i})) continue;
        const auto it = codes.find({sname, q.task_id, i});
        if (it == codes.end()) throw RuntimeError(fmt::format("sample {} of {} ({}) is missing", i, q.task_id, sname));
        jobs.push_back({q.task_id, i, it->second, q.tests, q.language_tag.empty() ? "python" : q.language_tag});
        job_strategy.push_back(sname);
      }
    }
  }
  // Chunks keep an interrupted run resumable without redoing finished candidates.
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < jobs.size(); start += kChunk) {
    const std::size_t end = std::min(jobs.size(), start + kChunk);
    const std::vector<CandidateJob> chunk(jobs.begin() + static_cast<std::ptrdiff_t>(start),
                                          jobs.begin() + static_cast<std::ptrdiff_t>(end));
    const auto outcomes = run_batch(chunk, c.sandbox, c.sandbox_parallelism);
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      auto j = ojson::parse(outcome_to_jsonl(outcomes[i]));
      ojson line{{"strategy", job_strategy[start + i]}};
      line.update(j);
      lines.push_back(line.dump());
      verdicts[{job_strategy[start + i], outcomes[i].query_task_id, outcomes[i].sample_index}] = outcomes[i].verdict;
    }
    append_lines(out_path, lines);
    spdlog::info("sandbox: {}/{} candidates executed", end, jobs.size());
  }

  std::set<std::string> datasets;
  for (const auto& q : s_->queries) datasets.insert(s_->dataset_of.at(q.task_id));
  s_->reports.clear();
  ojson all{{"config_digest", s_->digest}, {"template_version", kTemplateVersion}, {"reports", ojson::array()}};
  for (const auto& dataset : datasets) {
    for (Strategy strategy : kColumnOrder) {
      if (std::find(c.strategies.begin(), c.strategies.end(), strategy) == c.strategies.end()) continue;
      const std::string sname(to_string(strategy));
      std::vector<ProblemResult> results;
      for (const auto& q : s_->queries) {
        if (s_->dataset_of.at(q.task_id) != dataset) continue;
        ProblemResult r;
        r.query_task_id = q.task_id;
        r.golden_code = q.golden_code;
        for (std::size_t i = 0; i < c.n; ++i) {
          r.samples.push_back({verdicts.at({sname, q.task_id, i}), codes.at({sname, q.task_id, i})});
        }
        results.push_back(std::move(r));
      }
      auto report = aggregate_report(dataset, sname, std::move(results), c.metrics);
      report.config_digest = s_->digest;
      write_text(s_->dir / "reports" / (safe_name(dataset) + "-" + sname + ".json"), report_to_json(report));
      all["reports"].push_back(ojson::parse(report_to_json(report)));
      s_->reports.push_back(std::move(report));
    }
  }
  write_text(s_->dir / "report.json", all.dump(2));
  std::string tables;
  for (const auto& dataset : datasets) {
    std::vector<MetricReport> cols;
    for (const auto& r : s_->reports) {
      if (r.dataset == dataset) cols.push_back(r);
    }
    tables += render_table("Results on " + dataset, cols);
  }
  write_text(s_->dir / "report.txt", tables);
  s_->evaluated = true;
  s_->stage_done("evaluate", {{"outcomes", "outcomes.jsonl"}, {"report", "report.json"}, {"table", "report.txt"}});
}

std::vector<MetricReport> Pipeline::reports() const { return s_->reports; }

std::string Pipeline::report() {
  const fs::path table = s_->dir / "report.txt";
  if (!s_->evaluated && fs::exists(table) && fs::exists(s_->dir / "report.json")) {
    const auto all = ojson::parse(read_text(s_->dir / "report.json"));
    s_->reports.clear();
    for (const auto& r : all.at("reports")) s_->reports.push_back(report_from_json(r.dump()));
    return read_text(table);
  }
  evaluate();
  return read_text(table);
}

}  // namespace latentdemo
