#include "latentdemo/latentdemo.h"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "json.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/evaluation.hpp"
#include "latentdemo/pipeline.hpp"
#include "latentdemo/sandbox.hpp"

struct ld_pipeline {
  std::unique_ptr<latentdemo::Pipeline> impl;
};

namespace {

thread_local std::string g_last_error;

ld_status fail(ld_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

ld_status status_of(latentdemo::ErrorKind kind) {
  switch (kind) {
    case latentdemo::ErrorKind::config: return LD_ERR_CONFIG;
    case latentdemo::ErrorKind::runtime: return LD_ERR_RUNTIME;
    case latentdemo::ErrorKind::overflow: return LD_ERR_OVERFLOW;
    case latentdemo::ErrorKind::parse: return LD_ERR_PARSE;
    case latentdemo::ErrorKind::sandbox_infra: return LD_ERR_SANDBOX;
  }
  return LD_ERR_RUNTIME;
}

template <typename Fn>
ld_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return LD_OK;
  } catch (const latentdemo::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(LD_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(LD_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(LD_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* ld_version(void) { return LATENTDEMO_VERSION; }

const char* ld_last_error(void) { return g_last_error.c_str(); }

void ld_string_free(char* s) { std::free(s); }

ld_status ld_set_log_level(const char* level) {
  if (level == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "level is NULL");
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0) {
    return fail(LD_ERR_INVALID_ARGUMENT, std::string("unknown log level '") + level + "'");
  }
  spdlog::set_level(lvl);
  return LD_OK;
}

ld_status ld_pipeline_open(const char* config_path, const char* run_dir, const char* runs_root,
                           const ld_overrides* overrides, ld_pipeline** out) {
  if (config_path == nullptr || out == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "config path or out is NULL");
  *out = nullptr;
  return guarded([&] {
    auto cfg = latentdemo::load_experiment_config(config_path);
    if (overrides != nullptr) {
      if (overrides->has_seed) cfg.seed = overrides->seed;
      if (overrides->backend != nullptr && *overrides->backend != '\0') cfg.backend = overrides->backend;
      if (overrides->strategy != nullptr && *overrides->strategy != '\0') {
        const std::string s = overrides->strategy;
        if (s == "all") {
          cfg.strategies = {latentdemo::Strategy::semantic, latentdemo::Strategy::latent,
                            latentdemo::Strategy::random};
        } else {
          cfg.strategies = {latentdemo::parse_strategy(s)};
        }
      }
      if (overrides->has_k) cfg.k = overrides->k;
      if (overrides->has_n) cfg.n = overrides->n;
    }
    auto p = std::make_unique<ld_pipeline>();
    p->impl = std::make_unique<latentdemo::Pipeline>(std::move(cfg), run_dir != nullptr ? run_dir : "",
                                                     runs_root != nullptr ? runs_root : "runs");
    *out = p.release();
  });
}

void ld_pipeline_close(ld_pipeline* p) { delete p; }

#define LD_REQUIRE_PIPELINE(p) \
  if ((p) == nullptr || !(p)->impl) return fail(LD_ERR_INVALID_ARGUMENT, "pipeline handle is NULL")

ld_status ld_pipeline_train(ld_pipeline* p) {
  LD_REQUIRE_PIPELINE(p);
  return guarded([&] { p->impl->train(); });
}

ld_status ld_pipeline_score(ld_pipeline* p) {
  LD_REQUIRE_PIPELINE(p);
  return guarded([&] { p->impl->score(); });
}

ld_status ld_pipeline_select(ld_pipeline* p, const char* const* ids, size_t count) {
  LD_REQUIRE_PIPELINE(p);
  if (count > 0 && ids == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "ids is NULL");
  return guarded([&] {
    if (count == 0) {
      p->impl->select();
      return;
    }
    std::vector<std::string> v;
    for (size_t i = 0; i < count; ++i) {
      if (ids[i] == nullptr) throw latentdemo::ConfigError("query id is NULL");
      v.emplace_back(ids[i]);
    }
    p->impl->select(v);
  });
}

ld_status ld_pipeline_generate(ld_pipeline* p) {
  LD_REQUIRE_PIPELINE(p);
  return guarded([&] { p->impl->generate(); });
}

ld_status ld_pipeline_evaluate(ld_pipeline* p) {
  LD_REQUIRE_PIPELINE(p);
  return guarded([&] { p->impl->evaluate(); });
}

ld_status ld_pipeline_report(ld_pipeline* p, char** table_out) {
  LD_REQUIRE_PIPELINE(p);
  if (table_out == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "out is NULL");
  return guarded([&] { *table_out = dup_string(p->impl->report()); });
}

ld_status ld_pipeline_run_dir(const ld_pipeline* p, char** out) {
  LD_REQUIRE_PIPELINE(p);
  if (out == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "out is NULL");
  return guarded([&] { *out = dup_string(p->impl->run_dir().string()); });
}

ld_status ld_pipeline_cache_stats(const ld_pipeline* p, uint64_t* hits, uint64_t* misses) {
  LD_REQUIRE_PIPELINE(p);
  if (hits == nullptr || misses == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "out is NULL");
  *hits = p->impl->score_cache_hits();
  *misses = p->impl->score_cache_misses();
  return LD_OK;
}

ld_status ld_pass_at_k(uint64_t n, uint64_t c, uint64_t k, double* out) {
  if (out == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "out is NULL");
  return guarded([&] { *out = latentdemo::pass_at_k(n, c, k); });
}

ld_status ld_edit_similarity(const char* a, const char* b, double* out) {
  if (a == nullptr || b == nullptr || out == nullptr) return fail(LD_ERR_INVALID_ARGUMENT, "NULL argument");
  *out = latentdemo::normalized_edit_similarity(a, b);
  return LD_OK;
}

ld_status ld_run_candidate(const char* code, const char* tests_json, double timeout_s, char** outcome_json) {
  if (code == nullptr || tests_json == nullptr || outcome_json == nullptr) {
    return fail(LD_ERR_INVALID_ARGUMENT, "NULL argument");
  }
  return guarded([&] {
    std::vector<std::string> tests;
    try {
      tests = nlohmann::json::parse(tests_json).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw latentdemo::ParseError(std::string("tests must be a JSON array of strings: ") + e.what());
    }
    latentdemo::SandboxPolicy policy;
    policy.timeout_s = timeout_s;
    *outcome_json = dup_string(latentdemo::outcome_to_jsonl(latentdemo::run_candidate(code, tests, policy)));
  });
}

}  // extern "C"
