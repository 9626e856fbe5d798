/* C interface to the latentdemo library. Every function returns an
 * ld_status; on failure ld_last_error() describes the problem (per thread).
 * Strings returned through char** are heap-allocated and must be released
 * with ld_string_free. */
#ifndef LATENTDEMO_H
#define LATENTDEMO_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LD_API __attribute__((visibility("default")))
#else
#define LD_API
#endif

typedef enum ld_status {
  LD_OK = 0,
  LD_ERR_CONFIG = 1,
  LD_ERR_RUNTIME = 2,
  LD_ERR_SANDBOX = 3,
  LD_ERR_OVERFLOW = 4,
  LD_ERR_PARSE = 5,
  LD_ERR_INVALID_ARGUMENT = 6
} ld_status;

typedef struct ld_pipeline ld_pipeline;

/* Command-line style overrides applied on top of a config file. Zeroed
 * fields (NULL / has_* == 0) leave the config value alone. */
typedef struct ld_overrides {
  int has_seed;
  uint64_t seed;
  const char* backend;  /* "tiny" or "stub" */
  const char* strategy; /* "latent", "semantic", "random" or "all" */
  int has_k;
  uint64_t k;
  int has_n;
  uint64_t n;
} ld_overrides;

LD_API const char* ld_version(void);
LD_API const char* ld_last_error(void);
LD_API void ld_string_free(char* s);
/* "trace", "debug", "info", "warn", "error" or "off". */
LD_API ld_status ld_set_log_level(const char* level);

/* run_dir may be NULL or empty: the newest run directory for this config
 * under runs_root is reused, or a new one is created. runs_root NULL means
 * "runs". overrides may be NULL. */
LD_API ld_status ld_pipeline_open(const char* config_path, const char* run_dir, const char* runs_root,
                                  const ld_overrides* overrides, ld_pipeline** out);
LD_API void ld_pipeline_close(ld_pipeline* p);

LD_API ld_status ld_pipeline_train(ld_pipeline* p);
LD_API ld_status ld_pipeline_score(ld_pipeline* p);
/* ids may be NULL (count 0) to select for every configured query. */
LD_API ld_status ld_pipeline_select(ld_pipeline* p, const char* const* ids, size_t count);
LD_API ld_status ld_pipeline_generate(ld_pipeline* p);
LD_API ld_status ld_pipeline_evaluate(ld_pipeline* p);
LD_API ld_status ld_pipeline_report(ld_pipeline* p, char** table_out);
LD_API ld_status ld_pipeline_run_dir(const ld_pipeline* p, char** out);
LD_API ld_status ld_pipeline_cache_stats(const ld_pipeline* p, uint64_t* hits, uint64_t* misses);

/* Unbiased pass@k for n samples of which c pass. */
LD_API ld_status ld_pass_at_k(uint64_t n, uint64_t c, uint64_t k, double* out);
/* 1 - levenshtein(a, b) / max(|a|, |b|). */
LD_API ld_status ld_edit_similarity(const char* a, const char* b, double* out);
/* Runs Python `code` against `tests_json` (a JSON array of snippets) in the
 * sandbox. Writes an outcome JSON object with verdict, duration and detail. */
LD_API ld_status ld_run_candidate(const char* code, const char* tests_json, double timeout_s, char** outcome_json);

#ifdef __cplusplus
}
#endif

#endif /* LATENTDEMO_H */
