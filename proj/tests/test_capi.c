/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "latentdemo/latentdemo.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

int main(void) {
  double v = 0.0;
  EXPECT(strlen(ld_version()) > 0);

  EXPECT(ld_pass_at_k(10, 3, 5, &v) == LD_OK);
  EXPECT(fabs(v - (1.0 - 21.0 / 252.0)) < 1e-12);
  EXPECT(ld_pass_at_k(3, 1, 4, &v) == LD_ERR_CONFIG);
  EXPECT(strlen(ld_last_error()) > 0);
  EXPECT(ld_pass_at_k(3, 1, 1, NULL) == LD_ERR_INVALID_ARGUMENT);

  EXPECT(ld_edit_similarity("kitten", "sitting", &v) == LD_OK);
  EXPECT(fabs(v - 4.0 / 7.0) < 1e-15);

  EXPECT(ld_set_log_level("warn") == LD_OK);
  EXPECT(ld_set_log_level("loud") == LD_ERR_INVALID_ARGUMENT);

  ld_pipeline* p = (ld_pipeline*)0x1;
  EXPECT(ld_pipeline_open("/nonexistent/experiment.json", NULL, NULL, NULL, &p) == LD_ERR_CONFIG);
  EXPECT(p == NULL);
  EXPECT(ld_pipeline_train(NULL) == LD_ERR_INVALID_ARGUMENT);
  ld_pipeline_close(NULL);

  char* out = NULL;
  EXPECT(ld_run_candidate("x = 1", "not json", 5.0, &out) == LD_ERR_PARSE);
  if (system("python3 -c pass >/dev/null 2>&1") == 0) {
    EXPECT(ld_run_candidate("def f():\n    return 2\n", "[\"assert f() == 2\"]", 5.0, &out) == LD_OK);
    EXPECT(out != NULL && strstr(out, "\"PASS\"") != NULL);
    ld_string_free(out);
  }

  if (failures == 0) printf("C API checks passed\n");
  return failures == 0 ? 0 : 1;
}
