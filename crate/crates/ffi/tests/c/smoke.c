#include <stdio.h>
#include <string.h>

#include "ihdg.h"

#define CHECK(call)                                                          \
  do {                                                                       \
    IhdgStatus s_ = (call);                                                  \
    if (s_ != IHDG_STATUS_OK) {                                              \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, ihdg_last_error()); \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  IhdgConfig *cfg = NULL;
  IhdgRun *run = NULL;
  double iterations = 0.0, err = 0.0, diff = 0.0;
  IhdgOutcome outcome;
  size_t len = 0;

  CHECK(ihdg_config_new("transport2d-discont", &cfg));
  CHECK(ihdg_config_set(cfg, "p", "2"));
  CHECK(ihdg_config_set(cfg, "flux", "npc"));

  if (ihdg_config_set(cfg, "no_such_key", "1") != IHDG_STATUS_INVALID_CONFIG) return 2;
  if (strstr(ihdg_last_error(), "no_such_key") == NULL) return 3;

  CHECK(ihdg_run(cfg, &run));
  CHECK(ihdg_run_outcome(run, &outcome));
  CHECK(ihdg_run_iterations(run, &iterations));
  if (outcome != IHDG_OUTCOME_CONVERGED || iterations < 1.0) return 4;
  if (ihdg_run_residuals(run, NULL, 0, &len) != IHDG_STATUS_BUFFER_TOO_SMALL || len == 0) return 5;
  if (ihdg_run_l2_error(run, &err) != IHDG_STATUS_UNAVAILABLE) return 6;

  CHECK(ihdg_oracle_difference(cfg, &diff));
  if (!(diff < 1e-8)) return 7;

  printf("version %s iterations %.0f residuals %zu difference %.3e\n", ihdg_version(), iterations,
         len, diff);
  ihdg_run_free(run);
  ihdg_config_free(cfg);
  return 0;
}
