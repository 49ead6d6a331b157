#include <math.h>
#include <stdio.h>
#include "spectral_cl.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    int rc = (call);                                                           \
    if (rc != SPCL_OK) {                                                       \
      fprintf(stderr, "%s -> %d: %s\n", #call, rc, spcl_last_error_message()); \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  SpclConfig *cfg = NULL;
  SpclDataset *ds = NULL;
  SpclCovariances *cov = NULL;
  SpclModel *model = NULL;
  double a1 = 0, a2 = 0;

  CHECK(spcl_config_preset("c0", &cfg));
  CHECK(spcl_dataset_generate(cfg, &ds));
  CHECK(spcl_covariances_build(ds, &cov));
  CHECK(spcl_solve_min_norm(cov, SPCL_LOSS_SCL, 0.0, 3, &model));
  CHECK(spcl_model_alignment(model, 1, &a1));
  CHECK(spcl_model_alignment(model, 2, &a2));
  if (spcl_model_alignment(model, 0, &a1) == SPCL_OK) return 2;
  printf("version %s n=%zu align_v1=%.6f align_v2=%.3e\n", spcl_version(), spcl_dataset_len(ds), a1, a2);

  spcl_model_free(model);
  spcl_covariances_free(cov);
  spcl_dataset_free(ds);
  spcl_config_free(cfg);
  return (a1 > 0.5 && fabs(a2) < 1e-8) ? 0 : 3;
}
