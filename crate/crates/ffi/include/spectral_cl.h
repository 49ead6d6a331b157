#ifndef SPECTRAL_CL_H
#define SPECTRAL_CL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SPCL_OK 0

#define SPCL_ERR_NULL -1

#define SPCL_ERR_UTF8 -2

#define SPCL_ERR_BUFFER -3

#define SPCL_ERR_ARGUMENT -4

#define SPCL_ERR_PANIC -5

#define SPCL_LOSS_SCL 0

#define SPCL_LOSS_UCL 1

#define SPCL_LOSS_JOINT 2

/**
 * An experiment configuration.
 */
typedef struct SpclConfig SpclConfig;

/**
 * Population covariances of a dataset.
 */
typedef struct SpclCovariances SpclCovariances;

/**
 * A generated training set.
 */
typedef struct SpclDataset SpclDataset;

/**
 * Linear embedding weights over the effective coordinates.
 */
typedef struct SpclModel SpclModel;

/**
 * Per-epoch training records.
 */
typedef struct SpclTrace SpclTrace;

/**
 * One epoch of a training trace.
 */
typedef struct SpclEpochRecord {
  size_t epoch;
  double loss;
  double align_v1;
  double align_v2;
  double term1_norm;
  double term2_norm;
} SpclEpochRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after a
 * success. Valid until the next call into the library on the same thread.
 */
const char *spcl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spcl_version(void);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
int32_t spcl_config_from_toml(const char *toml, struct SpclConfig **out);

/**
 * One of the shipped presets: `c0`, `c1`, `c2` or `fig1`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
int32_t spcl_config_preset(const char *name, struct SpclConfig **out);

/**
 * Replaces the seed of a configuration.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
int32_t spcl_config_set_seed(struct SpclConfig *cfg, uint64_t seed);

/**
 * Effective dimension `d + 1`, or 0 for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t spcl_config_dim(const struct SpclConfig *cfg);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void spcl_config_free(struct SpclConfig *cfg);

/**
 * Generates the augmented training set of a configuration.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a writable pointer.
 */
int32_t spcl_dataset_generate(const struct SpclConfig *cfg, struct SpclDataset **out);

/**
 * Number of augmented examples, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t spcl_dataset_len(const struct SpclDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void spcl_dataset_free(struct SpclDataset *ds);

/**
 * Builds the covariances of a dataset.
 *
 * # Safety
 * `ds` must be a live handle and `out` a writable pointer.
 */
int32_t spcl_covariances_build(const struct SpclDataset *ds, struct SpclCovariances **out);

/**
 * # Safety
 * `cov` must be null or a handle not yet freed.
 */
void spcl_covariances_free(struct SpclCovariances *cov);

/**
 * Minimum-norm global minimizer with embedding dimension `p`. When the
 * target rank exceeds `p`, ties are broken toward the lowest coordinate.
 * `beta` is read only for the joint loss.
 *
 * # Safety
 * `cov` must be a live handle and `out` a writable pointer.
 */
int32_t spcl_solve_min_norm(const struct SpclCovariances *cov,
                            int32_t loss,
                            double beta,
                            size_t p,
                            struct SpclModel **out);

/**
 * Trains from the configuration's seeded initialization with full-batch
 * gradient descent. Either output may be null if it is not wanted.
 *
 * # Safety
 * `cfg` must be a live handle; `out_model` and `out_trace` must be null or
 * writable pointers.
 */
int32_t spcl_train(const struct SpclConfig *cfg,
                   int32_t loss,
                   size_t epochs,
                   struct SpclModel **out_model,
                   struct SpclTrace **out_trace);

/**
 * Writes the weight shape `(p, d + 1)`.
 *
 * # Safety
 * `model` must be a live handle; `rows` and `cols` writable pointers.
 */
int32_t spcl_model_shape(const struct SpclModel *model, size_t *rows, size_t *cols);

/**
 * Copies the weights row-major into `buf`, which must hold `p·(d+1)` values.
 *
 * # Safety
 * `model` must be a live handle and `buf` valid for `len` writes.
 */
int32_t spcl_model_copy_weights(const struct SpclModel *model, double *buf, size_t len);

/**
 * `‖W v_k‖` for feature `k ≥ 1`.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
int32_t spcl_model_alignment(const struct SpclModel *model, size_t k, double *out);

/**
 * Spectral loss of a model on the given covariances.
 *
 * # Safety
 * `model` and `cov` must be live handles and `out` a writable pointer.
 */
int32_t spcl_model_loss(const struct SpclModel *model,
                        const struct SpclCovariances *cov,
                        int32_t loss,
                        double beta,
                        double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void spcl_model_free(struct SpclModel *model);

/**
 * Number of records (epochs plus the initial one), or 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t spcl_trace_len(const struct SpclTrace *trace);

/**
 * Copies up to `len` records into `buf`; the count written goes to
 * `written` when it is not null.
 *
 * # Safety
 * `trace` must be a live handle and `buf` valid for `len` writes.
 */
int32_t spcl_trace_copy(const struct SpclTrace *trace,
                        struct SpclEpochRecord *buf,
                        size_t len,
                        size_t *written);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void spcl_trace_free(struct SpclTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRAL_CL_H */
