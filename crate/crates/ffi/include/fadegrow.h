#ifndef FADEGROW_H
#define FADEGROW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_TARGET = 2,
  FG_STATUS_DIMENSION_ERROR = 3,
  FG_STATUS_DOMAIN_ERROR = 4,
  FG_STATUS_CONFIG_ERROR = 5,
  FG_STATUS_NUMERICAL_ERROR = 6,
  FG_STATUS_IO_ERROR = 7,
  FG_STATUS_PARSE_ERROR = 8,
  FG_STATUS_PANIC = 9,
  FG_STATUS_OTHER = 10,
} FgStatus;

/**
 * Opaque structured fading matrix.
 */
typedef struct FgFadingMatrix FgFadingMatrix;

/**
 * Opaque trained score network.
 */
typedef struct FgModel FgModel;

/**
 * Opaque retention schedule.
 */
typedef struct FgSchedule FgSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to `cap`) into `buf`. Returns the full message length in bytes,
 * excluding the terminator.
 */
size_t fg_last_error_message(char *buf, size_t cap);

/**
 * Rank-1 fading matrix toward the nonnegative `weights`. When
 * `has_virtual_item` is nonzero the last index is the virtual item.
 */
enum FgStatus fg_fading_rank1_new(const double *weights,
                                  size_t len,
                                  bool has_virtual_item,
                                  struct FgFadingMatrix **out);

size_t fg_fading_corpus_size(const struct FgFadingMatrix *fading);

/**
 * `out = E v`; both buffers have `len` entries.
 */
enum FgStatus fg_fading_apply(const struct FgFadingMatrix *fading,
                              const double *v,
                              double *out,
                              size_t len);

void fg_fading_free(struct FgFadingMatrix *fading);

enum FgStatus fg_schedule_geometric_new(double beta_min,
                                        double beta_max,
                                        size_t steps,
                                        struct FgSchedule **out);

enum FgStatus fg_schedule_linear_new(double beta_scale, size_t steps, struct FgSchedule **out);

/**
 * Retention probability `α(t)` for `t ∈ [0, 1]`.
 */
enum FgStatus fg_schedule_alpha(const struct FgSchedule *s, double t, double *out);

/**
 * Rate `β(t)` for `t ∈ [0, 1]`.
 */
enum FgStatus fg_schedule_beta(const struct FgSchedule *s, double t, double *out);

void fg_schedule_free(struct FgSchedule *s);

/**
 * Loads a checkpoint written by `fadegrow train`. `path` is UTF-8.
 */
enum FgStatus fg_model_load(const char *path, struct FgModel **out);

/**
 * Number of real items `N` (the virtual item, if any, is not counted).
 */
size_t fg_model_num_items(const struct FgModel *model);

/**
 * Number of timestep intervals the model was trained with.
 */
size_t fg_model_steps(const struct FgModel *model);

/**
 * Recommends up to `top_k` items for a history (oldest first) by running
 * the reverse sampler with guidance `w`. Writes item ids and their final
 * probabilities, and the number written to `written`.
 */
enum FgStatus fg_model_recommend(const struct FgModel *model,
                                 const struct FgSchedule *schedule,
                                 const size_t *history,
                                 size_t history_len,
                                 double w,
                                 uint64_t seed,
                                 size_t top_k,
                                 size_t *items_out,
                                 double *scores_out,
                                 size_t *written);

void fg_model_free(struct FgModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FADEGROW_H */
