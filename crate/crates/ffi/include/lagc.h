#ifndef LAGC_H
#define LAGC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LagcStatus {
  LAGC_STATUS_OK = 0,
  LAGC_STATUS_NULL_POINTER = 1,
  LAGC_STATUS_INVALID_ARGUMENT = 2,
  LAGC_STATUS_CONFIG = 3,
  LAGC_STATUS_DECODE = 4,
  LAGC_STATUS_DIVERGENCE = 5,
  LAGC_STATUS_IO = 6,
  LAGC_STATUS_NUMERIC = 7,
  LAGC_STATUS_PANIC = 8,
} LagcStatus;

typedef enum LagcPreset {
  LAGC_PRESET_GD = 0,
  LAGC_PRESET_GC = 1,
  LAGC_PRESET_LAG = 2,
  LAGC_PRESET_GROUPED_GD = 3,
  LAGC_PRESET_LAGC = 4,
  LAGC_PRESET_GROUPED_LAG = 5,
  LAGC_PRESET_CUSTOM = 6,
} LagcPreset;

typedef enum LagcLaw {
  LAGC_LAW_EXPONENTIAL = 0,
  LAGC_LAW_PARETO = 1,
} LagcLaw;

/**
 * Opaque dataset handle.
 */
typedef struct LagcDataset LagcDataset;

/**
 * Opaque trace handle.
 */
typedef struct LagcTrace LagcTrace;

typedef struct LagcDatasetInfo {
  size_t dimension;
  size_t partitions;
  double smoothness;
  double pl_constant;
} LagcDatasetInfo;

/**
 * Computing-time law. `shape` is ignored for the exponential law.
 */
typedef struct LagcTiming {
  /**
   * A `LagcLaw` value.
   */
  uint32_t law;
  double eta;
  double shape;
} LagcTiming;

typedef struct LagcScheme {
  /**
   * A `LagcPreset` value.
   */
  uint32_t preset;
  size_t workers;
  size_t group_size;
  size_t redundancy;
  size_t wait_for;
  double xi;
  size_t history_depth;
  double step_size;
  struct LagcTiming timing;
} LagcScheme;

typedef struct LagcRecord {
  size_t iteration;
  double duration;
  size_t downloads;
  size_t uploads;
  double loss_gap;
  size_t selected_groups;
} LagcRecord;

/**
 * Iterations, communication, computation and gap accumulated by a time.
 */
typedef struct LagcSnapshot {
  size_t iterations;
  size_t communication;
  double computation;
  double loss_gap;
} LagcSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's most recent error, or null. Valid until
 * the next failing call on the same thread.
 */
const char *lagc_last_error(void);

/**
 * Generates a dataset with `partitions` partitions of `rows` × `dimension`.
 * `smoothness` holds one target per partition, or is null for the
 * `(1.3^(s-1) + 1)²` law.
 *
 * # Safety
 * `smoothness` must be null or point to `partitions` doubles; `out` must be
 * a valid pointer.
 */
enum LagcStatus lagc_dataset_generate(size_t dimension,
                                      size_t rows,
                                      size_t partitions,
                                      const double *smoothness,
                                      uint64_t seed,
                                      struct LagcDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from `lagc_dataset_generate` not yet freed.
 */
void lagc_dataset_free(struct LagcDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle and `out` a valid pointer.
 */
enum LagcStatus lagc_dataset_info(const struct LagcDataset *dataset, struct LagcDatasetInfo *out);

/**
 * Simulates one run from `θ⁰ = 0` until the gap is at most `epsilon` or
 * `max_iters` iterations have run.
 *
 * # Safety
 * `dataset` must be a live handle; `scheme` and `out` valid pointers.
 */
enum LagcStatus lagc_run(const struct LagcDataset *dataset,
                         const struct LagcScheme *scheme,
                         double epsilon,
                         size_t max_iters,
                         uint64_t seed,
                         struct LagcTrace **out);

/**
 * # Safety
 * `trace` must be null or a handle from `lagc_run` not yet freed.
 */
void lagc_trace_free(struct LagcTrace *trace);

/**
 * Number of iterations in the trace; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t lagc_trace_len(const struct LagcTrace *trace);

/**
 * Writes the gap at `θ⁰` and whether the run reached epsilon.
 *
 * # Safety
 * `trace` must be a live handle; `initial_gap` and `reached` valid pointers.
 */
enum LagcStatus lagc_trace_summary(const struct LagcTrace *trace,
                                   double *initial_gap,
                                   bool *reached);

/**
 * Record of iteration `index + 1`.
 *
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
enum LagcStatus lagc_trace_record(const struct LagcTrace *trace,
                                  size_t index,
                                  struct LagcRecord *out);

/**
 * Iterations, communication, computation and gap reached by time `time`.
 *
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
enum LagcStatus lagc_trace_functions(const struct LagcTrace *trace,
                                     double time,
                                     struct LagcSnapshot *out);

/**
 * # Safety
 * `trace` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum LagcStatus lagc_trace_write_csv(const struct LagcTrace *trace, const char *path);

/**
 * `E[T_{a:b}]` for load `r`.
 *
 * # Safety
 * `timing` and `out` must be valid pointers.
 */
enum LagcStatus lagc_expected_order_stat(const struct LagcTiming *timing,
                                         size_t a,
                                         size_t b,
                                         size_t r,
                                         double *out);

/**
 * Expected maximum over `groups` groups of each group's `wait_for`-th
 * fastest of `group_size` workers with load `r`.
 *
 * # Safety
 * `timing` and `out` must be valid pointers.
 */
enum LagcStatus lagc_expected_group_time(const struct LagcTiming *timing,
                                         size_t r,
                                         size_t group_size,
                                         size_t wait_for,
                                         size_t groups,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAGC_H */
