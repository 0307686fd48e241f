#ifndef CCDTWIN_H
#define CCDTWIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. The numeric values of the first four match the
 * command-line exit codes.
 */
typedef enum CcdStatus {
  CCD_STATUS_OK = 0,
  CCD_STATUS_CONFIG_ERROR = 1,
  CCD_STATUS_NUMERIC_ERROR = 2,
  CCD_STATUS_INCOMPLETE_INPUT = 3,
  /**
   * Null pointer, bad UTF-8, index out of range or short buffer.
   */
  CCD_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  CCD_STATUS_INTERNAL_ERROR = 5,
} CcdStatus;

/**
 * Truth-plant comparison of the generations of a lifecycle.
 */
typedef struct CcdComparison CcdComparison;

/**
 * Experiment configuration.
 */
typedef struct CcdExperiment CcdExperiment;

/**
 * Nominal discrete-time plant at a fixed design.
 */
typedef struct CcdPlant CcdPlant;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length plus one, or 0 when
 * there is no error.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t ccd_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ccd_version(void);

/**
 * Built-in defaults for `plant` ("illustrative" or "suspension").
 *
 * # Safety
 * `plant` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CcdStatus ccd_experiment_default(const char *plant, struct CcdExperiment **out);

/**
 * Loads a TOML experiment file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CcdStatus ccd_experiment_load(const char *path, struct CcdExperiment **out);

/**
 * Parses a TOML experiment document; relative paths resolve against the
 * working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CcdStatus ccd_experiment_parse(const char *text, struct CcdExperiment **out);

/**
 * # Safety
 * `exp` must be a live handle.
 */
enum CcdStatus ccd_experiment_set_seed(struct CcdExperiment *exp, uint64_t seed);

/**
 * # Safety
 * `exp` must be a live handle.
 */
enum CcdStatus ccd_experiment_set_workers(struct CcdExperiment *exp, size_t workers);

/**
 * Writes the effective configuration as TOML into `buf` (NUL-terminated).
 * `needed` receives the required size including the NUL; a short buffer
 * yields `INVALID_ARGUMENT` and leaves `buf` untouched.
 *
 * # Safety
 * `exp` must be a live handle, `buf` null or `cap` writable bytes, `needed`
 * null or valid.
 */
enum CcdStatus ccd_experiment_to_toml(const struct CcdExperiment *exp,
                                      char *buf,
                                      size_t cap,
                                      size_t *needed);

/**
 * # Safety
 * `exp` must be null or a handle not yet freed.
 */
void ccd_experiment_free(struct CcdExperiment *exp);

/**
 * Nominal plant of the experiment at `design` (`n_design` values), or at
 * the initial design when `design` is null.
 *
 * # Safety
 * `exp` must be a live handle, `design` null or `n_design` doubles, `out`
 * valid.
 */
enum CcdStatus ccd_plant_new(const struct CcdExperiment *exp,
                             const double *design,
                             size_t n_design,
                             struct CcdPlant **out);

/**
 * # Safety
 * `plant` must be null or a live handle.
 */
size_t ccd_plant_state_dim(const struct CcdPlant *plant);

/**
 * One nominal step `x' = A x + B u + w`. `w` may be null (zero).
 *
 * # Safety
 * `x`, `out` and (if non-null) `w` must hold `n` doubles, `n` being the
 * plant's state dimension.
 */
enum CcdStatus ccd_plant_step(const struct CcdPlant *plant,
                              const double *x,
                              size_t n,
                              double u,
                              const double *w,
                              double *out);

/**
 * # Safety
 * `plant` must be null or a handle not yet freed.
 */
void ccd_plant_free(struct CcdPlant *plant);

/**
 * Runs (or resumes) the lifecycle up to `generations` in the run directory
 * `out_dir`, writes the report there, and returns the comparison.
 *
 * # Safety
 * `exp` must be a live handle, `out_dir` a NUL-terminated string, `out`
 * valid.
 */
enum CcdStatus ccd_lifecycle_run(const struct CcdExperiment *exp,
                                 const char *out_dir,
                                 size_t generations,
                                 struct CcdComparison **out);

/**
 * Number of generations in the comparison (generation 0 included).
 *
 * # Safety
 * `cmp` must be null or a live handle.
 */
size_t ccd_comparison_len(const struct CcdComparison *cmp);

/**
 * Truth-plant return statistics of generation `index`.
 *
 * # Safety
 * `cmp` must be a live handle; `mean` and `std` valid pointers.
 */
enum CcdStatus ccd_comparison_returns(const struct CcdComparison *cmp,
                                      size_t index,
                                      double *mean,
                                      double *std);

/**
 * Steady-state standard deviation of `metric` ("x1".., "u") under canonical
 * condition `condition` (1-based) for generation `index`.
 *
 * # Safety
 * `cmp` must be a live handle, `metric` a NUL-terminated string, `value`
 * valid.
 */
enum CcdStatus ccd_comparison_sigma(const struct CcdComparison *cmp,
                                    size_t condition,
                                    const char *metric,
                                    size_t index,
                                    double *value);

/**
 * # Safety
 * `cmp` must be null or a handle not yet freed.
 */
void ccd_comparison_free(struct CcdComparison *cmp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCDTWIN_H */
