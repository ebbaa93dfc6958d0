#ifndef STICKYDIFF_H
#define STICKYDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  // A required pointer argument was null.
  SD_STATUS_NULL_POINTER = 1,
  // Bad input: malformed config or data, wrong buffer length, invalid UTF-8.
  SD_STATUS_INVALID = 2,
  // The computation failed at runtime.
  SD_STATUS_RUNTIME = 3,
  // A panic was caught inside the library.
  SD_STATUS_PANIC = 4,
} SdStatus;

// Which frequentist test [`sd_dataset_pvalues`] runs.
typedef enum SdTest {
  SD_TEST_ANOVA = 0,
  SD_TEST_KRUSKAL_WALLIS = 1,
} SdTest;

// Proportions, treatment labels and probe coordinates.
typedef struct SdDataset SdDataset;

// Posterior summaries of one sampler run.
typedef struct SdFit SdFit;

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *sd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *sd_version(void);

// Builds a dataset from a row-major `n x p` matrix of proportions,
// `n` treatment labels (starting at 1) and `p` increasing coordinates.
//
// # Safety
// `values` must point to `n * p` doubles, `treatments` to `n` values and
// `positions` to `p` values. `out` must be writable.
enum SdStatus sd_dataset_new(const double *values,
                             size_t n,
                             size_t p,
                             const uint32_t *treatments,
                             const uint64_t *positions,
                             struct SdDataset **out);

// Reads `dataset.tsv` and `positions.tsv`.
//
// # Safety
// Both paths must be NUL-terminated strings; `out` must be writable.
enum SdStatus sd_dataset_load(const char *dataset_path,
                              const char *positions_path,
                              struct SdDataset **out);

// Simulates a dataset from a JSON simulation config.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum SdStatus sd_dataset_simulate(const char *config_json, uint64_t seed, struct SdDataset **out);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t sd_dataset_n_samples(const struct SdDataset *ds);

// Number of probes, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t sd_dataset_n_probes(const struct SdDataset *ds);

// Per-probe p-values of a one-way test on the proportions.
//
// # Safety
// `ds` must be a live handle and `out` must hold `len` doubles, with `len`
// equal to the number of probes.
enum SdStatus sd_dataset_pvalues(const struct SdDataset *ds,
                                 enum SdTest test,
                                 double *out,
                                 size_t len);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must be null or a handle not yet freed.
void sd_dataset_free(struct SdDataset *ds);

// Runs the sampler. `config_json` may be null for the default settings;
// `seed` replaces any seed in the config.
//
// # Safety
// `ds` must be a live handle, `config_json` null or NUL-terminated, `out`
// writable.
enum SdStatus sd_fit_run(const struct SdDataset *ds,
                         const char *config_json,
                         uint64_t seed,
                         struct SdFit **out);

// Number of probes in the fit, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t sd_fit_n_probes(const struct SdFit *fit);

// Number of stored posterior draws, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t sd_fit_stored_draws(const struct SdFit *fit);

// Posterior probability that each probe is differential.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum SdStatus sd_fit_diff_prob(const struct SdFit *fit, double *out, size_t len);

// FDR-controlled calls (1 = differential) and their count.
//
// # Safety
// `fit` must be a live handle, `out` must hold `len` bytes and `n_called`
// must be null or writable.
enum SdStatus sd_fit_calls(const struct SdFit *fit, uint8_t *out, size_t len, size_t *n_called);

// Lower bound on the log Bayes factor of `eta > 0` against `eta = 0` and
// its Monte Carlo standard error.
//
// # Safety
// `fit` must be a live handle; the output pointers must be writable.
enum SdStatus sd_fit_order_evidence(const struct SdFit *fit, double *estimate, double *std_error);

// Releases a fit. Null is ignored.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void sd_fit_free(struct SdFit *fit);

#endif  /* STICKYDIFF_H */
