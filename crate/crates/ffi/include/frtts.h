#ifndef FRTTS_H
#define FRTTS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum FrttsStatus {
  FRTTS_STATUS_OK = 0,
  FRTTS_STATUS_NULL_POINTER = 1,
  FRTTS_STATUS_INVALID_UTF8 = 2,
  FRTTS_STATUS_CONFIG = 3,
  FRTTS_STATUS_ALIGNMENT = 4,
  FRTTS_STATUS_PARAMETER = 5,
  FRTTS_STATUS_SHAPE = 6,
  FRTTS_STATUS_NUMERIC = 7,
  FRTTS_STATUS_UNDEFINED = 8,
  FRTTS_STATUS_TRANSPORT = 9,
  FRTTS_STATUS_PROTOCOL = 10,
  FRTTS_STATUS_IO = 11,
  // Any other engine error.
  FRTTS_STATUS_ENGINE = 12,
  FRTTS_STATUS_BUFFER_TOO_SMALL = 13,
  FRTTS_STATUS_PANIC = 14,
} FrttsStatus;

// Which generation method [`frtts_run`] executes.
typedef enum FrttsMethod {
  FRTTS_METHOD_SCALED = 0,
  FRTTS_METHOD_BEST_OF_N = 1,
} FrttsMethod;

// A resolved run configuration.
typedef struct FrttsConfig FrttsConfig;

// The outcome of one prompt.
typedef struct FrttsRun FrttsRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread, or null. The
// pointer stays valid until the next call on the same thread.
const char *frtts_last_error_message(void);

// Library version as a static string.
const char *frtts_version(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void frtts_string_free(char *s);

// Default configuration.
//
// # Safety
// `out_config` must be a valid pointer.
enum FrttsStatus frtts_config_default(struct FrttsConfig **out_config);

// Parses and validates configuration text (`key = value` lines).
//
// # Safety
// `text_utf8` must be a nul-terminated string; `out_config` a valid pointer.
enum FrttsStatus frtts_config_parse(const char *text_utf8, struct FrttsConfig **out_config);

// # Safety
// `config` must come from this library and not have been freed. Null is ignored.
void frtts_config_free(struct FrttsConfig *config);

// Overrides the master seed.
//
// # Safety
// `config` must be a live handle.
enum FrttsStatus frtts_config_set_seed(struct FrttsConfig *config, uint64_t seed);

// Canonical text of the configuration; release with [`frtts_string_free`].
//
// # Safety
// `config` must be a live handle; `out_text` a valid pointer.
enum FrttsStatus frtts_config_canonical(const struct FrttsConfig *config, char **out_text);

// Hex SHA-256 of the configuration; release with [`frtts_string_free`].
//
// # Safety
// `config` must be a live handle; `out_text` a valid pointer.
enum FrttsStatus frtts_config_hash(const struct FrttsConfig *config, char **out_text);

// Runs one prompt with the configured oracle.
//
// # Safety
// `config` must be a live handle; `out_run` a valid pointer.
enum FrttsStatus frtts_run(const struct FrttsConfig *config,
                           uint64_t prompt_id,
                           enum FrttsMethod method,
                           struct FrttsRun **out_run);

// # Safety
// `run` must come from this library and not have been freed. Null is ignored.
void frtts_run_free(struct FrttsRun *run);

// # Safety
// `run` must be a live handle; `out_value` a valid pointer.
enum FrttsStatus frtts_run_best_score(const struct FrttsRun *run, double *out_value);

// # Safety
// `run` must be a live handle; `out_value` a valid pointer.
enum FrttsStatus frtts_run_mean_score(const struct FrttsRun *run, double *out_value);

// Oracle calls the run made and the calls the budget formula predicts.
//
// # Safety
// `run` must be a live handle; both out pointers valid.
enum FrttsStatus frtts_run_oracle_calls(const struct FrttsRun *run,
                                        uint64_t *out_calls,
                                        uint64_t *out_expected);

// Copies the final per-sample rewards into `buffer`. `out_len` receives
// the number of samples; with a short buffer nothing is copied and
// `BufferTooSmall` is returned.
//
// # Safety
// `run` must be a live handle; `buffer` valid for `capacity` writes.
enum FrttsStatus frtts_run_final_scores(const struct FrttsRun *run,
                                        double *buffer,
                                        size_t capacity,
                                        size_t *out_len);

// Copies the best final grid, row-major, into `buffer`; `out_len`
// receives `width * height`.
//
// # Safety
// `run` must be a live handle; `buffer` valid for `capacity` writes.
enum FrttsStatus frtts_run_best_grid(const struct FrttsRun *run,
                                     uint32_t *buffer,
                                     size_t capacity,
                                     size_t *out_len);

// The run as JSON; release with [`frtts_string_free`].
//
// # Safety
// `run` must be a live handle; `out_text` a valid pointer.
enum FrttsStatus frtts_run_to_json(const struct FrttsRun *run, char **out_text);

// Spearman rank correlation of two length-`len` arrays.
//
// # Safety
// `xs` and `ys` valid for `len` reads; `out_rho` a valid pointer.
enum FrttsStatus frtts_spearman(const double *xs, const double *ys, size_t len, double *out_rho);

// Mean row entropy, in bits, of a row-stochastic `size x size` matrix.
//
// # Safety
// `weights` valid for `size * size` reads; `out_bits` a valid pointer.
enum FrttsStatus frtts_attention_entropy(const double *weights, size_t size, double *out_bits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRTTS_H */
