#ifndef SPREAD_HAWKES_H
#define SPREAD_HAWKES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ShStatus {
  SH_STATUS_OK = 0,
  SH_STATUS_NULL_POINTER = 1,
  SH_STATUS_INVALID_ARGUMENT = 2,
  SH_STATUS_IO = 3,
  SH_STATUS_DATA = 4,
  SH_STATUS_NUMERICAL = 5,
  SH_STATUS_BUFFER_TOO_SMALL = 6,
  SH_STATUS_PANIC = 7,
} ShStatus;

/**
 * Result of a maximum-likelihood fit.
 */
typedef struct ShFitReport ShFitReport;

/**
 * Parameter set of one model variant.
 */
typedef struct ShParams ShParams;

/**
 * Validated event stream.
 */
typedef struct ShStream ShStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next call on this thread.
 */
const char *sh_last_error(void);

/**
 * Library version, static storage.
 */
const char *sh_version(void);

/**
 * Frees a string returned by this library.
 */
void sh_string_free(char *s);

/**
 * Reads an event CSV written by the `preprocess` or `simulate` commands.
 */
enum ShStatus sh_stream_read(const char *path, struct ShStream **out);

enum ShStatus sh_stream_write(const struct ShStream *stream, const char *path);

enum ShStatus sh_stream_len(const struct ShStream *stream, size_t *out);

/**
 * Session length in seconds.
 */
enum ShStatus sh_stream_duration(const struct ShStream *stream, double *out);

void sh_stream_free(struct ShStream *stream);

/**
 * Builds a parameter set from `n` values in the variant's parameter order.
 */
enum ShStatus sh_params_new(const char *variant_name,
                            const double *values,
                            size_t n,
                            struct ShParams **out);

/**
 * Parses a parameter-set JSON or a fit report.
 */
enum ShStatus sh_params_from_json(const char *json, struct ShParams **out);

enum ShStatus sh_params_count(const struct ShParams *params, size_t *out);

/**
 * Copies the values into `buf`; `ShStatus::BufferTooSmall` if `cap` is less than the count.
 */
enum ShStatus sh_params_values(const struct ShParams *params, double *buf, size_t cap);

/**
 * Parameter set as JSON; free with `sh_string_free`.
 */
enum ShStatus sh_params_to_json(const struct ShParams *params, char **out);

void sh_params_free(struct ShParams *params);

/**
 * Log-likelihood of `stream` under `params`; `-inf` where some event has zero intensity.
 */
enum ShStatus sh_log_likelihood(const struct ShStream *stream,
                                const struct ShParams *params,
                                double *out);

/**
 * Simulates from the default book (100.00/100.01, one-tick jumps). Runs for
 * `horizon` seconds when it is positive, else until `n_events` events.
 */
enum ShStatus sh_simulate(const struct ShParams *params,
                          double horizon,
                          size_t n_events,
                          uint64_t seed,
                          struct ShStream **out);

/**
 * Fits `variant` by maximum likelihood.
 */
enum ShStatus sh_fit(const struct ShStream *stream,
                     const char *variant_name,
                     double beta0,
                     size_t restarts,
                     uint64_t seed,
                     struct ShFitReport **out);

/**
 * Copy of the fitted parameters; free with `sh_params_free`.
 */
enum ShStatus sh_fit_report_params(const struct ShFitReport *report, struct ShParams **out);

enum ShStatus sh_fit_report_log_likelihood(const struct ShFitReport *report, double *out);

/**
 * Full report as JSON; free with `sh_string_free`.
 */
enum ShStatus sh_fit_report_json(const struct ShFitReport *report, char **out);

void sh_fit_report_free(struct ShFitReport *report);

/**
 * Pooled time-change residuals, process by process. `*len` always receives the
 * residual count; pass `buf = NULL, cap = 0` to query it.
 */
enum ShStatus sh_residuals(const struct ShStream *stream,
                           const struct ShParams *params,
                           double *buf,
                           size_t cap,
                           size_t *len);

/**
 * Kolmogorov-Smirnov distance of the pooled residuals to Exp(1).
 */
enum ShStatus sh_ks_statistic(const struct ShStream *stream,
                              const struct ShParams *params,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPREAD_HAWKES_H */
