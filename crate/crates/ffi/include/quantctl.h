#ifndef QUANTCTL_H
#define QUANTCTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_ARGUMENT = 2,
  QC_STATUS_PARSE = 3,
  QC_STATUS_VALIDATION = 4,
  QC_STATUS_SYNC_LOST = 5,
  QC_STATUS_RUNTIME = 6,
  QC_STATUS_BUFFER_TOO_SMALL = 7,
  QC_STATUS_PANIC = 8,
} QcStatus;

/**
 * Closed loop with its own generator.
 */
typedef struct QcClosedLoop QcClosedLoop;

typedef struct QcDecoder QcDecoder;

typedef struct QcEncoder QcEncoder;

/**
 * Loaded experiment: plant, scheme and run settings.
 */
typedef struct QcExperiment QcExperiment;

typedef struct QcTrialResult {
  double avg_cost;
  double optimum;
  double gap;
  double std_error;
  uint64_t steps;
  /**
   * 1 if the stopping rule fired, 0 if the step cap was hit.
   */
  uint8_t stopped_by_rule;
  double overflow_fraction;
} QcTrialResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length without the NUL.
 *
 * # Safety
 *
 * `buf` must be null or point to `len` writable bytes.
 */
size_t qc_last_error(char *buf, size_t len);

/**
 * Bytes in one channel message for a state of dimension `dim`.
 */
size_t qc_wire_len(size_t dim);

/**
 * Parses a TOML experiment configuration.
 *
 * # Safety
 *
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_experiment_from_toml(const char *toml, struct QcExperiment **out);

/**
 * Loads a shipped preset: `"reproduce-paper"` or `"smoke"`.
 *
 * # Safety
 *
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_experiment_preset(const char *name, struct QcExperiment **out);

/**
 * # Safety
 *
 * `exp` must be null or a handle from this library not yet freed.
 */
void qc_experiment_free(struct QcExperiment *exp);

/**
 * State dimension of the plant.
 *
 * # Safety
 *
 * `exp` must be a live handle and `dim` writable.
 */
enum QcStatus qc_experiment_dim(const struct QcExperiment *exp, size_t *dim);

/**
 * Checks every scheme condition for `fixed_bins`. Writes 1 to `passed` if
 * all hold; the report is left in the last-error slot either way.
 *
 * # Safety
 *
 * `exp` must be a live handle and `passed` writable.
 */
enum QcStatus qc_experiment_validate(const struct QcExperiment *exp,
                                     uint32_t fixed_bins,
                                     uint8_t *passed);

/**
 * Runs one trial of the experiment at `fixed_bins` with its stopping rule.
 *
 * # Safety
 *
 * `exp` must be a live handle and `out` writable.
 */
enum QcStatus qc_run_trial(const struct QcExperiment *exp,
                           uint32_t fixed_bins,
                           uint64_t seed,
                           uint64_t stream,
                           struct QcTrialResult *out);

/**
 * Creates a closed loop from the experiment's initial condition.
 *
 * # Safety
 *
 * `exp` must be a live handle and `out` writable.
 */
enum QcStatus qc_loop_new(const struct QcExperiment *exp,
                          uint32_t fixed_bins,
                          uint64_t seed,
                          uint64_t stream,
                          struct QcClosedLoop **out);

/**
 * # Safety
 *
 * `lp` must be null or a handle from this library not yet freed.
 */
void qc_loop_free(struct QcClosedLoop *lp);

/**
 * Enables the per-step check of the pipeline against the controlled
 * dynamics (off by default).
 *
 * # Safety
 *
 * `lp` must be a live handle.
 */
enum QcStatus qc_loop_set_verify(struct QcClosedLoop *lp, uint8_t on);

/**
 * Advances one step with sampled noise. `cost` receives `xᵀQx` of the
 * state before the step; it may be null.
 *
 * # Safety
 *
 * `lp` must be a live handle; `cost` null or writable.
 */
enum QcStatus qc_loop_step(struct QcClosedLoop *lp, double *cost);

/**
 * Advances one step with caller-supplied noise `w[0..len]`.
 *
 * # Safety
 *
 * `lp` must be a live handle, `w` readable for `len` values and `cost`
 * null or writable.
 */
enum QcStatus qc_loop_step_with_noise(struct QcClosedLoop *lp,
                                      const double *w,
                                      size_t len,
                                      double *cost);

/**
 * Copies the current state into `x[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 *
 * `lp` must be a live handle and `x` writable for `len` values.
 */
enum QcStatus qc_loop_state(const struct QcClosedLoop *lp, double *x, size_t len);

/**
 * Current adaptive bin size and its exponent; either pointer may be null.
 *
 * # Safety
 *
 * `lp` must be a live handle; outputs null or writable.
 */
enum QcStatus qc_loop_bin_size(const struct QcClosedLoop *lp, double *delta, int32_t *exponent);

/**
 * Steps taken so far.
 *
 * # Safety
 *
 * `lp` must be a live handle and `t` writable.
 */
enum QcStatus qc_loop_time(const struct QcClosedLoop *lp, uint64_t *t);

/**
 * Encoder at the scheme's initial bin size.
 *
 * # Safety
 *
 * `exp` must be a live handle and `out` writable.
 */
enum QcStatus qc_encoder_new(const struct QcExperiment *exp,
                             uint32_t fixed_bins,
                             struct QcEncoder **out);

/**
 * # Safety
 *
 * `enc` must be null or a handle from this library not yet freed.
 */
void qc_encoder_free(struct QcEncoder *enc);

/**
 * Encodes `x[0..len]` and writes the wire bytes (`qc_wire_len(len)` of
 * them) to `buf`.
 *
 * # Safety
 *
 * `enc` must be a live handle, `x` readable for `len` values and `buf`
 * writable for `buf_len` bytes.
 */
enum QcStatus qc_encoder_encode(struct QcEncoder *enc,
                                const double *x,
                                size_t len,
                                uint8_t *buf,
                                size_t buf_len);

/**
 * # Safety
 *
 * `enc` must be a live handle and `exponent` writable.
 */
enum QcStatus qc_encoder_exponent(const struct QcEncoder *enc, int32_t *exponent);

/**
 * Decoder/controller at the scheme's initial bin size.
 *
 * # Safety
 *
 * `exp` must be a live handle and `out` writable.
 */
enum QcStatus qc_decoder_new(const struct QcExperiment *exp,
                             uint32_t fixed_bins,
                             struct QcDecoder **out);

/**
 * # Safety
 *
 * `dec` must be null or a handle from this library not yet freed.
 */
void qc_decoder_free(struct QcDecoder *dec);

/**
 * Decodes one wire message and writes the control `u` to `u[0..len]`.
 * On error the decoder state is unchanged.
 *
 * # Safety
 *
 * `dec` must be a live handle, `buf` readable for `buf_len` bytes and `u`
 * writable for `len` values.
 */
enum QcStatus qc_decoder_decode(struct QcDecoder *dec,
                                const uint8_t *buf,
                                size_t buf_len,
                                double *u,
                                size_t len);

/**
 * # Safety
 *
 * `dec` must be a live handle and `exponent` writable.
 */
enum QcStatus qc_decoder_exponent(const struct QcDecoder *dec, int32_t *exponent);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUANTCTL_H */
