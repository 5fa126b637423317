#ifndef NEUROGPT_H
#define NEUROGPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NgStatus {
  NG_STATUS_OK = 0,
  NG_STATUS_NULL_POINTER = 1,
  NG_STATUS_INVALID_ARGUMENT = 2,
  NG_STATUS_IO = 3,
  NG_STATUS_FORMAT = 4,
  NG_STATUS_CONFIG = 5,
  NG_STATUS_NUMERICAL = 6,
  NG_STATUS_FINGERPRINT_MISMATCH = 7,
  NG_STATUS_BUFFER_TOO_SMALL = 8,
  NG_STATUS_PANIC = 9,
} NgStatus;

/**
 * A model checkpoint.
 */
typedef struct NgCheckpoint NgCheckpoint;

/**
 * A multichannel recording.
 */
typedef struct NgRecording NgRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ng_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ng_version(void);

/**
 * Builds a recording from row-major `data` (`n_channels * n_samples`) and
 * `n_channels` channel labels.
 *
 * # Safety
 * `labels` must point to `n_channels` NUL-terminated strings and `data` to
 * `n_channels * n_samples` doubles.
 */
enum NgStatus ng_recording_new(const char *const *labels,
                               size_t n_channels,
                               const double *data,
                               size_t n_samples,
                               double sample_rate_hz,
                               struct NgRecording **out);

/**
 * Reads an eegbin file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NgStatus ng_recording_load(const char *path, struct NgRecording **out);

/**
 * Writes an eegbin file.
 *
 * # Safety
 * `rec` must come from this library; `path` must be NUL-terminated.
 */
enum NgStatus ng_recording_save(const struct NgRecording *rec, const char *path);

/**
 * Number of channels, 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or come from this library.
 */
size_t ng_recording_n_channels(const struct NgRecording *rec);

/**
 * Samples per channel, 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or come from this library.
 */
size_t ng_recording_n_samples(const struct NgRecording *rec);

/**
 * Sample rate in Hz, 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or come from this library.
 */
double ng_recording_sample_rate(const struct NgRecording *rec);

/**
 * Copies the row-major samples into `buf`, which must hold
 * `n_channels * n_samples` doubles.
 *
 * # Safety
 * `rec` must come from this library and `buf` hold `len` doubles.
 */
enum NgStatus ng_recording_copy_data(const struct NgRecording *rec, double *buf, size_t len);

/**
 * Runs the default cleaning chain (22-channel montage, 60 Hz notch,
 * 0.5-100 Hz band, 250 Hz, z-scored) and returns a new recording.
 *
 * # Safety
 * `rec` must come from this library and `out` be writable.
 */
enum NgStatus ng_recording_preprocess(const struct NgRecording *rec, struct NgRecording **out);

/**
 * Releases a recording. Null is ignored.
 *
 * # Safety
 * `rec` must be null or come from this library, and not be used afterwards.
 */
void ng_recording_free(struct NgRecording *rec);

/**
 * Reads a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum NgStatus ng_checkpoint_load(const char *path, struct NgCheckpoint **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `ck` must come from this library; `path` must be NUL-terminated.
 */
enum NgStatus ng_checkpoint_save(const struct NgCheckpoint *ck, const char *path);

/**
 * Training step at which the checkpoint was written, 0 for null.
 *
 * # Safety
 * `ck` must be null or come from this library.
 */
uint64_t ng_checkpoint_step(const struct NgCheckpoint *ck);

/**
 * Number of parameter tensors, 0 for null.
 *
 * # Safety
 * `ck` must be null or come from this library.
 */
size_t ng_checkpoint_n_params(const struct NgCheckpoint *ck);

/**
 * Copies the 32-byte architecture fingerprint into `out`.
 *
 * # Safety
 * `ck` must come from this library and `out` hold 32 bytes.
 */
enum NgStatus ng_checkpoint_fingerprint(const struct NgCheckpoint *ck, uint8_t *out);

/**
 * Token dimension of the checkpoint's encoder, 0 for null.
 *
 * # Safety
 * `ck` must be null or come from this library.
 */
size_t ng_checkpoint_token_dim(const struct NgCheckpoint *ck);

/**
 * Chunks per sequence of the checkpoint's architecture, 0 for null.
 *
 * # Safety
 * `ck` must be null or come from this library.
 */
size_t ng_checkpoint_n_chunks(const struct NgCheckpoint *ck);

/**
 * Encodes the leading chunk sequence of `rec` with the checkpoint's
 * encoder. Writes `n_chunks * token_dim` floats to `tokens` (zero rows for
 * padded chunks) and the number of real chunks to `n_real`.
 *
 * # Safety
 * Handles must come from this library; `tokens` must hold `len` floats and
 * `n_real` be writable.
 */
enum NgStatus ng_checkpoint_embed(const struct NgCheckpoint *ck,
                                  const struct NgRecording *rec,
                                  float *tokens,
                                  size_t len,
                                  size_t *n_real);

/**
 * Releases a checkpoint. Null is ignored.
 *
 * # Safety
 * `ck` must be null or come from this library, and not be used afterwards.
 */
void ng_checkpoint_free(struct NgCheckpoint *ck);

/**
 * Samples spanned by `n_chunks` chunks of `chunk_len_s` seconds with the
 * given fractional overlap.
 *
 * # Safety
 * `out` must be writable.
 */
enum NgStatus ng_chunk_required_span(size_t n_chunks,
                                     double chunk_len_s,
                                     double overlap_ratio,
                                     double sample_rate_hz,
                                     size_t *out);

/**
 * Mean over `k` rows of the squared distance between `pred` and `targets`,
 * both row-major `k x dim`.
 *
 * # Safety
 * `pred` and `targets` must hold `k * dim` doubles; `out` must be writable.
 */
enum NgStatus ng_causal_reconstruction_loss(const double *pred,
                                            const double *targets,
                                            size_t k,
                                            size_t dim,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROGPT_H */
