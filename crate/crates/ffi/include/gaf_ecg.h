#ifndef GAF_ECG_H
#define GAF_ECG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of pixels in one encoded image (128 x 128).
 */
#define GAF_ECG_IMAGE_PIXELS 16384

/**
 * Number of class scores produced by a prediction.
 */
#define GAF_ECG_CLASSES 2

typedef enum GafEcgStatus {
  GAF_ECG_STATUS_OK = 0,
  GAF_ECG_STATUS_NULL_POINTER = 1,
  GAF_ECG_STATUS_INVALID_ARGUMENT = 2,
  GAF_ECG_STATUS_BUFFER_TOO_SMALL = 3,
  GAF_ECG_STATUS_DEGENERATE_INPUT = 4,
  GAF_ECG_STATUS_IO = 5,
  GAF_ECG_STATUS_CHECKPOINT = 6,
  GAF_ECG_STATUS_NUMERICAL = 7,
  GAF_ECG_STATUS_UNDEFINED_METRIC = 8,
  GAF_ECG_STATUS_UNSUPPORTED_RATE = 9,
  GAF_ECG_STATUS_PANIC = 10,
} GafEcgStatus;

typedef enum GafEcgKind {
  GAF_ECG_KIND_GASF = 0,
  GAF_ECG_KIND_GADF = 1,
} GafEcgKind;

/**
 * Opaque CNN handle.
 */
typedef struct GafEcgModel GafEcgModel;

/**
 * Percentages computed from confusion counts.
 */
typedef struct GafEcgMetrics {
  double accuracy;
  double sensitivity;
  double specificity;
} GafEcgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gaf_ecg_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t gaf_ecg_last_error(char *buf, size_t len);

/**
 * Creates a freshly initialized full-size network.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum GafEcgStatus gaf_ecg_model_new(uint64_t seed, struct GafEcgModel **out);

/**
 * Loads a checkpoint written by the training pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for one pointer write.
 */
enum GafEcgStatus gaf_ecg_model_load(const char *path, struct GafEcgModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum GafEcgStatus gaf_ecg_model_save(const struct GafEcgModel *model, const char *path);

/**
 * Classifies one 128x128 image. Writes the two sigmoid scores (healthy, MI)
 * to `scores` and the predicted class (0 healthy, 1 MI) to `predicted_class`.
 * Safe to call concurrently on the same model.
 *
 * # Safety
 * `pixels` valid for `len` reads, `scores` for 2 writes, `predicted_class`
 * for one write; `model` must come from this library.
 */
enum GafEcgStatus gaf_ecg_model_predict(const struct GafEcgModel *model,
                                        const uint8_t *pixels,
                                        size_t len,
                                        double *scores,
                                        int32_t *predicted_class);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from this library and not be used afterwards.
 */
void gaf_ecg_model_free(struct GafEcgModel *model);

/**
 * Encodes a beat (at least 128 samples; 651 in the standard pipeline) as an
 * 8-bit GASF or GADF image of `GAF_ECG_IMAGE_PIXELS` bytes.
 *
 * # Safety
 * `beat` valid for `len` reads, `out` for `out_len` writes.
 */
enum GafEcgStatus gaf_ecg_encode_beat(const double *beat,
                                      size_t len,
                                      enum GafEcgKind kind,
                                      uint8_t *out,
                                      size_t out_len);

/**
 * Wavelet denoising (db4, 9 levels where the length allows). `out` receives
 * `len` samples and may alias `signal`.
 *
 * # Safety
 * `signal` valid for `len` reads, `out` for `len` writes.
 */
enum GafEcgStatus gaf_ecg_denoise(const double *signal, size_t len, double *out);

/**
 * Pan-Tompkins R-peak detection on a 1000 Hz signal. The number of peaks
 * is always written to `count`; if it exceeds `capacity` nothing is copied
 * and `GAF_ECG_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `signal` valid for `len` reads, `peaks` for `capacity` writes, `count`
 * for one write.
 */
enum GafEcgStatus gaf_ecg_pan_tompkins(const double *signal,
                                       size_t len,
                                       double sampling_rate,
                                       size_t *peaks,
                                       size_t capacity,
                                       size_t *count);

/**
 * Accuracy, sensitivity and specificity (percent) with MI as the positive class.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum GafEcgStatus gaf_ecg_metrics(uint64_t tp,
                                  uint64_t tn,
                                  uint64_t fp,
                                  uint64_t fn_,
                                  struct GafEcgMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAF_ECG_H */
