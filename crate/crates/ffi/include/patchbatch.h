#ifndef PATCHBATCH_H
#define PATCHBATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PbLossVariant {
  PB_LOSS_VARIANT_SPRING = 0,
  PB_LOSS_VARIANT_CENTRIFUGE = 1,
  PB_LOSS_VARIANT_SPRING_SD = 2,
  PB_LOSS_VARIANT_CENTRIFUGE_SD = 3,
} PbLossVariant;

/**
 * Result of every fallible call.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_DIMENSION = 3,
  PB_STATUS_DOMAIN = 4,
  PB_STATUS_DEGENERATE_BATCH = 5,
  PB_STATUS_CONFIG = 6,
  PB_STATUS_SAMPLING = 7,
  PB_STATUS_DIVERGED = 8,
  PB_STATUS_INTERPOLATION = 9,
  PB_STATUS_FORMAT = 10,
  PB_STATUS_PIPELINE = 11,
  PB_STATUS_IO = 12,
  PB_STATUS_STATE = 13,
  PB_STATUS_PANIC = 14,
} PbStatus;

/**
 * Opaque result of [`pb_flow_run`].
 */
typedef struct PbFlow PbFlow;

/**
 * Opaque trained encoder.
 */
typedef struct PbModel PbModel;

/**
 * Matching and interpolation settings for [`pb_flow_run`].
 */
typedef struct PbFlowConfig {
  size_t iterations;
  size_t search_radius;
  size_t cc_area_threshold;
  size_t border_margin;
  /**
   * 1, 2 or 4.
   */
  size_t downsample;
  size_t k;
  double kappa;
  /**
   * Forward and backward PatchMatch seeds are derived from this.
   */
  uint64_t seed;
} PbFlowConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pb_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *pb_last_error_message(void);

/**
 * Loss of a single pair. `label` is 0 for matching, 1 for non-matching.
 *
 * # Safety
 * `out_loss` must point to writable memory.
 */
enum PbStatus pb_pair_loss(enum PbLossVariant variant,
                           uint8_t label,
                           double distance,
                           double margin,
                           double *out_loss);

/**
 * Batch loss over `n` distances and 0/1 labels.
 *
 * # Safety
 * `distances` and `labels` must hold `n` elements; `out_loss` must be writable.
 */
enum PbStatus pb_batch_loss(enum PbLossVariant variant,
                            double margin,
                            double lambda,
                            const double *distances,
                            const uint8_t *labels,
                            size_t n,
                            double *out_loss);

/**
 * Gradient of the batch loss with respect to each of the `n` distances.
 *
 * # Safety
 * `distances`, `labels` and `out_grad` must hold `n` elements.
 */
enum PbStatus pb_batch_loss_grad(enum PbLossVariant variant,
                                 double margin,
                                 double lambda,
                                 const double *distances,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out_grad);

/**
 * ROC AUC of separating the classes by distance (smaller means matching).
 *
 * # Safety
 * `distances` and `labels` must hold `n` elements; `out_auc` must be writable.
 */
enum PbStatus pb_auc(const double *distances, const uint8_t *labels, size_t n, double *out_auc);

/**
 * Loads a PBNET1 checkpoint. Release with [`pb_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` must be writable.
 */
enum PbStatus pb_model_load(const char *path, struct PbModel **out_model);

/**
 * # Safety
 * `model` must come from [`pb_model_load`] and not be used afterwards. Null is ignored.
 */
void pb_model_free(struct PbModel *model);

/**
 * Side length of the square input patch and descriptor length.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum PbStatus pb_model_dims(const struct PbModel *model, size_t *out_patch, size_t *out_descriptor);

/**
 * Encodes `n` patches (`n × patch × patch`) into `n × descriptor` values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum PbStatus pb_model_encode(const struct PbModel *model,
                              const double *patches,
                              size_t n,
                              double *out_descriptors);

/**
 * Default matching and interpolation settings.
 */
struct PbFlowConfig pb_flow_config_default(void);

/**
 * Computes flow from `image1` to `image2` (both `height × width`, row-major
 * gray levels). Release the result with [`pb_flow_free`].
 *
 * # Safety
 * Images must hold `width * height` elements; `config` may be null for defaults.
 */
enum PbStatus pb_flow_run(const struct PbModel *model,
                          const double *image1,
                          const double *image2,
                          size_t width,
                          size_t height,
                          const struct PbFlowConfig *config,
                          struct PbFlow **out_flow);

/**
 * # Safety
 * `flow` must come from [`pb_flow_run`] and not be used afterwards. Null is ignored.
 */
void pb_flow_free(struct PbFlow *flow);

/**
 * Grid size and number of matches that survived filtering.
 *
 * # Safety
 * `flow` must be a live handle; the outputs must be writable.
 */
enum PbStatus pb_flow_dims(const struct PbFlow *flow,
                           size_t *out_width,
                           size_t *out_height,
                           size_t *out_matches);

/**
 * Copies the dense flow into two `width * height` buffers.
 *
 * # Safety
 * `u` and `v` must hold `width * height` elements.
 */
enum PbStatus pb_flow_dense(const struct PbFlow *flow, double *u, double *v);

/**
 * Copies the filtered integer matches; `valid` receives 0 or 1 per pixel.
 *
 * # Safety
 * `u`, `v` and `valid` must hold `width * height` elements.
 */
enum PbStatus pb_flow_sparse(const struct PbFlow *flow, int32_t *u, int32_t *v, uint8_t *valid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHBATCH_H */
