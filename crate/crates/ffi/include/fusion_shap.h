#ifndef FUSION_SHAP_H
#define FUSION_SHAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  FS_STATUS_SHAPE = 3,
  FS_STATUS_INDEX = 4,
  FS_STATUS_DIMENSION = 5,
  FS_STATUS_RANK = 6,
  FS_STATUS_ENUMERATION_LIMIT = 7,
  FS_STATUS_CONFIG = 8,
  FS_STATUS_DEAD_COORDINATE = 9,
  FS_STATUS_CONTRACT = 10,
  FS_STATUS_FORMAT = 11,
  FS_STATUS_IO = 12,
  // An output buffer has the wrong length.
  FS_STATUS_BUFFER_SIZE = 13,
  FS_STATUS_PANIC = 14,
} FsStatus;

// How Shapley values are computed.
typedef enum FsEstimatorMode {
  // Exact up to 20 players, sampled beyond.
  FS_ESTIMATOR_MODE_AUTO = 0,
  FS_ESTIMATOR_MODE_EXACT = 1,
  FS_ESTIMATOR_MODE_SAMPLED = 2,
} FsEstimatorMode;

// Opaque codec handle.
typedef struct FsCodec FsCodec;

// Opaque classifier handle.
typedef struct FsModel FsModel;

typedef struct FsEstimator {
  enum FsEstimatorMode mode;
  size_t num_permutations;
  uint64_t seed;
} FsEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *fs_last_error_message(void);

// Stable identifier of a status, e.g. `"E_SHAPE"`. Static storage.
const char *fs_status_name(enum FsStatus status);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_model_load(const char *path, struct FsModel **out);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_model_from_json(const char *json, struct FsModel **out);

// # Safety
// `model` must come from this library and not be used afterwards. Null is
// accepted.
void fs_model_free(struct FsModel *model);

// Writes `[C, W, H]` to `out_shape`.
//
// # Safety
// `model` must be a live handle and `out_shape` point to 3 `size_t`.
enum FsStatus fs_model_input_shape(const struct FsModel *model, size_t *out_shape);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum FsStatus fs_model_num_classes(const struct FsModel *model, size_t *out);

// Class confidences of one image.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum FsStatus fs_model_forward(const struct FsModel *model,
                               const double *image,
                               size_t image_len,
                               double *out,
                               size_t out_len);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_codec_load(const char *path, struct FsCodec **out);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_codec_from_json(const char *json, struct FsCodec **out);

// # Safety
// `codec` must come from this library and not be used afterwards. Null is
// accepted.
void fs_codec_free(struct FsCodec *codec);

// # Safety
// `codec` must be a live handle and `out` a valid pointer.
enum FsStatus fs_codec_latent_dim(const struct FsCodec *codec, size_t *out);

// # Safety
// Buffers must hold the stated number of doubles.
enum FsStatus fs_codec_encode(const struct FsCodec *codec,
                              const double *image,
                              size_t image_len,
                              double *out_code,
                              size_t code_len);

// # Safety
// Buffers must hold the stated number of doubles.
enum FsStatus fs_codec_decode(const struct FsCodec *codec,
                              const double *code,
                              size_t code_len,
                              double *out_image,
                              size_t image_len);

// Pixel-group Shapley map over a `grid_cols × grid_rows` grid. A null
// `baseline` means all zeros.
//
// # Safety
// Buffers must hold the stated number of doubles; `baseline` may be null.
enum FsStatus fs_traditional_shap(const struct FsModel *model,
                                  const double *image,
                                  size_t image_len,
                                  size_t class_index,
                                  size_t grid_cols,
                                  size_t grid_rows,
                                  const double *baseline,
                                  struct FsEstimator estimator,
                                  double *out_map,
                                  size_t map_len);

// Manifold Shapley values redistributed onto pixels. Off-coalition
// coordinates take `baseline_code`, or the code of the codec's mean image
// when it is null. `out_phi` (nullable) receives the per-coordinate values.
//
// # Safety
// Buffers must hold the stated number of doubles; `baseline_code` and
// `out_phi` may be null.
enum FsStatus fs_manifold_shap(const struct FsModel *model,
                               const struct FsCodec *codec,
                               const double *image,
                               size_t image_len,
                               size_t class_index,
                               const double *baseline_code,
                               struct FsEstimator estimator,
                               double *out_map,
                               size_t map_len,
                               double *out_phi,
                               size_t phi_len);

// Grid search for the fusion coefficient. Writes the `[0, 1]` fused mask to
// `out_fused` and the chosen `α` to `out_alpha`.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum FsStatus fs_fuse(const struct FsModel *model,
                      const double *image,
                      size_t image_len,
                      const double *m_traditional,
                      const double *m_manifold,
                      size_t grid_steps,
                      double *out_fused,
                      size_t fused_len,
                      double *out_alpha);

// Any method by name (`traditional`, `manifold`, `fusion`, `grad`, `ig`,
// `smoothgrad`, `constant`) with default settings and the given seed.
// `codec` may be null for methods that do not need one. A negative
// `class_index` selects the top-1 class. The fused map is the unnormalized
// `α·M_manifold + (1−α)·M_traditional`.
//
// # Safety
// Buffers must hold the stated number of doubles; `method` must be a
// NUL-terminated string.
enum FsStatus fs_explain(const struct FsModel *model,
                         const struct FsCodec *codec,
                         const char *method,
                         const double *image,
                         size_t image_len,
                         int64_t class_index,
                         uint64_t seed,
                         double *out_map,
                         size_t map_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSION_SHAP_H */
