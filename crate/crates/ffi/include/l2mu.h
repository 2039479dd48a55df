#ifndef L2MU_H
#define L2MU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
enum L2muStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  L2muStatus_Ok = 0,
  L2muStatus_InvalidArgument = 1,
  L2muStatus_IoOrFormat = 2,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum L2muStatus L2muStatus;
#else
typedef int32_t L2muStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque model handle.
 */
typedef struct L2muModel L2muModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file and writes a fresh handle to `out_model`.
 * On failure the handle is left null.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out_model` a valid
 * pointer. The handle must be released with [`l2mu_model_free`].
 */
L2muStatus l2mu_model_load(const char *path, struct L2muModel **out_model);

/**
 * Releases a handle returned by [`l2mu_model_load`]. Null is a no-op.
 *
 * # Safety
 * `model` must be a pointer from [`l2mu_model_load`] not yet freed.
 */
void l2mu_model_free(struct L2muModel *model);

/**
 * Number of output classes (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t l2mu_model_num_classes(const struct L2muModel *model);

/**
 * Number of input channels per timestep (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t l2mu_model_num_channels(const struct L2muModel *model);

/**
 * Timesteps per window in the dataset pipeline (2 s at 20 Hz).
 */
uint32_t l2mu_window_steps(void);

/**
 * Runs one inference on a row-major steps×channels window and writes the
 * class logits to `logits_out` (length `logits_len` must equal the class
 * count).
 *
 * # Safety
 * `model` must be a live handle, `window` must point to
 * `steps * channels` readable floats and `logits_out` to `logits_len`
 * writable floats.
 */
L2muStatus l2mu_model_forward(const struct L2muModel *model,
                              const float *window,
                              uintptr_t steps,
                              uintptr_t channels,
                              float *logits_out,
                              uintptr_t logits_len);

/**
 * Runs one inference and writes the predicted class index (argmax of the
 * logits, ties toward the lowest class).
 *
 * # Safety
 * As for [`l2mu_model_forward`]; `class_out` must be writable.
 */
L2muStatus l2mu_model_predict(const struct L2muModel *model,
                              const float *window,
                              uintptr_t steps,
                              uintptr_t channels,
                              uint32_t *class_out);

/**
 * Static description of a status code.
 */
const char *l2mu_status_message(L2muStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* L2MU_H */
