#ifndef IBCLN_H
#define IBCLN_H

/* Generated by cbindgen from ibcln-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
typedef enum IbclnStatus {
  IBCLN_STATUS_OK = 0,
  // Bad arguments: null pointers, zero sizes, malformed buffers.
  IBCLN_STATUS_INVALID_ARGUMENT = 1,
  // Missing or unreadable files.
  IBCLN_STATUS_IO_ERROR = 2,
  // Internal failures during inference or metric computation.
  IBCLN_STATUS_RUNTIME_ERROR = 3,
} IbclnStatus;

// Opaque handle to a loaded generator checkpoint.
typedef struct IbclnModel IbclnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the most recent error message of this thread into `buffer`
// (NUL-terminated, truncated to `length` bytes). Returns the full message
// length in bytes, excluding the terminator.
//
// # Safety
// `buffer` must point to at least `length` writable bytes, or be null
// (in which case only the length is returned).
size_t ibcln_last_error_message(char *buffer, size_t length);

// Library version as a static NUL-terminated string.
const char *ibcln_version(void);

// Loads a checkpoint (stem, `.safetensors` or `.json` path) and stores the
// handle in `out_model`. The handle must be released with
// [`ibcln_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string and `out_model` a valid
// pointer.
enum IbclnStatus ibcln_model_load(const char *path, struct IbclnModel **out_model);

// Releases a model handle. Passing null is a no-op.
//
// # Safety
// `model` must be a handle obtained from [`ibcln_model_load`] that has not
// been freed already.
void ibcln_model_free(struct IbclnModel *model);

// Cascade depth the checkpoint was trained with.
//
// # Safety
// `model` must be a live handle from [`ibcln_model_load`].
uint32_t ibcln_model_time_steps(const struct IbclnModel *model);

// Removes reflections from an 8-bit interleaved RGB image. `out_rgb` receives
// the predicted transmission layer as the same-size 8-bit RGB buffer.
// `time_steps` of 0 uses the checkpoint's trained cascade depth.
//
// # Safety
// `model` must be a live handle; `rgb` must hold `height * width * 3`
// readable bytes and `out_rgb` the same number of writable bytes.
enum IbclnStatus ibcln_remove_reflection(const struct IbclnModel *model,
                                         const uint8_t *rgb,
                                         uint32_t height,
                                         uint32_t width,
                                         uint32_t time_steps,
                                         uint8_t *out_rgb);

// PSNR (dB) between two same-size 8-bit RGB buffers.
//
// # Safety
// `a` and `b` must hold `height * width * 3` readable bytes; `out_psnr`
// must be a valid pointer.
enum IbclnStatus ibcln_psnr(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t height,
                            uint32_t width,
                            double *out_psnr);

// SSIM between two same-size 8-bit RGB buffers (min side 11 pixels).
//
// # Safety
// `a` and `b` must hold `height * width * 3` readable bytes; `out_ssim`
// must be a valid pointer.
enum IbclnStatus ibcln_ssim(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t height,
                            uint32_t width,
                            double *out_ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IBCLN_H */
