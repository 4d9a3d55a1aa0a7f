/* C interface for the innbound interval-reachability library. */

#ifndef INNBOUND_FFI_H
#define INNBOUND_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum IbStatus {
  /**
   * Success.
   */
  IB_STATUS_OK = 0,
  /**
   * File I/O or model-format failure.
   */
  IB_STATUS_IO = 1,
  /**
   * The network admits no well-posedness certificate.
   */
  IB_STATUS_NO_CERTIFICATE = 2,
  /**
   * Null pointer, bad dimension, or otherwise invalid argument.
   */
  IB_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The fixed-point solver failed to converge.
   */
  IB_STATUS_SOLVER_FAILURE = 4,
  /**
   * Unexpected internal failure.
   */
  IB_STATUS_INTERNAL = 5,
} IbStatus;

/**
 * Opaque model handle: the loaded network, its implicit reading, and the
 * well-posedness certificate when one exists.
 */
typedef struct IbModel IbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model JSON file and prepares it for analysis. Returns null on
 * failure; the reason is available through [`ib_last_error`]. A model that
 * loads but cannot be certified is still usable for [`ib_forward`]; bounding
 * calls on it return [`IbStatus::NoCertificate`].
 *
 * # Safety
 * `path` must point to a NUL-terminated string valid for the duration of the
 * call.
 */
struct IbModel *ib_model_load(const char *path);

/**
 * Releases a handle returned by [`ib_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be a pointer returned by [`ib_model_load`] that has not been
 * freed yet.
 */
void ib_model_free(struct IbModel *model);

/**
 * Model kind: 0 implicit, 1 feedforward, 2 weight-tied, -1 on null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int32_t ib_model_kind(const struct IbModel *model);

/**
 * Input dimension of the model (0 on null).
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t ib_model_input_dim(const struct IbModel *model);

/**
 * Output dimension of the model (0 on null).
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t ib_model_output_dim(const struct IbModel *model);

/**
 * Whether a well-posedness certificate exists for the model.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
bool ib_model_certified(const struct IbModel *model);

/**
 * Evaluates the network at a point: solves the hidden fixed point and writes
 * the `output_dim` outputs into `out`.
 *
 * # Safety
 * `model` must be a live handle; `x` must point to `x_len` readable doubles
 * and `out` to `out_len` writable doubles.
 */
enum IbStatus ib_forward(const struct IbModel *model,
                         const double *x,
                         size_t x_len,
                         double *out,
                         size_t out_len);

/**
 * Bounds the network outputs over the infinity-norm ball of radius `eps`
 * around `center`, writing componentwise lower and upper bounds.
 *
 * # Safety
 * `model` must be a live handle; `center` must point to `center_len`
 * readable doubles; `out_lo` and `out_hi` must each point to `out_len`
 * writable doubles.
 */
enum IbStatus ib_reach_box(const struct IbModel *model,
                           const double *center,
                           size_t center_len,
                           double eps,
                           double *out_lo,
                           double *out_hi,
                           size_t out_len);

/**
 * Certifies that the predicted class stays `label` over the radius-`eps`
 * ball around `x`. Writes the margin lower bounds (entry `label` is zero)
 * and the verdict.
 *
 * # Safety
 * `model` must be a live handle; `x` must point to `x_len` readable doubles;
 * `out_margin` must point to `margin_len` writable doubles and
 * `out_certified` to a writable bool.
 */
enum IbStatus ib_certify(const struct IbModel *model,
                         const double *x,
                         size_t x_len,
                         size_t label,
                         double eps,
                         double *out_margin,
                         size_t margin_len,
                         bool *out_certified);

/**
 * Writes the certified global Lipschitz upper bound of the input-output map.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable double.
 */
enum IbStatus ib_lipschitz_bound(const struct IbModel *model, double *out);

/**
 * Copies the most recent error message on this thread into `buf` (truncated
 * to `cap - 1` bytes, always NUL-terminated when `cap > 0`) and returns the
 * full message length in bytes.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null with `cap == 0`.
 */
size_t ib_last_error(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INNBOUND_FFI_H */
