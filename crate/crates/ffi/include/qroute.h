#ifndef QROUTE_H
#define QROUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QrStatus {
  QR_STATUS_OK = 0,
  QR_STATUS_NULL_POINTER = 1,
  QR_STATUS_INVALID_UTF8 = 2,
  QR_STATUS_IO = 3,
  QR_STATUS_CHECKPOINT = 4,
  QR_STATUS_INVALID_ARGUMENT = 5,
  QR_STATUS_BUFFER_TOO_SMALL = 6,
  QR_STATUS_PANIC = 7,
} QrStatus;

/**
 * Opaque router handle.
 */
typedef struct QrRouter QrRouter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *qr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qr_version(void);

/**
 * Loads a router checkpoint and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer to
 * writable storage for one handle pointer.
 */
enum QrStatus qr_router_load(const char *path, struct QrRouter **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `router` must come from `qr_router_load` and not have been freed already.
 */
void qr_router_free(struct QrRouter *router);

/**
 * Number of candidate models, 0 for NULL.
 *
 * # Safety
 * `router` must be NULL or a live handle.
 */
size_t qr_router_num_models(const struct QrRouter *router);

/**
 * Hashed feature dimension, 0 for NULL.
 *
 * # Safety
 * `router` must be NULL or a live handle.
 */
size_t qr_router_dimension(const struct QrRouter *router);

/**
 * Model id at registry position `index`, or NULL when out of range. The
 * string lives as long as the handle.
 *
 * # Safety
 * `router` must be NULL or a live handle.
 */
const char *qr_router_model_id(const struct QrRouter *router, size_t index);

/**
 * Routes `query`. Writes the chosen registry index to `*out_index` and, when
 * `out_probs` is non-NULL, the full distribution to `out_probs[0..K]`.
 * `probs_len` must be at least K in that case.
 *
 * # Safety
 * `router` must be a live handle, `query` a NUL-terminated string,
 * `out_index` writable, and `out_probs` NULL or writable for `probs_len`
 * doubles.
 */
enum QrStatus qr_router_route(const struct QrRouter *router,
                              const char *query,
                              size_t *out_index,
                              double *out_probs,
                              size_t probs_len);

/**
 * `out[i] = softmax(rewards / temperature)[i]` for `len` entries.
 *
 * # Safety
 * `rewards` must be readable and `out` writable for `len` doubles.
 */
enum QrStatus qr_normalize_rewards(const double *rewards,
                                   size_t len,
                                   double temperature,
                                   double *out);

/**
 * Shannon entropy (nats) of a probability vector.
 *
 * # Safety
 * `probs` must be readable for `len` doubles and `out` writable.
 */
enum QrStatus qr_reward_entropy(const double *probs, size_t len, double *out);

/**
 * `KL(target ‖ pred)` with the router's probability floor.
 *
 * # Safety
 * `pred` and `target` must be readable for `len` doubles and `out` writable.
 */
enum QrStatus qr_kl_loss(const double *pred, const double *target, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QROUTE_H */
