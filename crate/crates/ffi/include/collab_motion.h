#ifndef COLLAB_MOTION_H
#define COLLAB_MOTION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_IO = 3,
  CM_STATUS_PARSE = 4,
  CM_STATUS_INCOMPATIBLE = 5,
  CM_STATUS_NUMERIC = 6,
  CM_STATUS_DEGENERATE = 7,
  CM_STATUS_PANIC = 8,
} CmStatus;

typedef enum CmMetric {
  CM_METRIC_JME = 0,
  CM_METRIC_SME = 1,
  CM_METRIC_AME = 2,
} CmMetric;

/**
 * Loaded model; create with [`cm_model_load`], release with [`cm_model_free`].
 */
typedef struct CmModel CmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cm_last_error(void);

/**
 * Loads a checkpoint written by the training tool.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum CmStatus cm_model_load(const char *path, struct CmModel **out);

/**
 * # Safety
 * `model` must come from [`cm_model_load`] and not be used afterwards.
 */
void cm_model_free(struct CmModel *model);

/**
 * Joint count, frames predicted per call and minimum history length.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CmStatus cm_model_info(const struct CmModel *model,
                            size_t *joints,
                            size_t *step_len,
                            size_t *min_history);

/**
 * Forecasts `horizon` frames for both persons from `frames` observed
 * frames given in the couple-normalized frame.
 *
 * # Safety
 * Inputs hold `frames × J × 3` doubles, outputs `horizon × J × 3`.
 */
enum CmStatus cm_model_predict(const struct CmModel *model,
                               const double *leader,
                               const double *follower,
                               size_t frames,
                               size_t horizon,
                               double *out_leader,
                               double *out_follower);

/**
 * Maps both persons of every frame into that frame's leader-centred frame.
 *
 * # Safety
 * All arrays hold `frames × joints × 3` doubles.
 */
enum CmStatus cm_normalize_couple(const double *leader,
                                  const double *follower,
                                  size_t frames,
                                  size_t joints,
                                  double *out_leader,
                                  double *out_follower);

/**
 * Couple error of a prediction against ground truth, in millimetres.
 *
 * # Safety
 * All arrays hold `frames × joints × 3` doubles; `out` is valid.
 */
enum CmStatus cm_metric(enum CmMetric metric,
                        const double *pred_leader,
                        const double *pred_follower,
                        const double *gt_leader,
                        const double *gt_follower,
                        size_t frames,
                        size_t joints,
                        double *out);

/**
 * Nearest point to the back-projected rays of two pixel observations.
 * A camera is 21 doubles: intrinsics and world-to-camera rotation, both
 * row-major, then the translation.
 *
 * # Safety
 * `cam_*` hold 21 doubles, `pixel_*` 2, `out` 3.
 */
enum CmStatus cm_triangulate(const double *cam_a,
                             const double *pixel_a,
                             const double *cam_b,
                             const double *pixel_b,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLLAB_MOTION_H */
