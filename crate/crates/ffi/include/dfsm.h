#ifndef DFSM_H
#define DFSM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by all functions.
 */
typedef enum DfsmStatus {
  DFSM_STATUS_OK = 0,
  DFSM_STATUS_NULL_POINTER = 1,
  DFSM_STATUS_INVALID_ARGUMENT = 2,
  DFSM_STATUS_DIMENSION_MISMATCH = 3,
  DFSM_STATUS_IO = 4,
  DFSM_STATUS_PARSE = 5,
  DFSM_STATUS_DIVERGED = 6,
  DFSM_STATUS_NO_OUTPUTS = 7,
  DFSM_STATUS_BUFFER_TOO_SMALL = 8,
  DFSM_STATUS_PANIC = 9,
} DfsmStatus;

/*
 Opaque handle to a loaded model.
 */
typedef struct DfsmBundle DfsmBundle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next call on the same thread.
 */
const char *dfsm_last_error(void);

/*
 Loads the bundle directory `dir` into `*out`.

 # Safety
 `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DfsmStatus dfsm_bundle_load(const char *dir, struct DfsmBundle **out);

/*
 Releases a handle. Null is accepted.

 # Safety
 `bundle` must come from [`dfsm_bundle_load`] and not be used afterwards.
 */
void dfsm_bundle_free(struct DfsmBundle *bundle);

/*
 Writes the state, control and output counts and whether the model is
 scheduled on `w` (1) or not (0). Any output pointer may be null.

 # Safety
 Non-null pointers must be writable.
 */
enum DfsmStatus dfsm_bundle_dims(const struct DfsmBundle *bundle,
                                 size_t *n_states,
                                 size_t *n_controls,
                                 size_t *n_outputs,
                                 int32_t *scheduled);

/*
 State derivative `dx = f̂(u, x, w)`; `w` is ignored by unscheduled models.

 # Safety
 Each array must hold the stated number of doubles.
 */
enum DfsmStatus dfsm_eval(const struct DfsmBundle *bundle,
                          const double *u,
                          size_t n_u,
                          const double *x,
                          size_t n_x,
                          double w,
                          double *dx,
                          size_t n_dx);

/*
 Outputs `y = ĝ(u, x, w)`.

 # Safety
 Each array must hold the stated number of doubles.
 */
enum DfsmStatus dfsm_eval_outputs(const struct DfsmBundle *bundle,
                                  const double *u,
                                  size_t n_u,
                                  const double *x,
                                  size_t n_x,
                                  double w,
                                  double *y,
                                  size_t n_y);

/*
 RK4 simulation from `x0` on the grid `0, dt, …, t_final`.

 Controls are given at `n_knots` increasing `knot_times`, row-major
 (`n_knots × n_controls`), and interpolated linearly; `wind` holds one
 value per knot and may be null for unscheduled models. States are
 written row-major (`steps × n_states`) to `states`, which holds
 `capacity` rows; `*n_steps` receives the grid length, also when the
 buffer is too small.

 # Safety
 Each array must hold the stated number of doubles and `n_steps` must be
 writable.
 */
enum DfsmStatus dfsm_simulate(const struct DfsmBundle *bundle,
                              const double *x0,
                              size_t n_x,
                              const double *knot_times,
                              const double *controls,
                              size_t n_knots,
                              const double *wind,
                              double t_final,
                              double dt,
                              double *states,
                              size_t capacity,
                              size_t *n_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFSM_H */
