#ifndef GWSOS_H
#define GWSOS_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GwsosHierarchy {
  GWSOS_HIERARCHY_SCHMUDGEN = 0,
  GWSOS_HIERARCHY_PUTINAR = 1,
  GWSOS_HIERARCHY_COMBINED = 2,
  GWSOS_HIERARCHY_FIRST_LEVEL = 3,
} GwsosHierarchy;

typedef enum GwsosSolveStatus {
  GWSOS_SOLVE_STATUS_OPTIMAL = 0,
  GWSOS_SOLVE_STATUS_MAX_ITERATIONS = 1,
  GWSOS_SOLVE_STATUS_INFEASIBLE = 2,
  GWSOS_SOLVE_STATUS_NUMERICAL_FAILURE = 3,
} GwsosSolveStatus;

typedef enum GwsosStatus {
  GWSOS_STATUS_OK = 0,
  GWSOS_STATUS_NULL_POINTER = 1,
  GWSOS_STATUS_INVALID_ARGUMENT = 2,
  GWSOS_STATUS_DIMENSION = 3,
  GWSOS_STATUS_CAPACITY = 4,
  GWSOS_STATUS_SOLVER = 5,
  GWSOS_STATUS_FEASIBILITY = 6,
  GWSOS_STATUS_BUFFER_TOO_SMALL = 7,
  GWSOS_STATUS_PANIC = 8,
  GWSOS_STATUS_IO = 9,
} GwsosStatus;

// Opaque result of [`gwsos_solve`].
typedef struct GwsosSolution GwsosSolution;

// Opaque metric measure space.
typedef struct GwsosSpace GwsosSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gwsos_version(void);

// Copies the calling thread's last error message into `buf` (always
// NUL-terminated when `len > 0`) and stores the full message length,
// excluding the terminator, in `needed` when it is non-null.
//
// # Safety
// `buf` must be valid for `len` bytes or null with `len == 0`.
enum GwsosStatus gwsos_last_error(char *buf, size_t len, size_t *needed);

// Space from a row-major `m x m` distance matrix. `weights` may be null for
// uniform weights.
//
// # Safety
// `distances` must hold `m * m` doubles, `weights` (if non-null) `m`, and
// `out` must be a valid pointer.
enum GwsosStatus gwsos_space_from_distances(const double *distances,
                                            const double *weights_ptr,
                                            size_t m,
                                            struct GwsosSpace **out);

// Space from `m` points of dimension `dim`, stored row-major, with
// Euclidean distances.
//
// # Safety
// `points` must hold `m * dim` doubles, `weights` (if non-null) `m`, and
// `out` must be a valid pointer.
enum GwsosStatus gwsos_space_from_points(const double *points,
                                         const double *weights_ptr,
                                         size_t m,
                                         size_t dim,
                                         struct GwsosSpace **out);

// Number of atoms kept after loading (zero-mass atoms are dropped).
//
// # Safety
// `space` must come from a constructor in this library and not be freed.
size_t gwsos_space_size(const struct GwsosSpace *space);

// # Safety
// `space` must be null or a live handle; it must not be used afterwards.
void gwsos_space_free(struct GwsosSpace *space);

// Builds, solves and certifies the level-`level` relaxation of the problem
// with cost `|d_X^q - d_Y^q|^p`.
//
// # Safety
// `x` and `y` must be live handles and `out` a valid pointer.
enum GwsosStatus gwsos_solve(const struct GwsosSpace *x,
                             const struct GwsosSpace *y,
                             double p,
                             double q,
                             enum GwsosHierarchy hierarchy,
                             size_t level,
                             double tol,
                             size_t max_iter,
                             struct GwsosSolution **out);

// # Safety
// `sol` must be null or a live handle; it must not be used afterwards.
void gwsos_solution_free(struct GwsosSolution *sol);

// Scalar fields of a solution. Ratios without a value are NaN; the error
// ratio is NaN on exact-zero instances and the upper bound is NaN when no
// coupling could be extracted. Any out pointer may be null.
//
// # Safety
// `sol` must be a live handle; non-null out pointers must be valid.
enum GwsosStatus gwsos_solution_summary(const struct GwsosSolution *sol,
                                        enum GwsosSolveStatus *status,
                                        size_t *iterations,
                                        double *lower_bound,
                                        double *upper_bound,
                                        double *eig_ratio,
                                        double *err_ratio,
                                        bool *solved);

// Copies the row-major `m x n` coupling into `buf`. Fails with
// `BufferTooSmall` when `len < m * n`; `needed` receives `m * n` (0 when no
// coupling was extracted) if non-null.
//
// # Safety
// `sol` must be a live handle and `buf` valid for `len` doubles.
enum GwsosStatus gwsos_solution_coupling(const struct GwsosSolution *sol,
                                         double *buf,
                                         size_t len,
                                         size_t *needed);

// Best feasible objective found by the upper-bound oracle. `coupling` may
// be null; otherwise it must hold `m * n` doubles and receives the plan.
//
// # Safety
// `x`, `y` must be live handles, `value` valid, and `coupling` null or
// valid for `m * n` doubles.
enum GwsosStatus gwsos_oracle(const struct GwsosSpace *x,
                              const struct GwsosSpace *y,
                              double p,
                              double q,
                              size_t starts,
                              uint64_t seed,
                              double *value,
                              double *coupling);

// Distortion distance `Delta_{p,level}(X, Y)` with `q = 1`.
//
// # Safety
// `x`, `y` must be live handles and `out` valid.
enum GwsosStatus gwsos_distance(const struct GwsosSpace *x,
                                const struct GwsosSpace *y,
                                double p,
                                size_t level,
                                enum GwsosHierarchy hierarchy,
                                double *out);

// Parses a hierarchy name (`schmudgen`, `putinar`, `combined`,
// `first-level`).
//
// # Safety
// `name` must be a valid NUL-terminated string and `out` valid.
enum GwsosStatus gwsos_hierarchy_from_name(const char *name, enum GwsosHierarchy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GWSOS_H */
