#ifndef MCI_H
#define MCI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MciStatus {
  MCI_STATUS_OK = 0,
  MCI_STATUS_NULL_POINTER = 1,
  MCI_STATUS_INVALID_ARGUMENT = 2,
  MCI_STATUS_NOT_CONVERGED = 3,
  MCI_STATUS_SINGULAR = 4,
  MCI_STATUS_INFEASIBLE = 5,
  MCI_STATUS_IO = 6,
  MCI_STATUS_SCHEMA_MISMATCH = 7,
  // The experiment ran and wrote its rows, but at least one row failed.
  MCI_STATUS_ROW_FAILURES = 8,
  MCI_STATUS_BUFFER_TOO_SMALL = 9,
  MCI_STATUS_INTERNAL = 10,
} MciStatus;

// Penalty `rho(x) = |x|^p / p`, or `|x|` for `p = 1`.
typedef struct MciPenalty MciPenalty;

// Result of a finite-width solve.
typedef struct MciSolution MciSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or an empty string. The
// pointer stays valid until the next call into this library on the thread.
const char *mci_last_error(void);

// Library version as a static NUL-terminated string.
const char *mci_version(void);

// # Safety
// `out` must be null or valid for one pointer write.
enum MciStatus mci_penalty_new(double p, struct MciPenalty **out);

// # Safety
// `pen` must be null or a handle from [`mci_penalty_new`] not yet freed.
void mci_penalty_free(struct MciPenalty *pen);

// Minimum-penalty interpolation of `y` by `(1/N) Phi a`.
//
// `phi` is `n x n_features` row-major and `y` has length `n`. The dual is
// solved by Newton's method for `p > 1`; `p = 1` goes to the simplex solver.
// A solve that stops short of tolerance still yields a handle, with
// `mci_solution_converged` false.
//
// # Safety
// `phi` must point to `n * n_features` doubles, `y` to `n` doubles, `pen`
// must be a live handle and `out` valid for one pointer write.
enum MciStatus mci_solve(const double *phi,
                         size_t n,
                         size_t n_features,
                         const double *y,
                         const struct MciPenalty *pen,
                         struct MciSolution **out);

// # Safety
// `sol` must be null or a handle from [`mci_solve`] not yet freed.
void mci_solution_free(struct MciSolution *sol);

// Summary scalars of a solution. Any output pointer may be null.
//
// # Safety
// `sol` must be a live handle; non-null outputs must be writable.
enum MciStatus mci_solution_info(const struct MciSolution *sol,
                                 bool *converged,
                                 size_t *iters,
                                 double *objective,
                                 double *residual);

// Copy the primal coefficients `a` (length `n_features`) into `buf`.
// With `buf` null only the length is reported through `len`.
//
// # Safety
// `sol` must be a live handle, `buf` null or valid for `cap` doubles, `len` null or writable.
enum MciStatus mci_solution_coefficients(const struct MciSolution *sol,
                                         double *buf,
                                         size_t cap,
                                         size_t *len);

// Copy the dual parameter `lambda` (length `n`) into `buf`. Fails with
// `MCI_STATUS_INVALID_ARGUMENT` for `p = 1`, which has no dual iterate.
//
// # Safety
// As for [`mci_solution_coefficients`].
enum MciStatus mci_solution_dual(const struct MciSolution *sol,
                                 double *buf,
                                 size_t cap,
                                 size_t *len);

// Run an experiment (`"solve"`, `"fig1"`, `"scaling"`, `"latent"` or `"audit"`)
// with an optional JSON config overlay and write `rows.csv` and `result.json`
// into `out_dir` (or the config's `output_path` when null). Returns
// `MCI_STATUS_ROW_FAILURES` when some rows failed but output was written.
//
// # Safety
// `experiment` must be a NUL-terminated string; `config_json` and `out_dir`
// null or NUL-terminated.
enum MciStatus mci_run_experiment(const char *experiment,
                                  const char *config_json,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCI_H */
