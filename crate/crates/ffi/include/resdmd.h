#ifndef RESDMD_H
#define RESDMD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every function.
typedef enum ResdmdStatus {
  RESDMD_STATUS_OK = 0,
  RESDMD_STATUS_NULL_POINTER = 1,
  RESDMD_STATUS_INVALID_ARGUMENT = 2,
  RESDMD_STATUS_SHAPE = 3,
  RESDMD_STATUS_RANK = 4,
  RESDMD_STATUS_NUMERICAL = 5,
  RESDMD_STATUS_DEGENERATE = 6,
  RESDMD_STATUS_UNSUPPORTED = 7,
  RESDMD_STATUS_PANIC = 99,
} ResdmdStatus;

typedef enum ResdmdKernel {
  RESDMD_KERNEL_GAUSSIAN = 0,
  RESDMD_KERNEL_LAPLACIAN = 1,
  RESDMD_KERNEL_LORENTZIAN = 2,
  RESDMD_KERNEL_POLYNOMIAL = 3,
} ResdmdKernel;

// Opaque exact DMD result.
typedef struct ResdmdExactDmd ResdmdExactDmd;

// Opaque kernel EDMD result.
typedef struct ResdmdKedmd ResdmdKedmd;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Pointer to a NUL-terminated description of the last error on this thread
// (empty after a successful call). Valid until the next call on the thread.
const char *resdmd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *resdmd_version(void);

// Exact DMD of column-major `d × m` snapshot matrices. `rank = 0` selects
// the numerical rank.
//
// # Safety
// `x` and `y` must point to `d * m` doubles; `out` must be writable.
enum ResdmdStatus resdmd_exact_dmd_new(const double *x,
                                       const double *y,
                                       size_t d,
                                       size_t m,
                                       size_t rank,
                                       struct ResdmdExactDmd **out);

// # Safety
// `h` must be null or a handle from [`resdmd_exact_dmd_new`] not yet freed.
void resdmd_exact_dmd_free(struct ResdmdExactDmd *h);

// # Safety
// `h` must be a live handle (or null, which yields 0).
size_t resdmd_exact_dmd_rank(const struct ResdmdExactDmd *h);

// Eigenvalues into `re` and `im`, each of length `rank`.
//
// # Safety
// `h` must be a live handle; `re` and `im` must hold `rank` doubles.
enum ResdmdStatus resdmd_exact_dmd_eigenvalues(const struct ResdmdExactDmd *h,
                                               double *re,
                                               double *im);

// Eigenpair residuals, length `rank`.
//
// # Safety
// `h` must be a live handle; `out` must hold `rank` doubles.
enum ResdmdStatus resdmd_exact_dmd_residuals(const struct ResdmdExactDmd *h, double *out);

// Pseudospectrum indicator at `z = re + i im`.
//
// # Safety
// `h` must be a live handle; `tau` must be writable.
enum ResdmdStatus resdmd_exact_dmd_pseudo_point(const struct ResdmdExactDmd *h,
                                                double re,
                                                double im,
                                                double *tau);

// Indicator on the `n_re × n_im` grid of evenly spaced nodes; `tau` is
// filled as `tau[i_im * n_re + i_re]`.
//
// # Safety
// `h` must be a live handle; `tau` must hold `n_re * n_im` doubles.
enum ResdmdStatus resdmd_exact_dmd_pseudospectrum(const struct ResdmdExactDmd *h,
                                                  double re_min,
                                                  double re_max,
                                                  size_t n_re,
                                                  double im_min,
                                                  double im_max,
                                                  size_t n_im,
                                                  double *tau);

// Kernel EDMD. `scale <= 0` selects the default scale; `degree` is only
// used by the polynomial kernel; `rank = 0` selects the numerical rank.
//
// # Safety
// `x` and `y` must point to `d * m` doubles; `out` must be writable.
enum ResdmdStatus resdmd_kedmd_new(const double *x,
                                   const double *y,
                                   size_t d,
                                   size_t m,
                                   enum ResdmdKernel kernel,
                                   double scale,
                                   uint32_t degree,
                                   size_t rank,
                                   struct ResdmdKedmd **out);

// # Safety
// `h` must be null or a handle from [`resdmd_kedmd_new`] not yet freed.
void resdmd_kedmd_free(struct ResdmdKedmd *h);

// # Safety
// `h` must be a live handle (or null, which yields 0).
size_t resdmd_kedmd_rank(const struct ResdmdKedmd *h);

// # Safety
// `h` must be a live handle; `re` and `im` must hold `rank` doubles.
enum ResdmdStatus resdmd_kedmd_eigenvalues(const struct ResdmdKedmd *h, double *re, double *im);

// # Safety
// `h` must be a live handle; `out` must hold `rank` doubles.
enum ResdmdStatus resdmd_kedmd_residuals(const struct ResdmdKedmd *h, double *out);

// # Safety
// `h` must be a live handle; `tau` must be writable.
enum ResdmdStatus resdmd_kedmd_pseudo_point(const struct ResdmdKedmd *h,
                                            double re,
                                            double im,
                                            double *tau);

// Same layout as [`resdmd_exact_dmd_pseudospectrum`].
//
// # Safety
// `h` must be a live handle; `tau` must hold `n_re * n_im` doubles.
enum ResdmdStatus resdmd_kedmd_pseudospectrum(const struct ResdmdKedmd *h,
                                              double re_min,
                                              double re_max,
                                              size_t n_re,
                                              double im_min,
                                              double im_max,
                                              size_t n_im,
                                              double *tau);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESDMD_H */
