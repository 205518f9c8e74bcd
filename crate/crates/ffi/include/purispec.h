#ifndef PURISPEC_H
#define PURISPEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Values accepted in [`PsModelParams::kind`].
 */
typedef enum {
  PS_MODEL_KIND_ISING = 0,
  PS_MODEL_KIND_XXZ = 1,
} PsModelKind;

/**
 * Result code of every fallible call.
 */
typedef enum {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_NUMERICAL = 3,
  PS_STATUS_BUFFER_TOO_SMALL = 4,
  PS_STATUS_PANIC = 5,
} PsStatus;

/**
 * Opaque model handle.
 */
typedef struct PsModel PsModel;

/**
 * Opaque handle to a diagonalized model.
 */
typedef struct PsSpectrum PsSpectrum;

/**
 * Plain-data description of a chain. `kind` takes a [`PsModelKind`] value.
 */
typedef struct {
  uint32_t kind;
  size_t sites;
  double j_z;
  double j;
  double h_x;
  double h_z;
  double r_z;
  uint64_t seed;
} PsModelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *ps_last_error(void);

/**
 * Forgets the stored error message.
 */
void ps_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ps_version(void);

/**
 * Validates `params` and stores a new model in `*out`.
 *
 * # Safety
 * `params` must point to a readable `PsModelParams` and `out` to writable storage.
 */
PsStatus ps_model_new(const PsModelParams *params, PsModel **out);

/**
 * Releases a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from [`ps_model_new`] and not have been freed.
 */
void ps_model_free(PsModel *model);

/**
 * Hilbert-space dimension `2^L`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
PsStatus ps_model_dim(const PsModel *model, size_t *out);

/**
 * Dense diagonalization with eigenvectors.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
PsStatus ps_diagonalize(const PsModel *model, PsSpectrum **out);

/**
 * Releases a spectrum; NULL is ignored.
 *
 * # Safety
 * `spectrum` must come from [`ps_diagonalize`] and not have been freed.
 */
void ps_spectrum_free(PsSpectrum *spectrum);

/**
 * Number of levels.
 *
 * # Safety
 * `spectrum` must be a live handle and `out` writable.
 */
PsStatus ps_spectrum_dim(const PsSpectrum *spectrum, size_t *out);

/**
 * Ascending eigenvalues into `out[0..D]`.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must hold `len` doubles.
 */
PsStatus ps_spectrum_energies(const PsSpectrum *spectrum, double *out, size_t len);

/**
 * Weight matrix `M[sigma * D + n] = |<sigma|n>|^2`, row-major.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must hold `len` doubles.
 */
PsStatus ps_weights(const PsSpectrum *spectrum, double *out, size_t len);

/**
 * `PR_M(sigma)` for every Fock state into `out[0..D]`.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must hold `len` doubles.
 */
PsStatus ps_participation_ratios(const PsSpectrum *spectrum, double *out, size_t len);

/**
 * `G(t_k) = (1/D) sum_n e^{-i t_k E_n}` at `t_k = k dt`, `k = 0..=steps`;
 * each output buffer needs `steps + 1` values.
 *
 * # Safety
 * `spectrum` must be a live handle; `re` and `im` must each hold `len` doubles.
 */
PsStatus ps_loschmidt_g(const PsSpectrum *spectrum,
                        double dt,
                        size_t steps,
                        double *re,
                        double *im,
                        size_t len);

/**
 * Closed-form `rho_c(E, T)` on `count` evenly spaced energies from `e_min`
 * to `e_max`. The spacing must resolve the kernel: `(e_max - e_min)/(count - 1) <= 1/(4T)`.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must hold `len` doubles.
 */
PsStatus ps_dos(const PsSpectrum *spectrum,
                double t,
                double e_min,
                double e_max,
                size_t count,
                double *out,
                size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PURISPEC_H */
