#ifndef RISPHASE_H
#define RISPHASE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RisStatus {
  RIS_STATUS_OK = 0,
  RIS_STATUS_NULL_POINTER = 1,
  RIS_STATUS_INVALID_ARGUMENT = 2,
  RIS_STATUS_DIMENSION = 3,
  RIS_STATUS_DEGENERATE_DATA = 4,
  RIS_STATUS_NUMERICAL = 5,
  RIS_STATUS_FORMAT = 6,
  RIS_STATUS_STATE = 7,
  RIS_STATUS_TRAINING = 8,
  RIS_STATUS_MISSING_ARTIFACT = 9,
  RIS_STATUS_IO = 10,
  RIS_STATUS_PANIC = 11,
} RisStatus;

/**
 * Channel samples, each an `M x (L+1)` composite channel.
 */
typedef struct RisDataset RisDataset;

/**
 * A channel estimator: least squares, sample-covariance LMMSE, GMM or a
 * trained CNN.
 */
typedef struct RisEstimator RisEstimator;

/**
 * Phase book `V` of shape `(L+1) x N_v`.
 */
typedef struct RisPhaseMatrix RisPhaseMatrix;

/**
 * An estimator bound to one phase book and noise variance.
 */
typedef struct RisPrepared RisPrepared;

typedef struct RisComplex {
  double re;
  double im;
} RisComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ris_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ris_version(void);

/**
 * Noise variance `10^(-snr_db/10)` for unit-power channels.
 */
double ris_snr_to_noise_variance(double snr_db);

/**
 * Generate `count` channels with the default scenario resized to `m` BS
 * antennas and a `ris_rows x ris_cols` RIS. A positive `downtilt_deg` tilts
 * the RIS; zero keeps it parallel. With `normalize` set the dataset is
 * scaled to unit average power per entry.
 */
enum RisStatus ris_dataset_generate(size_t m,
                                    size_t ris_rows,
                                    size_t ris_cols,
                                    double downtilt_deg,
                                    size_t count,
                                    uint64_t seed,
                                    bool normalize,
                                    struct RisDataset **out);

enum RisStatus ris_dataset_load(const char *path, struct RisDataset **out);

enum RisStatus ris_dataset_save(const struct RisDataset *dataset, const char *path);

/**
 * Number of samples, `M` and `L`. Any output pointer may be NULL.
 */
enum RisStatus ris_dataset_shape(const struct RisDataset *dataset,
                                 size_t *count,
                                 size_t *m,
                                 size_t *l);

/**
 * Copy `vec(H)` of sample `index` into `out` of length `M (L+1)`.
 */
enum RisStatus ris_dataset_channel(const struct RisDataset *dataset,
                                   size_t index,
                                   struct RisComplex *out,
                                   size_t len);

/**
 * `y = vec(H V + N)` for sample `index`, with noise drawn from `seed`.
 */
enum RisStatus ris_dataset_observe(const struct RisDataset *dataset,
                                   size_t index,
                                   const struct RisPhaseMatrix *phases,
                                   double noise_variance,
                                   uint64_t seed,
                                   struct RisComplex *out,
                                   size_t len);

void ris_dataset_free(struct RisDataset *dataset);

/**
 * First `n_v` columns of the `(L+1)`-point DFT matrix.
 */
enum RisStatus ris_phase_dft(size_t l, size_t n_v, struct RisPhaseMatrix **out);

/**
 * DFT columns picked by 1-based index; column 1 is always required.
 */
enum RisStatus ris_phase_dft_columns(size_t l,
                                     const size_t *columns,
                                     size_t count,
                                     struct RisPhaseMatrix **out);

/**
 * Uniformly random phases with the first row fixed to 1.
 */
enum RisStatus ris_phase_random(size_t l, size_t n_v, uint64_t seed, struct RisPhaseMatrix **out);

/**
 * Phase book from `rows * n_v` column-major entries. Entries must have unit
 * modulus and the first row must be all ones.
 */
enum RisStatus ris_phase_from_entries(size_t rows,
                                      size_t n_v,
                                      const struct RisComplex *entries,
                                      struct RisPhaseMatrix **out);

/**
 * `L + 1` rows and `N_v` columns. Either output pointer may be NULL.
 */
enum RisStatus ris_phase_shape(const struct RisPhaseMatrix *phases, size_t *rows, size_t *n_v);

/**
 * Copy the column-major entries into `out` of length `(L+1) N_v`.
 */
enum RisStatus ris_phase_entries(const struct RisPhaseMatrix *phases,
                                 struct RisComplex *out,
                                 size_t len);

void ris_phase_free(struct RisPhaseMatrix *phases);

/**
 * Least-squares estimator `vec(Y V^+)`.
 */
enum RisStatus ris_estimator_ls(struct RisEstimator **out);

/**
 * LMMSE estimator with the sample covariance of `dataset`.
 */
enum RisStatus ris_estimator_sample_cov(const struct RisDataset *dataset,
                                        struct RisEstimator **out);

/**
 * Fit a `components`-component Gaussian mixture to `dataset` by EM. The
 * covariance floor is `relative_floor` times the mean per-entry power.
 */
enum RisStatus ris_estimator_gmm_fit(const struct RisDataset *dataset,
                                     size_t components,
                                     size_t max_iter,
                                     double relative_floor,
                                     uint64_t seed,
                                     struct RisEstimator **out);

enum RisStatus ris_estimator_gmm_load(const char *path, struct RisEstimator **out);

/**
 * Save a GMM estimator. Other estimator kinds fail with `State`.
 */
enum RisStatus ris_estimator_gmm_save(const struct RisEstimator *estimator, const char *path);

/**
 * Load a trained CNN checkpoint. The CNN only accepts its own learned phase
 * book, which is returned through `phases_out` when that is not NULL.
 */
enum RisStatus ris_estimator_cnn_load(const char *path,
                                      struct RisEstimator **out,
                                      struct RisPhaseMatrix **phases_out);

/**
 * Short estimator name: "ls", "sample_cov", "gmm" or "cnn".
 */
const char *ris_estimator_name(const struct RisEstimator *estimator);

void ris_estimator_free(struct RisEstimator *estimator);

/**
 * Bind an estimator to a phase book and noise variance. The estimator and
 * phase book may be freed afterwards.
 */
enum RisStatus ris_estimator_prepare(const struct RisEstimator *estimator,
                                     const struct RisPhaseMatrix *phases,
                                     double noise_variance,
                                     struct RisPrepared **out);

/**
 * Estimate `vec(H)` (length `M (L+1)`) from one observation `y` (length
 * `M N_v`).
 */
enum RisStatus ris_prepared_estimate(const struct RisPrepared *prepared,
                                     const struct RisComplex *y,
                                     size_t y_len,
                                     struct RisComplex *out,
                                     size_t out_len);

void ris_prepared_free(struct RisPrepared *prepared);

/**
 * `mean |h - ĥ|^2 / dim` over `count` vectors of length `dim`, both stored
 * back to back.
 */
enum RisStatus ris_nmse(const struct RisComplex *truth,
                        const struct RisComplex *estimate,
                        size_t count,
                        size_t dim,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISPHASE_H */
