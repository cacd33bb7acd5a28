#ifndef WCE_H
#define WCE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result code of every call.
 */
typedef enum {
  WCE_STATUS_OK = 0,
  WCE_STATUS_NULL_POINTER = 1,
  WCE_STATUS_INVALID_ARGUMENT = 2,
  WCE_STATUS_DIMENSION_MISMATCH = 3,
  WCE_STATUS_INVALID_CONFIG = 4,
  WCE_STATUS_FIT_FAILED = 5,
  WCE_STATUS_NUMERICAL = 6,
  WCE_STATUS_BUFFER_TOO_SMALL = 7,
  WCE_STATUS_PANIC = 8,
} WceStatus;

/*
 Mixture family.
 */
typedef enum {
  WCE_FAMILY_GAUSSIAN = 0,
  WCE_FAMILY_SKEW_NORMAL = 1,
  WCE_FAMILY_EXPERTS = 2,
} WceFamily;

/*
 Opaque fitted model.
 */
typedef struct WceFit WceFit;

/*
 Fit settings. A non-positive `eigen_ratio_c` disables the eigenvalue-ratio
 constraint.
 */
typedef struct {
  double gamma;
  size_t max_iter;
  double tol;
  size_t n_starts;
  double eigen_ratio_c;
  uint64_t seed;
  double alpha;
  size_t mc_draws;
} WceConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library defaults: gamma 0.2, 1000 iterations, tolerance 1e-6, 10 starts,
 eigenvalue ratio 10, alpha 0.01, 10000 Monte Carlo draws.
 */
WceConfig wce_config_default(void);

/*
 Fits a Gaussian or skew-normal mixture with `k` components to the
 row-major `n x p` matrix `data`.

 # Safety
 `data` must hold `n * p` doubles, `config` must be null (defaults) or
 valid, and `out` must be writable.
 */
WceStatus wce_fit_points(WceFamily family,
                         const double *data,
                         size_t n,
                         size_t p,
                         size_t k,
                         const WceConfig *config,
                         WceFit **out);

/*
 Fits a mixture of `k` Gaussian regression experts. `x` is the row-major
 `n x q` design (include a column of ones for an intercept); `y` has `n`
 responses. Gating uses the same design.

 # Safety
 `x` must hold `n * q` doubles, `y` must hold `n`, `config` must be null or
 valid, and `out` must be writable.
 */
WceStatus wce_fit_regression(const double *x,
                             const double *y,
                             size_t n,
                             size_t q,
                             size_t k,
                             const WceConfig *config,
                             WceFit **out);

/*
 Releases a fit. Null is ignored.

 # Safety
 `fit` must be null or a handle not yet freed.
 */
void wce_fit_free(WceFit *fit);

/*
 Observations, components and dimension (`p`, or `q` for experts).

 # Safety
 `fit` must be a live handle; each output pointer may be null.
 */
WceStatus wce_fit_shape(const WceFit *fit, size_t *n_obs, size_t *n_components, size_t *dim);

/*
 Trimmed BIC, iterations and convergence flag of the selected start.

 # Safety
 `fit` must be a live handle; each output pointer may be null.
 */
WceStatus wce_fit_summary(const WceFit *fit,
                          double *trimmed_bic,
                          size_t *iterations,
                          bool *converged);

/*
 Cluster label of each observation into `out[0..n]`.

 # Safety
 `fit` must be a live handle and `out` must hold `len` writable values.
 */
WceStatus wce_fit_labels(const WceFit *fit, size_t *out, size_t len);

/*
 Outlier flags (1 = outlier) into `out[0..n]`.

 # Safety
 `fit` must be a live handle and `out` must hold `len` writable bytes.
 */
WceStatus wce_fit_outlier_flags(const WceFit *fit, uint8_t *out, size_t len);

/*
 Outlier scores (tail probabilities) into `out[0..n]`.

 # Safety
 `fit` must be a live handle and `out` must hold `len` writable values.
 */
WceStatus wce_fit_outlier_scores(const WceFit *fit, double *out, size_t len);

/*
 Row-major `n x K` posterior membership probabilities.

 # Safety
 `fit` must be a live handle and `out` must hold `len` writable values.
 */
WceStatus wce_fit_responsibilities(const WceFit *fit, double *out, size_t len);

/*
 Mixing proportions into `out[0..K]`; not available for experts, whose
 proportions depend on the covariates.

 # Safety
 `fit` must be a live handle and `out` must hold `len` writable values.
 */
WceStatus wce_fit_mixing(const WceFit *fit, double *out, size_t len);

/*
 The fit as a JSON document; release with [`wce_string_free`].

 # Safety
 `fit` must be a live handle and `out` writable.
 */
WceStatus wce_fit_to_json(const WceFit *fit, char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string from [`wce_fit_to_json`] not yet freed.
 */
void wce_string_free(char *s);

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call on the same thread.
 */
const char *wce_last_error_message(void);

/*
 Library version string (static).
 */
const char *wce_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WCE_H */
