#ifndef MIGRATE_FUSE_H
#define MIGRATE_FUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Input errors and numerical failures use the same numbers
 * as the command-line exit codes.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_INPUT = 2,
  MF_STATUS_NUMERICAL = 3,
  MF_STATUS_PANIC = 4,
} MfStatus;

/**
 * A block-group hierarchy.
 */
typedef struct MfHierarchy MfHierarchy;

/**
 * A square flow matrix.
 */
typedef struct MfMatrix MfMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *mf_last_error(void);

/**
 * Library version as a static string.
 */
const char *mf_version(void);

/**
 * Read a hierarchy CSV.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum MfStatus mf_hierarchy_read(const char *path, struct MfHierarchy **out);

/**
 * A synthetic world with the given shape.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MfStatus mf_hierarchy_synthetic(size_t states,
                                     size_t counties_per_state,
                                     size_t tracts_per_county,
                                     size_t cbgs_per_tract,
                                     uint64_t seed,
                                     struct MfHierarchy **out);

/**
 * Number of block groups.
 *
 * # Safety
 * `h` must come from this library or be null.
 */
size_t mf_hierarchy_len(const struct MfHierarchy *h);

/**
 * Number of counties.
 *
 * # Safety
 * `h` must come from this library or be null.
 */
size_t mf_hierarchy_county_count(const struct MfHierarchy *h);

/**
 * # Safety
 * `h` must come from this library and not be used afterwards.
 */
void mf_hierarchy_free(struct MfHierarchy *h);

/**
 * Build a matrix from `len` (row, col, value) triplets; duplicates add.
 *
 * # Safety
 * The three arrays must hold `len` elements each; `out` must be valid.
 */
enum MfStatus mf_matrix_from_triplets(size_t n,
                                      int32_t year,
                                      const size_t *rows,
                                      const size_t *cols,
                                      const double *values,
                                      size_t len,
                                      struct MfMatrix **out);

/**
 * Read a triplet CSV indexed by `h`.
 *
 * # Safety
 * `path` must be a valid C string; `h` and `out` valid pointers.
 */
enum MfStatus mf_matrix_read(const char *path, const struct MfHierarchy *h, struct MfMatrix **out);

/**
 * Write a triplet CSV using the block-group ids of `h`.
 *
 * # Safety
 * `m` and `h` must be valid; `path` a valid C string.
 */
enum MfStatus mf_matrix_write(const struct MfMatrix *m,
                              const struct MfHierarchy *h,
                              const char *path);

/**
 * Gravity ground truth on `h`.
 *
 * # Safety
 * `h` and `out` must be valid.
 */
enum MfStatus mf_matrix_synthetic_truth(const struct MfHierarchy *h,
                                        int32_t year,
                                        double total_pop,
                                        double stay_rate,
                                        uint64_t seed,
                                        struct MfMatrix **out);

/**
 * # Safety
 * `m` must come from this library or be null.
 */
size_t mf_matrix_dim(const struct MfMatrix *m);

/**
 * Number of stored entries.
 *
 * # Safety
 * `m` must come from this library or be null.
 */
size_t mf_matrix_nnz(const struct MfMatrix *m);

/**
 * # Safety
 * `m` must come from this library or be null.
 */
double mf_matrix_total(const struct MfMatrix *m);

/**
 * Entry (row, col); zero when not stored.
 *
 * # Safety
 * `m` and `out` must be valid.
 */
enum MfStatus mf_matrix_get(const struct MfMatrix *m, size_t row, size_t col, double *out);

/**
 * Copy row sums into `out`, which must hold `mf_matrix_dim` values.
 *
 * # Safety
 * `m` must be valid and `out` must hold `len` doubles.
 */
enum MfStatus mf_matrix_row_sums(const struct MfMatrix *m, double *out, size_t len);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void mf_matrix_free(struct MfMatrix *m);

/**
 * Block IPF of `m` to county populations at the start (`prev`) and end
 * (`curr`) of the year. Both arrays hold one value per county in
 * hierarchy order. `tol` is absolute; `iterations` may be null.
 *
 * # Safety
 * Pointers must be valid and arrays hold `n_counties` values.
 */
enum MfStatus mf_ipf_county(const struct MfMatrix *m,
                            const struct MfHierarchy *h,
                            const double *prev,
                            const double *curr,
                            size_t n_counties,
                            size_t max_iter,
                            double tol,
                            struct MfMatrix **out,
                            size_t *iterations);

/**
 * Harmonize `raw` against the marginals of `reference` with every stage
 * on; block-group targets are the reference's row sums.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MfStatus mf_harmonize_to_reference(const struct MfMatrix *raw,
                                        const struct MfMatrix *reference,
                                        const struct MfHierarchy *h,
                                        struct MfMatrix **out);

/**
 * Smooth 11 overlapping population observations (census 2010, then the
 * five-year surveys ending 2010 through 2019) into yearly populations
 * 2009 to 2019.
 *
 * # Safety
 * `b` and `x` must hold 11 doubles; `residual` may be null.
 */
enum MfStatus mf_population_path(const double *b, double *x, double *residual);

/**
 * Run a command-line subcommand (`harmonize`, `validate`, ...) with a
 * config file. `overrides` holds `n_overrides` `key=value` strings.
 *
 * # Safety
 * Strings must be valid C strings.
 */
enum MfStatus mf_run_command(const char *command,
                             const char *config,
                             const char *const *overrides,
                             size_t n_overrides);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIGRATE_FUSE_H */
