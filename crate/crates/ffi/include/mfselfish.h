/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef MFSELFISH_H
#define MFSELFISH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfsStatus {
  MFS_STATUS_OK = 0,
  MFS_STATUS_NULL_POINTER = 1,
  MFS_STATUS_INVALID_ARGUMENT = 2,
  MFS_STATUS_DIMENSION = 3,
  MFS_STATUS_NUMERICAL = 4,
  MFS_STATUS_INFEASIBLE = 5,
  MFS_STATUS_IO = 6,
  MFS_STATUS_PANIC = 7,
} MfsStatus;

typedef enum MfsNorm {
  MFS_NORM_HINF = 0,
  MFS_NORM_H2 = 1,
} MfsNorm;

typedef enum MfsBlock {
  MFS_BLOCK_ONE = 1,
  MFS_BLOCK_TWO = 2,
} MfsBlock;

typedef enum MfsAllocation {
  MFS_ALLOCATION_COHERENT = 0,
  MFS_ALLOCATION_SIGNED = 1,
} MfsAllocation;

typedef enum MfsProjection {
  /**
   * Deviation from the population average.
   */
  MFS_PROJECTION_SOCIAL = 0,
  MFS_PROJECTION_INDIVIDUAL = 1,
} MfsProjection;

/**
 * Opaque block Youla parameter handle.
 */
typedef struct MfsBlockQ MfsBlockQ;

/**
 * Opaque population handle.
 */
typedef struct MfsEnsemble MfsEnsemble;

/**
 * Population maxima of the factor norms.
 */
typedef struct MfsConstants {
  double gamma_h;
  double gamma_u;
  double gamma_v;
  double gamma_h2;
  double gamma_v2;
} MfsConstants;

typedef struct MfsMatchingResult {
  double mu;
  double cost_at_zero;
  double certificate_gap;
  size_t iterations;
  size_t taps;
  int converged;
} MfsMatchingResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mfs_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * without the terminator.
 */
size_t mfs_last_error_message(char *buf, size_t len);

/**
 * Samples `n` agents with `a ~ U[0.5, 1.5]`, `b ~ U[0.8, 1.2]` and
 * default weights; `grid_points` sets the grid of the factor norms.
 */
enum MfsStatus mfs_ensemble_sample(size_t n,
                                   uint64_t seed,
                                   size_t grid_points,
                                   struct MfsEnsemble **out_ensemble);

/**
 * Builds a population from explicit `(a[i], b[i])` pairs.
 */
enum MfsStatus mfs_ensemble_from_parameters(const double *a,
                                            const double *b,
                                            size_t n,
                                            size_t grid_points,
                                            struct MfsEnsemble **out_ensemble);

void mfs_ensemble_free(struct MfsEnsemble *ensemble);

/**
 * Agent count, or 0 for a null handle.
 */
size_t mfs_ensemble_len(const struct MfsEnsemble *ensemble);

/**
 * Writes the agent parameters into caller arrays of length `len`, which
 * must be at least the agent count.
 */
enum MfsStatus mfs_ensemble_parameters(const struct MfsEnsemble *ensemble,
                                       double *a_out,
                                       double *b_out,
                                       size_t len);

enum MfsStatus mfs_ensemble_constants(const struct MfsEnsemble *ensemble,
                                      struct MfsConstants *out_constants);

/**
 * Diagonal parameter of per-agent matching solutions (default settings).
 */
enum MfsStatus mfs_selfish_q(const struct MfsEnsemble *ensemble,
                             enum MfsNorm norm,
                             enum MfsBlock block,
                             struct MfsBlockQ **out_q);

/**
 * Off-diagonal redistribution with `alpha(n) = c n^p`; `fanout = 0` uses
 * all other rows.
 */
enum MfsStatus mfs_make_alpha_dominant(const struct MfsBlockQ *q,
                                       double c,
                                       double p,
                                       size_t fanout,
                                       enum MfsAllocation allocation,
                                       uint64_t seed,
                                       struct MfsBlockQ **out_q);

void mfs_block_q_free(struct MfsBlockQ *q);

/**
 * Smallest `alpha` for which `q` is column dominant.
 */
enum MfsStatus mfs_block_q_alpha(const struct MfsBlockQ *q, double *out_alpha);

/**
 * Social or individual cost of `q` on the population: H-infinity norm, or
 * H2 norm scaled by `1/sqrt(n)`.
 */
enum MfsStatus mfs_ensemble_cost(const struct MfsEnsemble *ensemble,
                                 const struct MfsBlockQ *q,
                                 enum MfsNorm norm,
                                 enum MfsBlock block,
                                 enum MfsProjection projection,
                                 size_t grid_points,
                                 double *out_value);

/**
 * H-infinity norm of the `M`-row truncation of the average term.
 */
enum MfsStatus mfs_average_block_norm(const struct MfsEnsemble *ensemble,
                                      const struct MfsBlockQ *q,
                                      size_t m_rows,
                                      size_t grid_points,
                                      double *out_value);

double mfs_lemma_bound_hinf(size_t m_rows,
                            size_t n,
                            double gamma_h,
                            double gamma_q,
                            double gamma_u,
                            double gamma_v,
                            double alpha);

/**
 * Single-agent model matching for the case-study plant `(a, b)`.
 */
enum MfsStatus mfs_matching_solve(double a,
                                  double b,
                                  enum MfsNorm norm,
                                  enum MfsBlock block,
                                  struct MfsMatchingResult *out_result);

/**
 * H-infinity norm of `D + C lambda (I - lambda A)^{-1} B`. Matrices are
 * row-major; `nx = 0` gives a static gain and `a`, `b`, `c` may be null.
 */
enum MfsStatus mfs_hinf_norm_state_space(const double *a,
                                         const double *b,
                                         const double *c,
                                         const double *d,
                                         size_t nx,
                                         size_t nu,
                                         size_t ny,
                                         size_t grid_points,
                                         double *out_value);

/**
 * Writes a snapshot (`.json` or `.cbor` by extension). Either handle may
 * be null.
 */
enum MfsStatus mfs_snapshot_save(const char *path,
                                 const struct MfsEnsemble *ensemble,
                                 const struct MfsBlockQ *q);

/**
 * Loads a snapshot. Absent parts come back as null handles; either output
 * pointer may be null to skip that part.
 */
enum MfsStatus mfs_snapshot_load(const char *path,
                                 struct MfsEnsemble **out_ensemble,
                                 struct MfsBlockQ **out_q);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFSELFISH_H */
