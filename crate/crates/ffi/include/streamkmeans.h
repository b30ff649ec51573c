#ifndef STREAMKMEANS_H
#define STREAMKMEANS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SkmStatus {
  SKM_STATUS_OK = 0,
  // A required pointer argument was null.
  SKM_STATUS_NULL_POINTER = 1,
  // Bad shape, index, range or string encoding.
  SKM_STATUS_INPUT = 2,
  // Invalid configuration or unparsable TOML.
  SKM_STATUS_CONFIG = 3,
  // The distribution cannot provide what was asked (for example exact moments).
  SKM_STATUS_CAPABILITY = 4,
  // Degenerate centers, empty cell or another runtime invariant.
  SKM_STATUS_CONTRACT = 5,
  SKM_STATUS_IO = 6,
  // The run handle was already finished.
  SKM_STATUS_STATE = 7,
  // The output buffer is too small.
  SKM_STATUS_BUFFER = 8,
  SKM_STATUS_PANIC = 9,
} SkmStatus;

typedef struct SkmDistribution SkmDistribution;

typedef struct SkmRun SkmRun;

// Message for the last failure on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *skm_last_error(void);

// Library version as a static NUL-terminated string.
const char *skm_version(void);

// Build a distribution from a TOML table, e.g.
// `type = "piecewise1d"`, `breakpoints = [0, 1]`, `densities = [1]`.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum SkmStatus skm_distribution_from_toml(const char *toml, struct SkmDistribution **out);

// Dimension of the sample space, or 0 for a null handle.
//
// # Safety
// `dist` must be null or a live handle.
size_t skm_distribution_dimension(const struct SkmDistribution *dist);

// # Safety
// `dist` must be null or a handle not yet freed.
void skm_distribution_free(struct SkmDistribution *dist);

// Exact Voronoi cell masses of `k` centers, written to `out_masses[0..k]`.
//
// # Safety
// `centers` must hold `k * d` doubles and `out_masses` room for `k`.
enum SkmStatus skm_masses(const struct SkmDistribution *dist,
                          const double *centers,
                          size_t k,
                          double *out_masses);

// Exact quantization cost of `k` centers.
//
// # Safety
// `centers` must hold `k * d` doubles and `out_cost` be a valid pointer.
enum SkmStatus skm_cost(const struct SkmDistribution *dist,
                        const double *centers,
                        size_t k,
                        double *out_cost);

// Exact gradient, written row-major to `out_gradient[0..k*d]`.
//
// # Safety
// `centers` and `out_gradient` must each hold `k * d` doubles.
enum SkmStatus skm_gradient(const struct SkmDistribution *dist,
                            const double *centers,
                            size_t k,
                            double *out_gradient);

// Start a run from a TOML run configuration. The seed comes from the
// configuration text; the environment is not consulted.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum SkmStatus skm_run_new(const char *config_toml, struct SkmRun **out);

// Advance by up to `steps` iterations, stopping at the configured horizon.
// The number actually taken goes to `out_taken` when it is not null.
//
// # Safety
// `run` must be a live handle; `out_taken` null or valid.
enum SkmStatus skm_run_step(struct SkmRun *run, uint64_t steps, uint64_t *out_taken);

// Completed iterations, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
uint64_t skm_run_iteration(const struct SkmRun *run);

// Number of centers and dimension.
//
// # Safety
// `run` must be a live handle; `out_k` and `out_d` valid pointers.
enum SkmStatus skm_run_shape(const struct SkmRun *run, size_t *out_k, size_t *out_d);

// Copy the current centers into `out[0..k*d]`; `len` is the buffer length.
//
// # Safety
// `run` must be a live handle and `out` hold `len` doubles.
enum SkmStatus skm_run_centers(const struct SkmRun *run, double *out, size_t len);

// Close the run and write its trace CSV to `path`. Further steps fail with
// [`SkmStatus::State`]; centers and iteration stay readable.
//
// # Safety
// `run` must be a live handle and `path` a NUL-terminated string.
enum SkmStatus skm_run_finish(struct SkmRun *run, const char *path);

// # Safety
// `run` must be null or a handle not yet freed.
void skm_run_free(struct SkmRun *run);

// `T_r(m)`: the integer with `Σ_{m≤n<T} 1/n ≤ r < Σ_{m≤n≤T} 1/n`; needs `m ≥ 2`.
//
// # Safety
// `out` must be a valid pointer.
enum SkmStatus skm_horizon(double r, uint64_t m, uint64_t *out);

#endif  /* STREAMKMEANS_H */
