#ifndef MOBILE_MAPS_H
#define MOBILE_MAPS_H

/* Generated by cbindgen from the mobile-maps-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Root sign of a map: positive, null or negative.
 */
#define MM_SIGN_PLUS 1

#define MM_SIGN_NULL 0

#define MM_SIGN_MINUS -1

/**
 * Status codes.
 */
typedef enum MmStatus {
  MM_OK = 0,
  MM_ERR_NULL = 1,
  MM_ERR_DOMAIN = 2,
  MM_ERR_PARSE = 3,
  MM_ERR_INVALID = 4,
  MM_ERR_EXHAUSTED = 5,
  MM_ERR_CAP = 6,
  MM_ERR_PANIC = 7,
} MmStatus;

/**
 * A rooted pointed map, with its mobile when it was sampled or encoded.
 */
typedef struct MmMap MmMap;

/**
 * Sampler of Boltzmann maps with its random state.
 */
typedef struct MmSampler MmSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread; valid until the next failing call.
 */
const char *mm_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library or be null.
 */
void mm_string_free(char *s);

/**
 * Creates a sampler for face weights given as JSON, e.g. `{"5":1}`.
 * Weights without a fixed point are rescaled to criticality.
 *
 * # Safety
 * `q_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmStatus mm_sampler_new(const char *q_json, uint64_t seed, struct MmSampler **out);

/**
 * # Safety
 * `s` must come from `mm_sampler_new` or be null.
 */
void mm_sampler_free(struct MmSampler *s);

/**
 * Samples a map with `n_vertices` vertices and root sign `sign`.
 *
 * # Safety
 * `s` must be a live sampler and `out` a valid pointer.
 */
enum MmStatus mm_sample_map(struct MmSampler *s,
                            uintptr_t n_vertices,
                            int32_t sign,
                            struct MmMap **out);

/**
 * Parses a map from its text form.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmStatus mm_map_from_text(const char *text, struct MmMap **out);

/**
 * # Safety
 * `m` must come from this library or be null.
 */
void mm_map_free(struct MmMap *m);

/**
 * Vertex, edge and face counts.
 *
 * # Safety
 * `m` must be a live map; output pointers must be valid.
 */
enum MmStatus mm_map_counts(const struct MmMap *m,
                            uintptr_t *vertices,
                            uintptr_t *edges,
                            uintptr_t *faces);

/**
 * Root sign as one of the `MM_SIGN_*` codes.
 *
 * # Safety
 * `m` must be a live map and `out` a valid pointer.
 */
enum MmStatus mm_map_sign(const struct MmMap *m, int32_t *out);

/**
 * Graph distance between vertices `u` and `v`.
 *
 * # Safety
 * `m` must be a live map and `out` a valid pointer.
 */
enum MmStatus mm_map_distance(const struct MmMap *m, uintptr_t u, uintptr_t v, uintptr_t *out);

/**
 * Text form of the map; free with `mm_string_free`.
 *
 * # Safety
 * `m` must be a live map and `out` a valid pointer.
 */
enum MmStatus mm_map_to_text(const struct MmMap *m, char **out);

/**
 * Mobile of the map as JSON, encoding it first when needed (negative maps
 * are encoded after reversing the root); free with `mm_string_free`.
 *
 * # Safety
 * `m` must be a live map and `out` a valid pointer.
 */
enum MmStatus mm_map_mobile_json(struct MmMap *m, char **out);

/**
 * Exact Gromov-Hausdorff distance between two finite metric spaces given
 * as row-major distance matrices of sizes `nx` and `ny` (at most 7 points).
 *
 * # Safety
 * `dx` must hold `nx * nx` and `dy` `ny * ny` doubles; `out` must be valid.
 */
enum MmStatus mm_gh_distance(const double *dx,
                             uintptr_t nx,
                             const double *dy,
                             uintptr_t ny,
                             double *out);

/**
 * Runs a named verification suite with default sizes. Writes the JSON
 * report array to `report` (free with `mm_string_free`, may be null) and
 * whether every report passed to `all_pass`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `all_pass` must be valid.
 */
enum MmStatus mm_verify_suite(const char *name, uint64_t seed, int32_t *all_pass, char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOBILE_MAPS_H */
