#ifndef CCSEG_H
#define CCSEG_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
#define CCSEG_OK 0

/**
 * A precondition or contract was violated.
 */
#define CCSEG_ERR_CONTRACT 1

/**
 * File I/O or format failure.
 */
#define CCSEG_ERR_IO 2

/**
 * Null pointer, bad UTF-8 or unknown enum string.
 */
#define CCSEG_ERR_ARGUMENT 3

/**
 * Opaque pipeline handle: one variant plus its weights.
 */
typedef struct CcsegPipeline CcsegPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len` bytes). Returns the full message length in bytes,
 * excluding the NUL. `buf` may be null to query the length.
 */
uintptr_t ccseg_last_error_message(char *buf, uintptr_t len);

/**
 * Create a pipeline with deterministic seeded weights.
 * `insertion` is one of "none", "backbone", "fpn", "both".
 */
int32_t ccseg_pipeline_new_seeded(const char *insertion, uint64_t seed, struct CcsegPipeline **out);

/**
 * Create a pipeline from a CCSEG1 weights file.
 */
int32_t ccseg_pipeline_load(const char *insertion,
                            const char *weights_path,
                            struct CcsegPipeline **out);

/**
 * Release a pipeline handle. Null is a no-op.
 */
void ccseg_pipeline_free(struct CcsegPipeline *pipeline);

/**
 * Run inference on one frame.
 *
 * `image`: 3·height·width f64 values, CHW, row-major, range [0,1].
 * `labels_out`: height·width u32 slots receiving the instance label map.
 * `instance_count_out` (optional, may be null): number of instances found.
 * Both extents must be divisible by 32.
 */
int32_t ccseg_pipeline_infer(const struct CcsegPipeline *pipeline,
                             const double *image,
                             uintptr_t height,
                             uintptr_t width,
                             uint32_t *labels_out,
                             uint32_t *instance_count_out);

/**
 * Multi-instance DSC and NSD of one frame pair.
 *
 * `gt` / `pred`: height·width u32 label maps (0 background, ids 1..N).
 * `tau`: NSD boundary tolerance in pixels (the published protocol uses 13).
 */
int32_t ccseg_frame_scores(const uint32_t *gt,
                           const uint32_t *pred,
                           uintptr_t height,
                           uintptr_t width,
                           double tau,
                           double *mi_dsc_out,
                           double *mi_nsd_out);

/**
 * Linear-interpolation percentile of a sample (the ranking convention used
 * by the robustness aggregate; `p` in [0,1]).
 */
int32_t ccseg_percentile(const double *values, uintptr_t len, double p, double *out);

/**
 * Number of affinity entries a criss-cross attention map holds for an
 * `height` × `width` site: H·W·(H+W−1).
 */
uint64_t ccseg_affinity_entry_count(uintptr_t height, uintptr_t width);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CCSEG_H */
