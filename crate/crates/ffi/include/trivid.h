#ifndef TRIVID_H
#define TRIVID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TrividStatus {
  TRIVID_STATUS_OK = 0,
  TRIVID_STATUS_NULL_POINTER = 1,
  TRIVID_STATUS_INVALID_UTF8 = 2,
  TRIVID_STATUS_IO = 3,
  TRIVID_STATUS_FORMAT = 4,
  TRIVID_STATUS_INVALID_CONFIG = 5,
  TRIVID_STATUS_CONTRACT = 6,
  TRIVID_STATUS_DEGENERATE_SELECTION = 7,
  TRIVID_STATUS_UNDEFINED_METRIC = 8,
  TRIVID_STATUS_EMPTY_LIBRARY = 9,
  TRIVID_STATUS_PANIC = 10,
} TrividStatus;

/**
 * Weight archive handle.
 */
typedef struct TrividArchive TrividArchive;

/**
 * Pruning mask handle.
 */
typedef struct TrividMask TrividMask;

/**
 * Synthetic scenario handle.
 */
typedef struct TrividScenario TrividScenario;

typedef struct TrividMotScores {
  size_t idsw;
  size_t fp;
  size_t fn_;
  size_t gt_total;
  double mota;
  double idf1;
} TrividMotScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *trivid_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *trivid_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TrividStatus trivid_archive_load(const char *path, struct TrividArchive **out);

/**
 * Archive of `n_layers` conv tensors; `shapes` holds `(filters, channels,
 * k)` triples.
 *
 * # Safety
 * `shapes` must point to `3 * n_layers` values.
 */
enum TrividStatus trivid_archive_synthetic(const size_t *shapes,
                                           size_t n_layers,
                                           uint64_t seed,
                                           struct TrividArchive **out);

/**
 * # Safety
 * `archive` must be a live handle and `path` a NUL-terminated string.
 */
enum TrividStatus trivid_archive_save(const struct TrividArchive *archive, const char *path);

/**
 * Total number of weights; 0 for a null handle.
 *
 * # Safety
 * `archive` must be null or a live handle.
 */
size_t trivid_archive_total_weights(const struct TrividArchive *archive);

/**
 * # Safety
 * `archive` must be null or a handle not yet freed.
 */
void trivid_archive_free(struct TrividArchive *archive);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TrividStatus trivid_mask_load(const char *path, struct TrividMask **out);

/**
 * # Safety
 * `mask` must be a live handle and `path` a NUL-terminated string.
 */
enum TrividStatus trivid_mask_save(const struct TrividMask *mask, const char *path);

/**
 * # Safety
 * `mask` must be a live handle and `out` writable.
 */
enum TrividStatus trivid_mask_pruning_ratio(const struct TrividMask *mask, double *out);

/**
 * # Safety
 * `mask` must be a live handle and `out` writable.
 */
enum TrividStatus trivid_mask_sparse_kernel_ratio(const struct TrividMask *mask, double *out);

/**
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void trivid_mask_free(struct TrividMask *mask);

/**
 * # Safety
 * `archive` must be a live handle and `out` writable.
 */
enum TrividStatus trivid_global_magnitude_mask(const struct TrividArchive *archive,
                                               double ratio,
                                               struct TrividMask **out);

/**
 * Iterative magnitude pruning without retraining.
 *
 * # Safety
 * `archive` must be a live handle and `out` writable.
 */
enum TrividStatus trivid_imp_mask(const struct TrividArchive *archive,
                                  double ratio,
                                  size_t rounds,
                                  struct TrividMask **out);

/**
 * Hardware-aware pattern pruning; writes the final mask.
 *
 * # Safety
 * `archive` must be a live handle and `out` writable.
 */
enum TrividStatus trivid_hardware_prune(const struct TrividArchive *archive,
                                        double ratio,
                                        size_t rounds,
                                        size_t library_size,
                                        size_t target_nnz,
                                        struct TrividMask **out);

/**
 * Synthesizes a scenario from a JSON spec (null for defaults).
 *
 * # Safety
 * `spec_json` must be null or NUL-terminated; `out` writable.
 */
enum TrividStatus trivid_scenario_synth(const char *spec_json,
                                        uint64_t seed,
                                        struct TrividScenario **out);

/**
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t trivid_scenario_n_frames(const struct TrividScenario *scenario);

/**
 * `-IDSw / n'` of the tracker on the kept frames.
 *
 * # Safety
 * `kept` must point to `n` values; `out` writable.
 */
enum TrividStatus trivid_scenario_reward(const struct TrividScenario *scenario,
                                         const bool *kept,
                                         size_t n,
                                         double iou_threshold,
                                         double *out);

/**
 * Tracking scores on the kept frames.
 *
 * # Safety
 * `kept` must point to `n` values; `out` writable.
 */
enum TrividStatus trivid_scenario_evaluate(const struct TrividScenario *scenario,
                                           const bool *kept,
                                           size_t n,
                                           double iou_threshold,
                                           struct TrividMotScores *out);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void trivid_scenario_free(struct TrividScenario *scenario);

/**
 * Latency lower bound in seconds.
 *
 * # Safety
 * `out` must be writable.
 */
enum TrividStatus trivid_roofline_bound(double total_gops, double peak_gops, double *out);

/**
 * Effective frame rate and energy per frame for one configuration.
 *
 * # Safety
 * `out_efr` and `out_energy` must be writable.
 */
enum TrividStatus trivid_efficiency(double latency_ms,
                                    double frame_drop_ratio,
                                    double power_w,
                                    double *out_efr,
                                    double *out_energy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIVID_H */
