#ifndef FEDCOND_H
#define FEDCOND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. `FEDCOND_STATUS_OK` is zero; pipeline failures map to the
 * stage that failed.
 */
typedef enum FedcondStatus {
  FEDCOND_STATUS_OK = 0,
  FEDCOND_STATUS_NULL_ARGUMENT = 1,
  FEDCOND_STATUS_INVALID_ARGUMENT = 2,
  FEDCOND_STATUS_CONFIG = 3,
  FEDCOND_STATUS_LOAD = 4,
  FEDCOND_STATUS_PARTITION = 5,
  FEDCOND_STATUS_FINGERPRINT = 6,
  FEDCOND_STATUS_TRAIN = 7,
  FEDCOND_STATUS_EVALUATE = 8,
  FEDCOND_STATUS_EMIT = 9,
  FEDCOND_STATUS_PANIC = 10,
} FedcondStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct FedcondConfig FedcondConfig;

/**
 * Opaque run report.
 */
typedef struct FedcondReport FedcondReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedcond_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *fedcond_last_error(void);

/**
 * Top-`l` eigenvalue fingerprint of one client.
 *
 * `features` is row-major `rows x feature_dim`; `labels` has `rows`
 * entries below `class_count`; `out` receives `l` values.
 *
 * # Safety
 * All pointers must be valid for the sizes given.
 */
enum FedcondStatus fedcond_fingerprint(const double *features,
                                       const size_t *labels,
                                       size_t rows,
                                       size_t feature_dim,
                                       size_t class_count,
                                       size_t l,
                                       double *out);

/**
 * Adjusted Rand index between two labelings of `n` items.
 *
 * # Safety
 * `truth` and `estimate` must hold `n` entries; `out` must be writable.
 */
enum FedcondStatus fedcond_ari(const size_t *truth, const size_t *estimate, size_t n, double *out);

/**
 * Parses and validates a TOML experiment config.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum FedcondStatus fedcond_config_from_toml(const char *text, struct FedcondConfig **out);

/**
 * # Safety
 * `config` must come from [`fedcond_config_from_toml`].
 */
enum FedcondStatus fedcond_config_set_seed(struct FedcondConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must come from [`fedcond_config_from_toml`] or be null.
 */
void fedcond_config_free(struct FedcondConfig *config);

/**
 * Runs the experiment. `data_root` may be null to use the environment
 * default. Nothing is written to disk; see [`fedcond_report_write`].
 *
 * # Safety
 * `config` must be a live handle; `data_root` null or NUL-terminated;
 * `out` writable.
 */
enum FedcondStatus fedcond_run(const struct FedcondConfig *config,
                               const char *data_root,
                               uint32_t threads,
                               struct FedcondReport **out);

/**
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum FedcondStatus fedcond_report_strategy_count(const struct FedcondReport *report, size_t *out);

/**
 * Name, mean accuracy and ARI (NaN for non-clustering strategies) of the
 * `index`-th strategy. `name` stays valid while the report lives.
 *
 * # Safety
 * `report` must be a live handle; output pointers writable.
 */
enum FedcondStatus fedcond_report_strategy(const struct FedcondReport *report,
                                           size_t index,
                                           const char **name,
                                           double *mean_accuracy,
                                           double *ari);

/**
 * Full report as JSON. Free the string with [`fedcond_string_free`].
 *
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum FedcondStatus fedcond_report_to_json(const struct FedcondReport *report, char **out);

/**
 * Writes report files into `dir`.
 *
 * # Safety
 * `report` must be a live handle; `dir` NUL-terminated.
 */
enum FedcondStatus fedcond_report_write(const struct FedcondReport *report,
                                        const char *dir,
                                        bool json,
                                        bool csv);

/**
 * # Safety
 * `report` must come from [`fedcond_run`] or be null.
 */
void fedcond_report_free(struct FedcondReport *report);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void fedcond_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCOND_H */
