#ifndef CASCADE_TUNE_H
#define CASCADE_TUNE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_INVALID_UTF8 = 2,
  /**
   * Rejected configuration or arguments; the message carries the code.
   */
  CT_STATUS_CONFIG = 3,
  /**
   * Simulation, fitting or I/O failure.
   */
  CT_STATUS_RUNTIME = 4,
  CT_STATUS_PANIC = 5,
} CtStatus;

typedef enum CtMethod {
  CT_METHOD_CBO = 0,
  CT_METHOD_SAFEOPT = 1,
} CtMethod;

/**
 * Campaign configuration.
 */
typedef struct CtConfig CtConfig;

/**
 * Finished tuning run.
 */
typedef struct CtReport CtReport;

typedef struct CtEvaluation {
  double cost;
  double constraint;
  bool diverged;
} CtEvaluation;

typedef struct CtSummary {
  double kp;
  double kv;
  /**
   * ms
   */
  double ti;
  double final_cost;
  double constraint;
  size_t iterations;
  size_t violations;
  bool feasible;
} CtSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *ct_last_error(void);

/**
 * Library version, static storage.
 */
const char *ct_version(void);

/**
 * Default campaign configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum CtStatus ct_config_default(struct CtConfig **out);

/**
 * Parses and validates a campaign file.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` writable.
 */
enum CtStatus ct_config_from_toml(const char *text, struct CtConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards. NULL is a no-op.
 */
void ct_config_free(struct CtConfig *cfg);

/**
 * Scores one gain vector with the configured plant, profile, weights and noise.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` writable.
 */
enum CtStatus ct_evaluate(const struct CtConfig *cfg,
                          double kp,
                          double kv,
                          double ti,
                          struct CtEvaluation *out);

/**
 * Runs one tuning repetition. The critical-gain scan runs first when configured.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` writable.
 */
enum CtStatus ct_tune(const struct CtConfig *cfg,
                      enum CtMethod method,
                      uint64_t seed,
                      struct CtReport **out);

/**
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum CtStatus ct_report_summary(const struct CtReport *report, struct CtSummary *out);

/**
 * Report as JSON; release the string with `ct_string_free`.
 *
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum CtStatus ct_report_to_json(const struct CtReport *report, char **out);

/**
 * # Safety
 * `report` must come from this library and not be used afterwards. NULL is a no-op.
 */
void ct_report_free(struct CtReport *report);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. NULL is a no-op.
 */
void ct_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADE_TUNE_H */
