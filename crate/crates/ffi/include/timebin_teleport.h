#ifndef TIMEBIN_TELEPORT_H
#define TIMEBIN_TELEPORT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  TBT_STATUS_OK = 0,
  TBT_STATUS_NULL_POINTER = 1,
  TBT_STATUS_INVALID_ARGUMENT = 2,
  TBT_STATUS_CONFIG = 3,
  TBT_STATUS_IO = 4,
  TBT_STATUS_SCHEMA = 5,
  TBT_STATUS_NOT_FOUND = 6,
  TBT_STATUS_NUMERICAL = 7,
  TBT_STATUS_PANIC = 99,
} TbtStatus;

/**
 * Analyser settings / cardinal states.
 */
typedef enum {
  TBT_SETTING_E = 0,
  TBT_SETTING_L = 1,
  TBT_SETTING_PLUS = 2,
  TBT_SETTING_MINUS = 3,
  TBT_SETTING_PLUS_I = 4,
  TBT_SETTING_MINUS_I = 5,
} TbtSetting;

/**
 * Experiment configuration.
 */
typedef struct TbtConfig TbtConfig;

/**
 * Triple-coincidence table.
 */
typedef struct TbtCountTable TbtCountTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tbt_last_error(void);

/**
 * Bundled paper-default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
TbtStatus tbt_config_paper_default(TbtConfig **out);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
TbtStatus tbt_config_from_toml(const char *toml, TbtConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle from this library.
 */
TbtStatus tbt_config_set_seed(TbtConfig *cfg, uint64_t seed);

/**
 * Sets the integration time per (state, setting, μ_A) cell, in seconds.
 *
 * # Safety
 * `cfg` must be a live handle from this library.
 */
TbtStatus tbt_config_set_duration(TbtConfig *cfg, double seconds);

/**
 * # Safety
 * `cfg` must be NULL or a handle from this library not yet freed.
 */
void tbt_config_free(TbtConfig *cfg);

/**
 * Expected HOM-monitor coincidences per 10 s window at arrival-time
 * difference `delta_t_ps`, for the configured signal level and scan state.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
TbtStatus tbt_hom_rate(const TbtConfig *cfg, double delta_t_ps, double *out);

/**
 * Runs every configured cell and returns the resulting table.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
TbtStatus tbt_simulate(const TbtConfig *cfg, TbtCountTable **out);

/**
 * Reads a count table CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
TbtStatus tbt_count_table_read(const char *path, TbtCountTable **out);

/**
 * Writes a count table CSV.
 *
 * # Safety
 * `table` must be a live handle; `path` a NUL-terminated string.
 */
TbtStatus tbt_count_table_write(const TbtCountTable *table, const char *path);

/**
 * Looks up one cell. Returns `TBT_STATUS_NOT_FOUND` if absent.
 *
 * # Safety
 * `table` must be a live handle; the output pointers must be writable.
 */
TbtStatus tbt_count_table_get(const TbtCountTable *table,
                              TbtSetting prepared,
                              TbtSetting setting,
                              double mu_a,
                              uint64_t *triples,
                              uint64_t *bsm_flags,
                              double *elapsed_s);

/**
 * # Safety
 * `table` must be a live handle.
 */
uintptr_t tbt_count_table_len(const TbtCountTable *table);

/**
 * # Safety
 * `table` must be NULL or a handle from this library not yet freed.
 */
void tbt_count_table_free(TbtCountTable *table);

/**
 * Weighted average fidelity (1:1:2:2 over e, ℓ, +, +i) from tomography at `mu_a`.
 *
 * # Safety
 * `table` must be a live handle; `out` must be writable.
 */
TbtStatus tbt_average_fidelity(const TbtCountTable *table, double mu_a, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMEBIN_TELEPORT_H */
