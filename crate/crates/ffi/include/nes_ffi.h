#ifndef NES_FFI_H
#define NES_FFI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum NesStatus {
  NES_STATUS_OK = 0,
  NES_STATUS_NULL_POINTER = 1,
  NES_STATUS_INVALID_ARGUMENT = 2,
  NES_STATUS_SCHEMA = 3,
  NES_STATUS_ASSUMPTION_VIOLATED = 4,
  NES_STATUS_SYNTHESIS = 5,
  NES_STATUS_DIVERGENCE = 6,
  NES_STATUS_BUFFER_TOO_SMALL = 7,
  NES_STATUS_IO = 8,
  NES_STATUS_INTERNAL = 9,
} NesStatus;

/**
 * A finished simulation.
 */
typedef struct NesRun NesRun;

/**
 * A validated scenario.
 */
typedef struct NesScenario NesScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library; valid until the next call.
 */
const char *nes_last_error(void);

/**
 * Parses and validates a scenario document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NesStatus nes_scenario_from_json(const char *json, struct NesScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NesStatus nes_scenario_from_file(const char *path, struct NesScenario **out);

/**
 * # Safety
 * `s` must come from a scenario constructor and not be used afterwards.
 */
void nes_scenario_free(struct NesScenario *s);

/**
 * Applies one `key`/`value` override, e.g. `"alpha"`, `"0.02"`. The
 * scenario is left unchanged on failure.
 *
 * # Safety
 * `s` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum NesStatus nes_scenario_set(struct NesScenario *s, const char *key, const char *value);

/**
 * Number of agents, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t nes_scenario_agent_count(const struct NesScenario *s);

/**
 * Decision dimension, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t nes_scenario_dim(const struct NesScenario *s);

/**
 * Writes the equilibrium row-major (`agents x dim`) into `out`.
 *
 * # Safety
 * `s` must be a live handle and `out` must hold `len` doubles.
 */
enum NesStatus nes_oracle(const struct NesScenario *s, double *out, size_t len);

/**
 * Simulates the scenario with its own run settings.
 *
 * # Safety
 * `s` must be a live handle and `out` a valid pointer.
 */
enum NesStatus nes_run(const struct NesScenario *s, struct NesRun **out);

/**
 * # Safety
 * `r` must come from [`nes_run`] and not be used afterwards.
 */
void nes_run_free(struct NesRun *r);

/**
 * Rounds executed, or 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
size_t nes_run_iterations(const struct NesRun *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
bool nes_run_converged(const struct NesRun *r);

/**
 * Final references, row-major (`agents x dim`).
 *
 * # Safety
 * `r` must be a live handle and `out` must hold `len` doubles.
 */
enum NesStatus nes_run_final_xi(const struct NesRun *r, double *out, size_t len);

/**
 * Writes the trajectory CSV to `path`.
 *
 * # Safety
 * `r` must be a live handle and `path` a NUL-terminated string.
 */
enum NesStatus nes_run_write_csv(const struct NesRun *r, const char *path);

/**
 * Run summary as JSON. Release the string with [`nes_string_free`].
 *
 * # Safety
 * `r` must be a live handle and `out` a valid pointer.
 */
enum NesStatus nes_run_summary_json(const struct NesRun *r, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void nes_string_free(char *s);

/**
 * Synthesizes tracking gains for `x' = Ax + Bu, y = Cx` with `n` states,
 * `m` inputs and `p` outputs. All matrices are row-major: `A` is `n x n`,
 * `B` is `n x m`, `C` is `p x n`. Writes `K` (`m x n`), `Psi` (`n x p`)
 * and `G` (`m x p`).
 *
 * # Safety
 * Every pointer must reference at least the stated number of doubles.
 */
enum NesStatus nes_synthesize_gains(size_t n,
                                    size_t m,
                                    size_t p,
                                    const double *a,
                                    const double *b,
                                    const double *c,
                                    double state_weight,
                                    double input_weight,
                                    double *k_out,
                                    double *psi_out,
                                    double *g_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NES_FFI_H */
