#ifndef UAVMEC_H
#define UAVMEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Optimization policy: the full joint optimizer or one of the baselines.
typedef enum UavmecPolicy {
  UAVMEC_POLICY_JTORATC = 0,
  UAVMEC_POLICY_ROJRATC = 1,
  UAVMEC_POLICY_NOJRATC = 2,
  UAVMEC_POLICY_MOJRATC = 3,
  UAVMEC_POLICY_ERJOTC = 4,
  UAVMEC_POLICY_JORACT = 5,
  UAVMEC_POLICY_JORAPT = 6,
} UavmecPolicy;

// Result code of every fallible call; anything but `Ok` sets the last error.
typedef enum UavmecStatus {
  UAVMEC_STATUS_OK = 0,
  UAVMEC_STATUS_NULL_POINTER = 1,
  UAVMEC_STATUS_INVALID_UTF8 = 2,
  UAVMEC_STATUS_CONFIG_ERROR = 3,
  UAVMEC_STATUS_INVALID_ARGUMENT = 4,
  UAVMEC_STATUS_SOLVER_ERROR = 5,
  UAVMEC_STATUS_PANIC = 6,
} UavmecStatus;

// Opaque scenario handle.
typedef struct UavmecScenario UavmecScenario;

// Opaque solver result.
typedef struct UavmecSolution UavmecSolution;

// Opaque per-user per-slot task schedule.
typedef struct UavmecTasks UavmecTasks;

// Headline metrics of a solution.
typedef struct UavmecMetrics {
  double objective;
  double total_delay_s;
  double total_uav_energy_j;
  double total_offloaded_bits;
  double flight_energy_j;
  double compute_energy_j;
  uint32_t outer_iterations;
  bool converged;
} UavmecMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. Valid until the next `uavmec_*` call on the same thread.
const char *uavmec_last_error(void);

// Library version as a static NUL-terminated string.
const char *uavmec_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a `uavmec_*_to_json` call and not be freed twice.
void uavmec_string_free(char *s);

// Scenario with every parameter at its default.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum UavmecStatus uavmec_scenario_new_default(struct UavmecScenario **out);

// Parses and validates a TOML scenario.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum UavmecStatus uavmec_scenario_from_toml(const char *toml, struct UavmecScenario **out);

// Releases a scenario. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void uavmec_scenario_free(struct UavmecScenario *s);

// User, UAV and slot counts. Any output pointer may be null.
//
// # Safety
// `s` must be a live scenario handle.
enum UavmecStatus uavmec_scenario_dims(const struct UavmecScenario *s,
                                       size_t *n_users,
                                       size_t *n_uavs,
                                       size_t *n_slots);

// Scenario as canonical JSON; free with [`uavmec_string_free`].
//
// # Safety
// `s` must be a live scenario handle; `out` must be writable.
enum UavmecStatus uavmec_scenario_to_json(const struct UavmecScenario *s, char **out);

// Draws the task schedule for `seed`.
//
// # Safety
// `s` must be a live scenario handle; `out` must be writable.
enum UavmecStatus uavmec_tasks_generate(const struct UavmecScenario *s,
                                        uint64_t seed,
                                        struct UavmecTasks **out);

// Total bits over all tasks.
//
// # Safety
// `t` must be a live task handle; `out` must be writable.
enum UavmecStatus uavmec_tasks_total_bits(const struct UavmecTasks *t, double *out);

// Releases a task schedule. Null is ignored.
//
// # Safety
// `t` must come from this library and not be used afterwards.
void uavmec_tasks_free(struct UavmecTasks *t);

// Runs `policy` on the scenario and tasks. `seed` only affects the
// random-offloading baseline.
//
// # Safety
// `s` and `t` must be live handles, `t` generated for `s`; `out` must be writable.
enum UavmecStatus uavmec_solve(const struct UavmecScenario *s,
                               const struct UavmecTasks *t,
                               enum UavmecPolicy policy,
                               uint64_t seed,
                               struct UavmecSolution **out);

// Releases a solution. Null is ignored.
//
// # Safety
// `sol` must come from this library and not be used afterwards.
void uavmec_solution_free(struct UavmecSolution *sol);

// # Safety
// `sol` must be a live solution handle; `out` must be writable.
enum UavmecStatus uavmec_solution_metrics(const struct UavmecSolution *sol,
                                          struct UavmecMetrics *out);

// Position of UAV `m` in slot `n`, written as `xy[0], xy[1]`.
//
// # Safety
// `sol` must be a live solution handle; `xy` must point to two writable doubles.
enum UavmecStatus uavmec_solution_position(const struct UavmecSolution *sol,
                                           size_t m,
                                           size_t n,
                                           double *xy);

// Whether user `u` offloads to UAV `m` in slot `n`.
//
// # Safety
// `sol` must be a live solution handle; `out` must be writable.
enum UavmecStatus uavmec_solution_offloaded(const struct UavmecSolution *sol,
                                            size_t u,
                                            size_t m,
                                            size_t n,
                                            bool *out);

// CPU frequency (Hz) UAV `m` gives user `u` in slot `n`.
//
// # Safety
// `sol` must be a live solution handle; `out` must be writable.
enum UavmecStatus uavmec_solution_allocation(const struct UavmecSolution *sol,
                                             size_t m,
                                             size_t u,
                                             size_t n,
                                             double *out);

// Full solution as JSON; free with [`uavmec_string_free`].
//
// # Safety
// `sol` must be a live solution handle; `out` must be writable.
enum UavmecStatus uavmec_solution_to_json(const struct UavmecSolution *sol, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UAVMEC_H */
