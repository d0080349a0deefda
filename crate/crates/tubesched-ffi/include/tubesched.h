/* C interface to the tubesched scheduling library. */

#ifndef TUBESCHED_H
#define TUBESCHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Scheduling method selector.
 */
typedef enum TsMethod {
  /**
   * Ambiguity tube sized by Wasserstein-robust bounds.
   */
  TS_METHOD_WDR_MPC = 0,
  /**
   * Ambiguity tube sized by empirical quantiles.
   */
  TS_METHOD_SAA_MPC = 1,
  /**
   * No tube; mean disturbance folded into the demand prediction.
   */
  TS_METHOD_NORMAL_MPC = 2,
  /**
   * Single-solve baseline treating disturbances as static uncertainty.
   */
  TS_METHOD_STATIC_DRO = 3,
} TsMethod;

/**
 * Outcome class of a fallible call.
 */
typedef enum TsStatus {
  /**
   * The call succeeded.
   */
  TS_STATUS_OK = 0,
  /**
   * Solver or other internal failure; see `ts_last_error`.
   */
  TS_STATUS_INTERNAL = 1,
  /**
   * A scheduling window had no feasible action.
   */
  TS_STATUS_INFEASIBLE = 2,
  /**
   * Bad argument, configuration, or input data.
   */
  TS_STATUS_BAD_INPUT = 3,
} TsStatus;

/**
 * A loaded network with its renewable and disturbance sample pools.
 * Create with `ts_scenario_load`, destroy with `ts_scenario_free`.
 */
typedef struct TsScenario TsScenario;

/**
 * A committed schedule together with the configuration that produced it.
 * Create with `ts_schedule_solve`, destroy with `ts_schedule_free`.
 */
typedef struct TsSchedule TsSchedule;

/**
 * Stage-1 tube bounds on the disturbance-driven state error.
 * Create with `ts_tube_compute`, destroy with `ts_tube_free`.
 */
typedef struct TsTube TsTube;

/**
 * Plain-data run configuration. Start from `ts_config_default` and adjust
 * fields; invalid combinations are rejected at solve time with
 * `TS_STATUS_BAD_INPUT`.
 */
typedef struct TsConfig {
  /**
   * Wasserstein radius for the renewable forecast-error ambiguity set.
   */
  double epsilon;
  /**
   * CVaR confidence level, shared by both stages.
   */
  double beta;
  /**
   * Weight on the worst-case risk terms.
   */
  double mu1;
  /**
   * Weight on the margin magnitudes.
   */
  double mu2;
  /**
   * Stage-1 tube exclusion weight.
   */
  double mu_tube;
  /**
   * Closed-loop contraction of the error feedback.
   */
  double rho;
  /**
   * Window length of each receding-horizon solve.
   */
  size_t t_c;
  /**
   * Number of committed slots.
   */
  size_t t_l;
  /**
   * Seed for synthesized pools and evaluations.
   */
  uint64_t seed;
  /**
   * Renewable training rows taken from the front of the pool.
   */
  size_t n_static;
  /**
   * Disturbance training rows taken from the front of the pool.
   */
  size_t n_dynamic;
  /**
   * Relative inflation of empirical supports.
   */
  double support_margin;
  /**
   * Solve stage 2 with the exact Wasserstein dual instead of the
   * accelerated form.
   */
  bool exact_dual;
  /**
   * Feasibility residual accepted on reported optima.
   */
  double feas_tol;
  /**
   * Duality-gap residual accepted on reported optima.
   */
  double opt_tol;
} TsConfig;

/**
 * Cost components of a committed schedule. `risk` and `norm` are the
 * unweighted planning terms; money spent is the first three fields.
 */
typedef struct TsCostBreakdown {
  double generation;
  double charging;
  double degradation;
  double risk;
  double norm;
} TsCostBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Message of the most recent failure on the calling thread; empty until a
 * call fails. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *ts_last_error(void);

/**
 * Default run configuration, identical to the CLI's defaults.
 */
struct TsConfig ts_config_default(void);

/**
 * Loads a network JSON file plus optional sample CSVs. A pool passed as
 * NULL is synthesized deterministically from `seed`. Returns NULL on
 * failure; see `ts_last_error`.
 *
 * # Safety
 * `network` must point to a NUL-terminated string; `res_samples` and
 * `disturbances` must each be NULL or point to one.
 */
struct TsScenario *ts_scenario_load(const char *network,
                                    const char *res_samples,
                                    const char *disturbances,
                                    uint64_t seed);

/**
 * Releases a scenario handle. NULL is a no-op.
 *
 * # Safety
 * `scn` must have come from `ts_scenario_load` and not be used afterwards.
 */
void ts_scenario_free(struct TsScenario *scn);

/**
 * Number of buses; 0 when `scn` is NULL.
 *
 * # Safety
 * `scn` must be NULL or a live scenario handle.
 */
size_t ts_scenario_buses(const struct TsScenario *scn);

/**
 * Number of generators; 0 when `scn` is NULL.
 *
 * # Safety
 * `scn` must be NULL or a live scenario handle.
 */
size_t ts_scenario_generators(const struct TsScenario *scn);

/**
 * Number of charging stations; 0 when `scn` is NULL.
 *
 * # Safety
 * `scn` must be NULL or a live scenario handle.
 */
size_t ts_scenario_stations(const struct TsScenario *scn);

/**
 * Number of usable time slots (the shortest bundled series); 0 when `scn`
 * is NULL.
 *
 * # Safety
 * `scn` must be NULL or a live scenario handle.
 */
size_t ts_scenario_horizon(const struct TsScenario *scn);

/**
 * Runs one full scheduling pass. On success stores a new schedule handle in
 * `out`; on failure stores NULL and returns the error class.
 *
 * # Safety
 * `scn` must be a live scenario handle, `cfg` must point to a `TsConfig`,
 * and `out` must point to writable storage for one pointer.
 */
enum TsStatus ts_schedule_solve(const struct TsScenario *scn,
                                const struct TsConfig *cfg,
                                enum TsMethod method,
                                struct TsSchedule **out);

/**
 * Releases a schedule handle. NULL is a no-op.
 *
 * # Safety
 * `sched` must have come from `ts_schedule_solve` and not be used afterwards.
 */
void ts_schedule_free(struct TsSchedule *sched);

/**
 * Number of committed slots; 0 when `sched` is NULL.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle.
 */
size_t ts_schedule_slots(const struct TsSchedule *sched);

/**
 * Weighted planning objective over the committed slots (money terms plus
 * the weighted risk and margin terms); NaN when `sched` is NULL.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle.
 */
double ts_schedule_objective(const struct TsSchedule *sched);

/**
 * Money spent by the committed schedule: generation plus charging plus
 * battery wear, no planning terms. NaN when `sched` is NULL.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle.
 */
double ts_schedule_operational_cost(const struct TsSchedule *sched);

/**
 * Offline (tube-sizing) wall-clock time in seconds; NaN when `sched` is
 * NULL, 0 for methods with no offline stage.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle.
 */
double ts_schedule_offline_seconds(const struct TsSchedule *sched);

/**
 * Copies the cost components into `out`.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `out` must point to
 * writable storage for one `TsCostBreakdown`.
 */
enum TsStatus ts_schedule_cost(const struct TsSchedule *sched, struct TsCostBreakdown *out);

/**
 * Copies slot `slot`'s active generation, one value per generator in
 * network order. `len` must equal `ts_scenario_generators`.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `buf` must point to `len`
 * writable doubles.
 */
enum TsStatus ts_schedule_gen_p(const struct TsSchedule *sched,
                                size_t slot,
                                double *buf,
                                size_t len);

/**
 * Copies slot `slot`'s reserve participation factors, one per generator.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `buf` must point to `len`
 * writable doubles.
 */
enum TsStatus ts_schedule_gen_alpha(const struct TsSchedule *sched,
                                    size_t slot,
                                    double *buf,
                                    size_t len);

/**
 * Copies slot `slot`'s battery power, one value per station (positive
 * charges). `len` must equal `ts_scenario_stations`.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `buf` must point to `len`
 * writable doubles.
 */
enum TsStatus ts_schedule_station_p(const struct TsSchedule *sched,
                                    size_t slot,
                                    double *buf,
                                    size_t len);

/**
 * Copies slot `slot`'s nominal voltage magnitudes, one value per bus.
 * `len` must equal `ts_scenario_buses`.
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `buf` must point to `len`
 * writable doubles.
 */
enum TsStatus ts_schedule_voltage(const struct TsSchedule *sched,
                                  size_t slot,
                                  double *buf,
                                  size_t len);

/**
 * Copies the state of charge at the start of slot `t`, one value per
 * station. `t` ranges over `0..=ts_schedule_slots` (the last entry is the
 * post-horizon state).
 *
 * # Safety
 * `sched` must be NULL or a live schedule handle; `buf` must point to `len`
 * writable doubles.
 */
enum TsStatus ts_schedule_soc(const struct TsSchedule *sched, size_t t, double *buf, size_t len);

/**
 * Sizes the stage-1 tube for a tube-building method (WdrMpc or SaaMpc),
 * running the same offline pass as a full solve. On success stores a new
 * tube handle in `out`; on failure stores NULL and returns the error class.
 * Fails with `TS_STATUS_BAD_INPUT` when the method sizes no tube or the
 * network has no stations.
 *
 * # Safety
 * `scn` must be a live scenario handle, `cfg` must point to a `TsConfig`,
 * and `out` must point to writable storage for one pointer.
 */
enum TsStatus ts_tube_compute(const struct TsScenario *scn,
                              const struct TsConfig *cfg,
                              enum TsMethod method,
                              struct TsTube **out);

/**
 * Releases a tube handle. NULL is a no-op.
 *
 * # Safety
 * `tube` must have come from `ts_tube_compute` and not be used afterwards.
 */
void ts_tube_free(struct TsTube *tube);

/**
 * Error-state dimension (station count); 0 when `tube` is NULL.
 *
 * # Safety
 * `tube` must be NULL or a live tube handle.
 */
size_t ts_tube_dim(const struct TsTube *tube);

/**
 * Number of tube slots; 0 when `tube` is NULL.
 *
 * # Safety
 * `tube` must be NULL or a live tube handle.
 */
size_t ts_tube_horizon(const struct TsTube *tube);

/**
 * Sum of all bound widths; NaN when `tube` is NULL.
 *
 * # Safety
 * `tube` must be NULL or a live tube handle.
 */
double ts_tube_total_width(const struct TsTube *tube);

/**
 * Stores the lower and upper error bound for slot `slot`, coordinate `dim`.
 * Slot 0 is exactly (0, 0).
 *
 * # Safety
 * `tube` must be NULL or a live tube handle; `lo` and `hi` must point to
 * writable doubles.
 */
enum TsStatus ts_tube_bound(const struct TsTube *tube,
                            size_t slot,
                            size_t dim,
                            double *lo,
                            double *hi);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TUBESCHED_H */
