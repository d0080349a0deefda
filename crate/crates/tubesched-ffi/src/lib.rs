//! C interface to the scheduling library.
//!
//! The API follows the usual C-library conventions: opaque handles created
//! and destroyed by paired functions, integer status codes for fallible
//! calls, caller-owned output buffers whose lengths are validated, and a
//! thread-local message describing the most recent failure. Every entry
//! point catches panics so no unwind ever crosses the C boundary.
//!
//! Status codes match the CLI's exit codes: 0 success, 1 internal failure,
//! 2 infeasible scheduling window, 3 bad input or configuration.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tubesched::harness::{run_method, HarnessError, Method, MethodRun, RunConfig, Scenario};
use tubesched::sched::SchedError;
use tubesched::tube::AmbiguityTube;

/// Outcome class of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsStatus {
    /// The call succeeded.
    Ok = 0,
    /// Solver or other internal failure; see `ts_last_error`.
    Internal = 1,
    /// A scheduling window had no feasible action.
    Infeasible = 2,
    /// Bad argument, configuration, or input data.
    BadInput = 3,
}

/// Scheduling method selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsMethod {
    /// Ambiguity tube sized by Wasserstein-robust bounds.
    WdrMpc = 0,
    /// Ambiguity tube sized by empirical quantiles.
    SaaMpc = 1,
    /// No tube; mean disturbance folded into the demand prediction.
    NormalMpc = 2,
    /// Single-solve baseline treating disturbances as static uncertainty.
    StaticDro = 3,
}

impl TsMethod {
    fn to_method(self) -> Method {
        match self {
            TsMethod::WdrMpc => Method::WdrMpc,
            TsMethod::SaaMpc => Method::SaaMpc,
            TsMethod::NormalMpc => Method::NormalMpc,
            TsMethod::StaticDro => Method::StaticDro,
        }
    }
}

/// Plain-data run configuration. Start from `ts_config_default` and adjust
/// fields; invalid combinations are rejected at solve time with
/// `TS_STATUS_BAD_INPUT`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TsConfig {
    /// Wasserstein radius for the renewable forecast-error ambiguity set.
    pub epsilon: f64,
    /// CVaR confidence level, shared by both stages.
    pub beta: f64,
    /// Weight on the worst-case risk terms.
    pub mu1: f64,
    /// Weight on the margin magnitudes.
    pub mu2: f64,
    /// Stage-1 tube exclusion weight.
    pub mu_tube: f64,
    /// Closed-loop contraction of the error feedback.
    pub rho: f64,
    /// Window length of each receding-horizon solve.
    pub t_c: usize,
    /// Number of committed slots.
    pub t_l: usize,
    /// Seed for synthesized pools and evaluations.
    pub seed: u64,
    /// Renewable training rows taken from the front of the pool.
    pub n_static: usize,
    /// Disturbance training rows taken from the front of the pool.
    pub n_dynamic: usize,
    /// Relative inflation of empirical supports.
    pub support_margin: f64,
    /// Solve stage 2 with the exact Wasserstein dual instead of the
    /// accelerated form.
    pub exact_dual: bool,
    /// Feasibility residual accepted on reported optima.
    pub feas_tol: f64,
    /// Duality-gap residual accepted on reported optima.
    pub opt_tol: f64,
}

impl TsConfig {
    fn to_run_config(self) -> RunConfig {
        RunConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            mu1: self.mu1,
            mu2: self.mu2,
            mu_tube: self.mu_tube,
            rho: self.rho,
            t_c: self.t_c,
            t_l: self.t_l,
            seed: self.seed,
            n_static: self.n_static,
            n_dynamic: self.n_dynamic,
            support_margin: self.support_margin,
            exact_dual: self.exact_dual,
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
        }
    }

    fn from_run_config(cfg: RunConfig) -> TsConfig {
        TsConfig {
            epsilon: cfg.epsilon,
            beta: cfg.beta,
            mu1: cfg.mu1,
            mu2: cfg.mu2,
            mu_tube: cfg.mu_tube,
            rho: cfg.rho,
            t_c: cfg.t_c,
            t_l: cfg.t_l,
            seed: cfg.seed,
            n_static: cfg.n_static,
            n_dynamic: cfg.n_dynamic,
            support_margin: cfg.support_margin,
            exact_dual: cfg.exact_dual,
            feas_tol: cfg.feas_tol,
            opt_tol: cfg.opt_tol,
        }
    }
}

/// Cost components of a committed schedule. `risk` and `norm` are the
/// unweighted planning terms; money spent is the first three fields.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TsCostBreakdown {
    pub generation: f64,
    pub charging: f64,
    pub degradation: f64,
    pub risk: f64,
    pub norm: f64,
}

/// A loaded network with its renewable and disturbance sample pools.
/// Create with `ts_scenario_load`, destroy with `ts_scenario_free`.
pub struct TsScenario {
    inner: Scenario,
}

/// A committed schedule together with the configuration that produced it.
/// Create with `ts_schedule_solve`, destroy with `ts_schedule_free`.
pub struct TsSchedule {
    run: MethodRun,
    cfg: RunConfig,
}

/// Stage-1 tube bounds on the disturbance-driven state error.
/// Create with `ts_tube_compute`, destroy with `ts_tube_free`.
pub struct TsTube {
    inner: AmbiguityTube,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
}

fn status_for(err: &HarnessError) -> TsStatus {
    match err {
        HarnessError::Sched(SchedError::InfeasibleWindow { .. }) => TsStatus::Infeasible,
        HarnessError::Config(_)
        | HarnessError::Data(_)
        | HarnessError::Grid(_)
        | HarnessError::Io(_) => TsStatus::BadInput,
        _ => TsStatus::Internal,
    }
}

fn fail_with(err: &HarnessError) -> TsStatus {
    set_error(&err.to_string());
    status_for(err)
}

/// Runs `body` with a panic trap so no unwind crosses the C boundary.
fn guarded<T>(fallback: T, body: impl FnOnce() -> T) -> T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic");
            fallback
        }
    }
}

/// NULL stays `None`; non-NULL must be NUL-terminated UTF-8.
unsafe fn path_arg(ptr: *const c_char) -> Result<Option<PathBuf>, String> {
    if ptr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Some(PathBuf::from(s))),
        Err(_) => Err("path is not valid UTF-8".into()),
    }
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, what: &str) -> TsStatus {
    if buf.is_null() {
        set_error("output buffer is NULL");
        return TsStatus::BadInput;
    }
    if len != src.len() {
        set_error(&format!("{what} needs a buffer of {} values, got {len}", src.len()));
        return TsStatus::BadInput;
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    TsStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread; empty until a
/// call fails. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default run configuration, identical to the CLI's defaults.
#[no_mangle]
pub extern "C" fn ts_config_default() -> TsConfig {
    TsConfig::from_run_config(RunConfig::default())
}

/// Loads a network JSON file plus optional sample CSVs. A pool passed as
/// NULL is synthesized deterministically from `seed`. Returns NULL on
/// failure; see `ts_last_error`.
///
/// # Safety
/// `network` must point to a NUL-terminated string; `res_samples` and
/// `disturbances` must each be NULL or point to one.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_load(
    network: *const c_char,
    res_samples: *const c_char,
    disturbances: *const c_char,
    seed: u64,
) -> *mut TsScenario {
    guarded(ptr::null_mut(), || {
        let network = match path_arg(network) {
            Ok(Some(p)) => p,
            Ok(None) => {
                set_error("network path is NULL");
                return ptr::null_mut();
            }
            Err(e) => {
                set_error(&e);
                return ptr::null_mut();
            }
        };
        let (res, dist) = match (path_arg(res_samples), path_arg(disturbances)) {
            (Ok(r), Ok(d)) => (r, d),
            (Err(e), _) | (_, Err(e)) => {
                set_error(&e);
                return ptr::null_mut();
            }
        };
        match Scenario::load(&network, res.as_deref(), dist.as_deref(), seed) {
            Ok(inner) => Box::into_raw(Box::new(TsScenario { inner })),
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    })
}

/// Releases a scenario handle. NULL is a no-op.
///
/// # Safety
/// `scn` must have come from `ts_scenario_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_free(scn: *mut TsScenario) {
    if !scn.is_null() {
        drop(Box::from_raw(scn));
    }
}

/// Number of buses; 0 when `scn` is NULL.
///
/// # Safety
/// `scn` must be NULL or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_buses(scn: *const TsScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.inner.grid.num_buses())
}

/// Number of generators; 0 when `scn` is NULL.
///
/// # Safety
/// `scn` must be NULL or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_generators(scn: *const TsScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.inner.grid.net.generators.len())
}

/// Number of charging stations; 0 when `scn` is NULL.
///
/// # Safety
/// `scn` must be NULL or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_stations(scn: *const TsScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.inner.grid.net.stations.len())
}

/// Number of usable time slots (the shortest bundled series); 0 when `scn`
/// is NULL.
///
/// # Safety
/// `scn` must be NULL or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_horizon(scn: *const TsScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.inner.horizon)
}

/// Runs one full scheduling pass. On success stores a new schedule handle in
/// `out`; on failure stores NULL and returns the error class.
///
/// # Safety
/// `scn` must be a live scenario handle, `cfg` must point to a `TsConfig`,
/// and `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_solve(
    scn: *const TsScenario,
    cfg: *const TsConfig,
    method: TsMethod,
    out: *mut *mut TsSchedule,
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        if out.is_null() {
            set_error("out is NULL");
            return TsStatus::BadInput;
        }
        *out = ptr::null_mut();
        let Some(scn) = scn.as_ref() else {
            set_error("scenario is NULL");
            return TsStatus::BadInput;
        };
        let Some(cfg) = cfg.as_ref() else {
            set_error("config is NULL");
            return TsStatus::BadInput;
        };
        let run_cfg = cfg.to_run_config();
        match run_method(&scn.inner, &run_cfg, method.to_method()) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(TsSchedule { run, cfg: run_cfg }));
                TsStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a schedule handle. NULL is a no-op.
///
/// # Safety
/// `sched` must have come from `ts_schedule_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_free(sched: *mut TsSchedule) {
    if !sched.is_null() {
        drop(Box::from_raw(sched));
    }
}

/// Number of committed slots; 0 when `sched` is NULL.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_slots(sched: *const TsSchedule) -> usize {
    sched.as_ref().map_or(0, |s| s.run.result.committed.len())
}

/// Weighted planning objective over the committed slots (money terms plus
/// the weighted risk and margin terms); NaN when `sched` is NULL.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_objective(sched: *const TsSchedule) -> f64 {
    sched.as_ref().map_or(f64::NAN, |s| {
        s.run.result.cost.weighted_total(&s.cfg.weights())
    })
}

/// Money spent by the committed schedule: generation plus charging plus
/// battery wear, no planning terms. NaN when `sched` is NULL.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_operational_cost(sched: *const TsSchedule) -> f64 {
    sched.as_ref().map_or(f64::NAN, |s| s.run.result.cost.operational())
}

/// Offline (tube-sizing) wall-clock time in seconds; NaN when `sched` is
/// NULL, 0 for methods with no offline stage.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_offline_seconds(sched: *const TsSchedule) -> f64 {
    sched.as_ref().map_or(f64::NAN, |s| s.run.offline_time.as_secs_f64())
}

/// Copies the cost components into `out`.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `out` must point to
/// writable storage for one `TsCostBreakdown`.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_cost(
    sched: *const TsSchedule,
    out: *mut TsCostBreakdown,
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        let Some(s) = sched.as_ref() else {
            set_error("schedule is NULL");
            return TsStatus::BadInput;
        };
        if out.is_null() {
            set_error("out is NULL");
            return TsStatus::BadInput;
        }
        let c = &s.run.result.cost;
        *out = TsCostBreakdown {
            generation: c.generation,
            charging: c.charging,
            degradation: c.degradation,
            risk: c.risk,
            norm: c.norm,
        };
        TsStatus::Ok
    })
}

unsafe fn slot_field(
    sched: *const TsSchedule,
    slot: usize,
    buf: *mut f64,
    len: usize,
    what: &str,
    pick: impl Fn(&tubesched::sched::ControlAction) -> &[f64],
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        let Some(s) = sched.as_ref() else {
            set_error("schedule is NULL");
            return TsStatus::BadInput;
        };
        let Some(action) = s.run.result.committed.get(slot) else {
            set_error(&format!(
                "slot {slot} out of range, schedule has {}",
                s.run.result.committed.len()
            ));
            return TsStatus::BadInput;
        };
        copy_out(pick(action), buf, len, what)
    })
}

/// Copies slot `slot`'s active generation, one value per generator in
/// network order. `len` must equal `ts_scenario_generators`.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_gen_p(
    sched: *const TsSchedule,
    slot: usize,
    buf: *mut f64,
    len: usize,
) -> TsStatus {
    slot_field(sched, slot, buf, len, "gen_p", |a| &a.gen_p)
}

/// Copies slot `slot`'s reserve participation factors, one per generator.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_gen_alpha(
    sched: *const TsSchedule,
    slot: usize,
    buf: *mut f64,
    len: usize,
) -> TsStatus {
    slot_field(sched, slot, buf, len, "gen_alpha", |a| &a.gen_alpha)
}

/// Copies slot `slot`'s battery power, one value per station (positive
/// charges). `len` must equal `ts_scenario_stations`.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_station_p(
    sched: *const TsSchedule,
    slot: usize,
    buf: *mut f64,
    len: usize,
) -> TsStatus {
    slot_field(sched, slot, buf, len, "station_p", |a| &a.station_p)
}

/// Copies slot `slot`'s nominal voltage magnitudes, one value per bus.
/// `len` must equal `ts_scenario_buses`.
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_voltage(
    sched: *const TsSchedule,
    slot: usize,
    buf: *mut f64,
    len: usize,
) -> TsStatus {
    slot_field(sched, slot, buf, len, "voltage", |a| &a.voltage)
}

/// Copies the state of charge at the start of slot `t`, one value per
/// station. `t` ranges over `0..=ts_schedule_slots` (the last entry is the
/// post-horizon state).
///
/// # Safety
/// `sched` must be NULL or a live schedule handle; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_schedule_soc(
    sched: *const TsSchedule,
    t: usize,
    buf: *mut f64,
    len: usize,
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        let Some(s) = sched.as_ref() else {
            set_error("schedule is NULL");
            return TsStatus::BadInput;
        };
        let Some(soc) = s.run.result.soc_trajectory.get(t) else {
            set_error(&format!(
                "t {t} out of range, trajectory has {} states",
                s.run.result.soc_trajectory.len()
            ));
            return TsStatus::BadInput;
        };
        copy_out(soc, buf, len, "soc")
    })
}

/// Sizes the stage-1 tube for a tube-building method (WdrMpc or SaaMpc),
/// running the same offline pass as a full solve. On success stores a new
/// tube handle in `out`; on failure stores NULL and returns the error class.
/// Fails with `TS_STATUS_BAD_INPUT` when the method sizes no tube or the
/// network has no stations.
///
/// # Safety
/// `scn` must be a live scenario handle, `cfg` must point to a `TsConfig`,
/// and `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_compute(
    scn: *const TsScenario,
    cfg: *const TsConfig,
    method: TsMethod,
    out: *mut *mut TsTube,
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        if out.is_null() {
            set_error("out is NULL");
            return TsStatus::BadInput;
        }
        *out = ptr::null_mut();
        let Some(scn) = scn.as_ref() else {
            set_error("scenario is NULL");
            return TsStatus::BadInput;
        };
        let Some(cfg) = cfg.as_ref() else {
            set_error("config is NULL");
            return TsStatus::BadInput;
        };
        if !matches!(method, TsMethod::WdrMpc | TsMethod::SaaMpc) {
            set_error("method does not size a tube");
            return TsStatus::BadInput;
        }
        match run_method(&scn.inner, &cfg.to_run_config(), method.to_method()) {
            Ok(run) => match run.tube {
                Some(inner) => {
                    *out = Box::into_raw(Box::new(TsTube { inner }));
                    TsStatus::Ok
                }
                None => {
                    set_error("network has no stations, nothing to size");
                    TsStatus::BadInput
                }
            },
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a tube handle. NULL is a no-op.
///
/// # Safety
/// `tube` must have come from `ts_tube_compute` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_free(tube: *mut TsTube) {
    if !tube.is_null() {
        drop(Box::from_raw(tube));
    }
}

/// Error-state dimension (station count); 0 when `tube` is NULL.
///
/// # Safety
/// `tube` must be NULL or a live tube handle.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_dim(tube: *const TsTube) -> usize {
    tube.as_ref().map_or(0, |t| t.inner.dim)
}

/// Number of tube slots; 0 when `tube` is NULL.
///
/// # Safety
/// `tube` must be NULL or a live tube handle.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_horizon(tube: *const TsTube) -> usize {
    tube.as_ref().map_or(0, |t| t.inner.horizon)
}

/// Sum of all bound widths; NaN when `tube` is NULL.
///
/// # Safety
/// `tube` must be NULL or a live tube handle.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_total_width(tube: *const TsTube) -> f64 {
    tube.as_ref().map_or(f64::NAN, |t| t.inner.total_width())
}

/// Stores the lower and upper error bound for slot `slot`, coordinate `dim`.
/// Slot 0 is exactly (0, 0).
///
/// # Safety
/// `tube` must be NULL or a live tube handle; `lo` and `hi` must point to
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_tube_bound(
    tube: *const TsTube,
    slot: usize,
    dim: usize,
    lo: *mut f64,
    hi: *mut f64,
) -> TsStatus {
    guarded(TsStatus::Internal, || {
        let Some(t) = tube.as_ref() else {
            set_error("tube is NULL");
            return TsStatus::BadInput;
        };
        if lo.is_null() || hi.is_null() {
            set_error("output pointer is NULL");
            return TsStatus::BadInput;
        }
        let Some(pair) = t.inner.bounds.get(slot).and_then(|row| row.get(dim)) else {
            set_error(&format!(
                "bound ({slot}, {dim}) out of range for a {}-slot, {}-dim tube",
                t.inner.horizon, t.inner.dim
            ));
            return TsStatus::BadInput;
        };
        *lo = pair.0;
        *hi = pair.1;
        TsStatus::Ok
    })
}
