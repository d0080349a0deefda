//! Stage-2 window scheduling: assembles the per-window dispatch LP and runs
//! the receding-horizon loop that commits first-slot actions.
//!
//! The window problem is built in a reduced variable space. Bus voltages,
//! line flows, and station draws are affine functions of the generator and
//! battery decisions on a radial feeder, so they are substituted out and
//! reconstructed after the solve; the only explicit network rows are the
//! system-wide active and reactive balances. Renewable forecast-error risk
//! enters through two families of margin variables:
//!
//! * generator margins `d_g`/`u_g`: headroom between the dispatch point and
//!   the generator's floor and ceiling, which the error-driven reserve
//!   response `alpha_k * sum(xi)` must fit inside, and
//! * voltage margins `d_v`/`u_v`: headroom between the nominal voltage and
//!   its bounds, absorbing the voltage shift induced by the forecast error
//!   through the network sensitivity rows.
//!
//! The robust tail cost of those one-sided exceedances is the Wasserstein
//! worst case of a two-sided CVaR. By default it is attached in accelerated
//! form, which collapses to terms linear in the decisions (empirical CVaR
//! constants for the sampled error, plus a radius term proportional to the
//! loss Lipschitz constant), so the LP size does not depend on the sample
//! count. The exact dual can be requested instead for validation; it carries
//! per-sample epigraph variables and support-vertex rows.
//!
//! Battery state evolves by the nominal recursion `SoC(t+1) = SoC(t) +
//! P^B(t)` with `P^B` expressed in energy per slot. Tube-tightened bounds,
//! when provided, are applied at absolute slot indices: the window's first
//! state is a realized parameter and is never constrained.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::SampleSet;
use crate::dro::{cvar_empirical, var_empirical, DroError};
use crate::grid::{GridError, GridModel, Station};
use crate::lp::{LinExpr, LinearProgram, LpError, LpStatus, Rel, VarId};
use crate::tube::TightenedSets;

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("bad risk weights: {0}")]
    BadWeights(String),
    #[error("bad station data: {0}")]
    BadStation(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad window: {0}")]
    BadWindow(String),
    #[error("window starting at slot {t0} is {status:?} ({rows} rows, {cols} cols)")]
    InfeasibleWindow {
        t0: usize,
        status: LpStatus,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Objective weights and ambiguity parameters shared by both stages.
#[derive(Clone, Copy, Debug)]
pub struct RiskWeights {
    /// Weight on the worst-case risk terms.
    pub mu1: f64,
    /// Weight on the margin magnitudes `d + u`.
    pub mu2: f64,
    /// CVaR confidence level.
    pub beta: f64,
    /// Wasserstein radius for the forecast-error ambiguity set.
    pub epsilon: f64,
    /// Stage-1 tube exclusion weight, carried along for reporting.
    pub mu_tube: f64,
}

impl RiskWeights {
    pub fn validate(&self) -> Result<(), SchedError> {
        for (name, v) in [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("epsilon", self.epsilon),
            ("mu_tube", self.mu_tube),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SchedError::BadWeights(format!("{name} = {v}")));
            }
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(SchedError::BadWeights(format!("beta = {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-slot forecast-error sample data with the empirical risk constants the
/// accelerated objective needs.
///
/// Each uncertainty coordinate is an injection error at a bus: ordinarily
/// one per renewable unit, optionally augmented with station coordinates
/// when charging-demand randomness is treated as an uncertain load (a
/// demand shortfall is an injection surplus, so storage-side disturbance
/// samples enter directly). `samples[t][i][j]` is sample `i` of the slot-`t`
/// error in coordinate `j`. `kappa_s[t]` is the two-sided empirical CVaR of
/// the summed error, `kappa_c[t][k]` the same for the voltage-drop image of
/// the error at bus `k+1`.
#[derive(Clone, Debug)]
pub struct RiskData {
    pub horizon: usize,
    pub n_coords: usize,
    /// Bus carrying each uncertainty coordinate.
    pub coord_buses: Vec<usize>,
    pub beta: f64,
    pub samples: Vec<Vec<Vec<f64>>>,
    pub supports: Vec<Vec<(f64, f64)>>,
    pub kappa_s: Vec<f64>,
    pub kappa_c: Vec<Vec<f64>>,
    pub var_s: Vec<f64>,
    pub var_neg_s: Vec<f64>,
}

impl RiskData {
    /// Builds the per-slot view of a sample table whose columns are named
    /// `bus{id}_t{slot}`, one column per renewable unit and slot.
    pub fn from_sample_set(
        grid: &GridModel,
        set: &SampleSet,
        horizon: usize,
        beta: f64,
        support_margin: f64,
    ) -> Result<RiskData, SchedError> {
        let res = &grid.net.res_units;
        if res.is_empty() {
            return Ok(RiskData::empty(grid, horizon, beta));
        }
        let mut samples = Vec::with_capacity(horizon);
        let mut supports = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let cols: Vec<usize> = res
                .iter()
                .map(|ru| {
                    let name = format!("bus{}_t{}", ru.bus, t);
                    set.column_index(&name).ok_or_else(|| {
                        SchedError::DimMismatch(format!("sample column {name} missing"))
                    })
                })
                .collect::<Result<_, _>>()?;
            let slot = set.select(&cols);
            supports.push(slot.inflated_support(support_margin, true));
            samples.push(slot.rows);
        }
        let buses: Vec<usize> = res.iter().map(|ru| ru.bus).collect();
        RiskData::from_joint_samples(grid, buses, samples, supports, beta)
    }

    /// Builds risk data from per-slot sample matrices over an explicit
    /// coordinate list. `samples[t][i][j]` pairs with `coord_buses[j]`.
    pub fn from_joint_samples(
        grid: &GridModel,
        coord_buses: Vec<usize>,
        samples: Vec<Vec<Vec<f64>>>,
        supports: Vec<Vec<(f64, f64)>>,
        beta: f64,
    ) -> Result<RiskData, SchedError> {
        let n = grid.num_buses();
        let n_coords = coord_buses.len();
        if let Some(&bad) = coord_buses.iter().find(|&&b| b == 0 || b > n) {
            return Err(SchedError::DimMismatch(format!(
                "uncertainty coordinate on unknown bus {bad}"
            )));
        }
        let horizon = samples.len();
        if supports.len() != horizon {
            return Err(SchedError::DimMismatch(format!(
                "{} support slots for {horizon} sample slots",
                supports.len()
            )));
        }
        let mut kappa_s = Vec::with_capacity(horizon);
        let mut kappa_c = Vec::with_capacity(horizon);
        let mut var_s = Vec::with_capacity(horizon);
        let mut var_neg_s = Vec::with_capacity(horizon);
        for (t, rows) in samples.iter().enumerate() {
            if supports[t].len() != n_coords
                || rows.iter().any(|r| r.len() != n_coords)
            {
                return Err(SchedError::DimMismatch(format!(
                    "slot {t} sample width does not match {n_coords} coordinates"
                )));
            }
            let s: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
            let neg_s: Vec<f64> = s.iter().map(|v| -v).collect();
            kappa_s.push(cvar_empirical(&s, beta)? + cvar_empirical(&neg_s, beta)?);
            var_s.push(var_empirical(&s, beta)?);
            var_neg_s.push(var_empirical(&neg_s, beta)?);
            let mut kc = vec![0.0; n];
            for (k, kc_k) in kc.iter_mut().enumerate().skip(1) {
                let c: Vec<f64> = rows
                    .iter()
                    .map(|r| {
                        r.iter()
                            .zip(&coord_buses)
                            .map(|(xi, &b)| grid.rsens[k][b - 1] * xi)
                            .sum()
                    })
                    .collect();
                let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
                *kc_k = cvar_empirical(&c, beta)? + cvar_empirical(&neg_c, beta)?;
            }
            kappa_c.push(kc);
        }
        Ok(RiskData {
            horizon,
            n_coords,
            coord_buses,
            beta,
            samples,
            supports,
            kappa_s,
            kappa_c,
            var_s,
            var_neg_s,
        })
    }

    /// Risk data for a network without renewable units: every constant is
    /// zero and both risk families reduce to their margin terms.
    pub fn empty(grid: &GridModel, horizon: usize, beta: f64) -> RiskData {
        let n = grid.num_buses();
        RiskData {
            horizon,
            n_coords: 0,
            coord_buses: Vec::new(),
            beta,
            samples: vec![Vec::new(); horizon],
            supports: vec![Vec::new(); horizon],
            kappa_s: vec![0.0; horizon],
            kappa_c: vec![vec![0.0; n]; horizon],
            var_s: vec![0.0; horizon],
            var_neg_s: vec![0.0; horizon],
        }
    }
}

/// One slot of a solved dispatch: committed decisions plus every quantity
/// reconstructed from them.
#[derive(Clone, Debug)]
pub struct ControlAction {
    /// Absolute slot index.
    pub t: usize,
    /// Active generation per generator, network order.
    pub gen_p: Vec<f64>,
    /// Reactive generation per generator.
    pub gen_q: Vec<f64>,
    /// Reserve participation per generator.
    pub gen_alpha: Vec<f64>,
    /// Reserve participation per bus; zero away from generator buses.
    pub alpha: Vec<f64>,
    /// Nominal voltage magnitude per bus.
    pub voltage: Vec<f64>,
    /// Active flow per line, network order, positive toward the leaves.
    pub flow_p: Vec<f64>,
    /// Reactive flow per line.
    pub flow_q: Vec<f64>,
    /// Battery power per station (positive charges).
    pub station_p: Vec<f64>,
    /// State of charge per station at the start of the slot.
    pub station_soc: Vec<f64>,
    /// Station grid draw: demand forecast plus battery power.
    pub station_pcs: Vec<f64>,
    /// Generator floor margins.
    pub d_g: Vec<f64>,
    /// Generator ceiling margins.
    pub u_g: Vec<f64>,
    /// Voltage floor margins per bus (zero at the root).
    pub d_v: Vec<f64>,
    /// Voltage ceiling margins per bus.
    pub u_v: Vec<f64>,
    /// CVaR thresholds attaining the generator risk terms.
    pub omega1_g: Vec<f64>,
    pub omega2_g: Vec<f64>,
    /// CVaR thresholds attaining the voltage risk terms, per bus.
    pub omega1_v: Vec<f64>,
    pub omega2_v: Vec<f64>,
}

/// Unweighted cost components; `weighted_total` applies the objective
/// weights to the risk and margin parts.
#[derive(Clone, Copy, Debug, Default)]
pub struct CostBreakdown {
    pub generation: f64,
    pub charging: f64,
    pub degradation: f64,
    pub risk: f64,
    pub norm: f64,
}

impl CostBreakdown {
    pub fn weighted_total(&self, w: &RiskWeights) -> f64 {
        self.generation + self.charging + self.degradation + w.mu1 * self.risk + w.mu2 * self.norm
    }

    /// Money components only: generation, charging, and degradation. The
    /// risk and margin terms are planning devices and stay out.
    pub fn operational(&self) -> f64 {
        self.generation + self.charging + self.degradation
    }

    pub fn accumulate(&mut self, other: &CostBreakdown) {
        self.generation += other.generation;
        self.charging += other.charging;
        self.degradation += other.degradation;
        self.risk += other.risk;
        self.norm += other.norm;
    }
}

/// Realized state-of-charge clamp: the disturbance pushed a battery outside
/// its physical box and the excess was discarded.
#[derive(Clone, Copy, Debug)]
pub struct ClampEvent {
    pub t: usize,
    pub station: usize,
    pub unclamped: f64,
    pub clamped: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct WindowStats {
    pub t0: usize,
    pub slots: usize,
    pub objective: f64,
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub solve_time: Duration,
}

/// Output of the receding-horizon loop.
#[derive(Clone, Debug)]
pub struct ScheduleResult {
    /// First-slot action of each window, in commitment order.
    pub committed: Vec<ControlAction>,
    /// Realized state of charge, `[t][station]`, including the initial state.
    pub soc_trajectory: Vec<Vec<f64>>,
    pub clamp_events: Vec<ClampEvent>,
    /// Cost components accumulated over the committed slots.
    pub cost: CostBreakdown,
    pub windows: Vec<WindowStats>,
}

/// Inputs shared by every window of one scheduling run.
#[derive(Clone, Copy)]
pub struct Stage2Config<'a> {
    pub grid: &'a GridModel,
    pub risk: &'a RiskData,
    /// Renewable forecast per unit per absolute slot.
    pub res_forecast: &'a [Vec<f64>],
    /// Tube-tightened state and input bounds; `None` disables tightening.
    pub tube: Option<&'a TightenedSets>,
    pub weights: &'a RiskWeights,
    /// Optional per-station, per-absolute-slot shift of the demand forecast.
    pub demand_adjust: Option<&'a [Vec<f64>]>,
    /// Use the exact Wasserstein dual instead of the accelerated form.
    pub exact_dual: bool,
}

/// One window of the receding horizon: slots `t0..t_end` with the realized
/// state of charge at `t0` entering as a parameter.
#[derive(Clone, Debug)]
pub struct WindowSpec {
    pub t0: usize,
    pub t_end: usize,
    pub soc_start: Vec<f64>,
}

/// Adds the throughput-proportional battery aging cost for one station:
/// an absolute-value epigraph per slot, priced by the replacement cost
/// spread over the usable capacity-loss budget.
pub fn degradation_cost_terms(
    lp: &mut LinearProgram,
    station: &Station,
    label: &str,
    pb: &[VarId],
) -> Result<Vec<VarId>, SchedError> {
    let rate = degradation_rate(station)?;
    Ok(pb
        .iter()
        .enumerate()
        .map(|(i, &v)| lp.add_abs_epigraph(&format!("{label}_deg{i}"), &LinExpr::var(v), rate))
        .collect())
}

/// Aging cost per unit of battery throughput.
pub fn degradation_rate(station: &Station) -> Result<f64, SchedError> {
    if !(0.0 < station.eta_end && station.eta_end < 1.0) {
        return Err(SchedError::BadStation(format!(
            "eta_end = {} leaves no capacity-loss budget",
            station.eta_end
        )));
    }
    let rate = station.battery_cost / (1.0 - station.eta_end)
        * station.b1
        * (station.b2 * station.i_c).exp()
        * station.delta_t;
    if !rate.is_finite() || rate < 0.0 {
        return Err(SchedError::BadStation(format!(
            "degradation rate {rate} from battery_cost={} b1={} b2={} i_c={}",
            station.battery_cost, station.b1, station.b2, station.i_c
        )));
    }
    Ok(rate)
}

struct ExactFamily {
    om1: VarId,
    om2: VarId,
    lam: VarId,
    s: Vec<VarId>,
}

struct SlotVars {
    pg: Vec<VarId>,
    qg: Vec<VarId>,
    alpha: Vec<VarId>,
    pb: Vec<VarId>,
    /// State of charge at the end of the slot, per station.
    soc_next: Vec<VarId>,
    d_g: Vec<VarId>,
    u_g: Vec<VarId>,
    /// Voltage margins per non-root bus, index `bus - 2`.
    d_v: Vec<VarId>,
    u_v: Vec<VarId>,
    /// Voltage-risk Lipschitz bounds, same indexing; empty in exact mode or
    /// without renewable units.
    lam_v: Vec<VarId>,
    exact_g: Vec<ExactFamily>,
    exact_v: Vec<ExactFamily>,
}

pub struct Stage2Problem<'a> {
    pub lp: LinearProgram,
    cfg: Stage2Config<'a>,
    spec: WindowSpec,
    slots: Vec<SlotVars>,
}

/// Result of solving one window.
#[derive(Clone, Debug)]
pub struct WindowSolution {
    pub objective: f64,
    /// One action per window slot; index 0 is the committable slot.
    pub actions: Vec<ControlAction>,
    /// Unweighted risk value per window slot.
    pub slot_risk: Vec<f64>,
    /// Unweighted margin magnitude per window slot.
    pub slot_norm: Vec<f64>,
    pub iterations: usize,
    pub solve_time: Duration,
}

pub fn build_stage2_problem<'a>(
    cfg: &Stage2Config<'a>,
    spec: &WindowSpec,
) -> Result<Stage2Problem<'a>, SchedError> {
    validate_window(cfg, spec)?;
    let mut lp = LinearProgram::new(format!("stage2_t{}", spec.t0));
    let mut slots: Vec<SlotVars> = Vec::with_capacity(spec.t_end - spec.t0);
    for tau in spec.t0..spec.t_end {
        let prev_soc = slots.last().map(|s| s.soc_next.clone());
        let slot = build_slot(cfg, spec, &mut lp, tau, prev_soc.as_deref())?;
        slots.push(slot);
    }
    for (si, station) in cfg.grid.net.stations.iter().enumerate() {
        let pb: Vec<VarId> = slots.iter().map(|s| s.pb[si]).collect();
        degradation_cost_terms(&mut lp, station, &format!("st{si}"), &pb)?;
    }
    Ok(Stage2Problem {
        lp,
        cfg: *cfg,
        spec: spec.clone(),
        slots,
    })
}

fn validate_window(cfg: &Stage2Config, spec: &WindowSpec) -> Result<(), SchedError> {
    cfg.weights.validate()?;
    let net = &cfg.grid.net;
    if spec.t0 >= spec.t_end {
        return Err(SchedError::BadWindow(format!(
            "empty window [{}, {})",
            spec.t0, spec.t_end
        )));
    }
    if spec.t_end > cfg.risk.horizon {
        return Err(SchedError::BadWindow(format!(
            "window end {} past data horizon {}",
            spec.t_end, cfg.risk.horizon
        )));
    }
    if (cfg.weights.beta - cfg.risk.beta).abs() > 1e-12 {
        return Err(SchedError::BadWeights(format!(
            "risk data built at beta {} but weights use {}",
            cfg.risk.beta, cfg.weights.beta
        )));
    }
    if cfg.res_forecast.len() != net.res_units.len() {
        return Err(SchedError::DimMismatch(format!(
            "{} forecast series for {} renewable units",
            cfg.res_forecast.len(),
            net.res_units.len()
        )));
    }
    for (j, f) in cfg.res_forecast.iter().enumerate() {
        if f.len() < spec.t_end {
            return Err(SchedError::DimMismatch(format!(
                "forecast for unit {j} has {} slots, window needs {}",
                f.len(),
                spec.t_end
            )));
        }
    }
    if spec.soc_start.len() != net.stations.len() {
        return Err(SchedError::DimMismatch(format!(
            "{} initial states for {} stations",
            spec.soc_start.len(),
            net.stations.len()
        )));
    }
    for bus in &net.buses {
        if bus.active_load.len() < spec.t_end || bus.reactive_load.len() < spec.t_end {
            return Err(SchedError::DimMismatch(format!(
                "bus {} load series shorter than window end {}",
                bus.id, spec.t_end
            )));
        }
    }
    for (si, st) in net.stations.iter().enumerate() {
        if st.demand_forecast.len() < spec.t_end {
            return Err(SchedError::DimMismatch(format!(
                "station {si} demand forecast shorter than window end {}",
                spec.t_end
            )));
        }
    }
    if let Some(price) = &net.charging_price {
        if price.len() < spec.t_end {
            return Err(SchedError::DimMismatch(
                "charging price series shorter than window end".into(),
            ));
        }
    }
    if let Some(adj) = cfg.demand_adjust {
        if adj.len() != net.stations.len() || adj.iter().any(|a| a.len() < spec.t_end) {
            return Err(SchedError::DimMismatch(
                "demand adjustment shape does not match stations and window".into(),
            ));
        }
    }
    if let Some(ts) = cfg.tube {
        if ts.v_bounds.len() < spec.t_end || ts.z_bounds.len() < spec.t_end + 1 {
            return Err(SchedError::DimMismatch(
                "tube bounds shorter than the window".into(),
            ));
        }
        let dim_ok = ts
            .v_bounds
            .iter()
            .chain(ts.z_bounds.iter())
            .all(|b| b.len() == net.stations.len());
        if !dim_ok {
            return Err(SchedError::DimMismatch(
                "tube dimension does not match station count".into(),
            ));
        }
    }
    Ok(())
}

/// Demand forecast for one station at one slot, including any configured
/// adjustment.
fn slot_demand(cfg: &Stage2Config, si: usize, tau: usize) -> f64 {
    let base = cfg.grid.net.stations[si].demand_forecast[tau];
    match cfg.demand_adjust {
        Some(adj) => base + adj[si][tau],
        None => base,
    }
}

fn build_slot(
    cfg: &Stage2Config,
    spec: &WindowSpec,
    lp: &mut LinearProgram,
    tau: usize,
    prev_soc: Option<&[VarId]>,
) -> Result<SlotVars, SchedError> {
    let grid = cfg.grid;
    let net = &grid.net;
    let w = cfg.weights;
    let n = grid.num_buses();
    let n_coords = cfg.risk.n_coords;
    let q = 1.0 / (1.0 - w.beta);
    let accel = !cfg.exact_dual;

    // Decision variables.
    let pg: Vec<VarId> = net
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| lp.add_var(format!("pg{g}_t{tau}"), gen.p_min, gen.p_max, 0.0))
        .collect();
    let qg: Vec<VarId> = net
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| lp.add_var(format!("qg{g}_t{tau}"), gen.q_min, gen.q_max, 0.0))
        .collect();
    let alpha: Vec<VarId> = (0..net.generators.len())
        .map(|g| lp.add_var(format!("alpha{g}_t{tau}"), 0.0, 1.0, 0.0))
        .collect();
    let mut simplex = LinExpr::new();
    for &a in &alpha {
        simplex.add_term(a, 1.0);
    }
    lp.add_row(format!("alpha_sum_t{tau}"), &simplex, Rel::Eq, 1.0);

    let price = net
        .charging_price
        .as_ref()
        .map(|p| p[tau])
        .unwrap_or(0.0);
    let pb: Vec<VarId> = net
        .stations
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let (lo, hi) = match cfg.tube {
                Some(ts) => ts.v_bounds[tau][s],
                None => (-st.p_dch_max, st.p_ch_max),
            };
            lp.add_var(format!("pb{s}_t{tau}"), lo, hi, price)
        })
        .collect();

    // Nominal state-of-charge recursion; the end-of-slot state carries the
    // tube-tightened bounds for its absolute index.
    let soc_next: Vec<VarId> = net
        .stations
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let (lo, hi) = match cfg.tube {
                Some(ts) => ts.z_bounds[tau + 1][s],
                None => (st.soc_min, st.soc_max),
            };
            lp.add_var(format!("soc{s}_t{}", tau + 1), lo, hi, 0.0)
        })
        .collect();
    for (s, &sn) in soc_next.iter().enumerate() {
        let mut rec = LinExpr::var(sn).term(pb[s], -1.0);
        let rhs = match prev_soc {
            Some(prev) => {
                rec.add_term(prev[s], -1.0);
                0.0
            }
            None => spec.soc_start[s],
        };
        lp.add_row(format!("soc_rec{s}_t{tau}"), &rec, Rel::Eq, rhs);
    }

    // Generation cost epigraphs.
    for (g, gen) in net.generators.iter().enumerate() {
        let exprs: Vec<LinExpr> = gen
            .cost_affine_pieces()
            .iter()
            .map(|&(slope, intercept)| LinExpr::var(pg[g]).scaled(slope).plus(intercept))
            .collect();
        lp.add_max_epigraph(&format!("cg{g}_t{tau}"), &exprs, 1.0);
    }

    // System balance. Per-bus balance is implicit: flows are reconstructed
    // as subtree sums of withdrawals, which zeroes every non-root residual.
    let mut load_p_sum = 0.0;
    let mut load_q_sum = 0.0;
    for bus in &net.buses {
        load_p_sum += bus.active_load[tau];
        load_q_sum += bus.reactive_load[tau];
    }
    let demand_sum: f64 = (0..net.stations.len())
        .map(|s| slot_demand(cfg, s, tau))
        .sum();
    let fc_sum: f64 = cfg.res_forecast.iter().map(|f| f[tau]).sum();
    let mut bal_p = LinExpr::new();
    for &v in &pg {
        bal_p.add_term(v, 1.0);
    }
    for &v in &pb {
        bal_p.add_term(v, -1.0);
    }
    lp.add_row(
        format!("bal_p_t{tau}"),
        &bal_p,
        Rel::Eq,
        load_p_sum + demand_sum - fc_sum,
    );
    let mut bal_q = LinExpr::new();
    for &v in &qg {
        bal_q.add_term(v, 1.0);
    }
    lp.add_row(format!("bal_q_t{tau}"), &bal_q, Rel::Eq, load_q_sum);

    // Generator margin variables and their headroom rows.
    let margin_obj = if accel { w.mu2 - w.mu1 } else { w.mu2 };
    let d_g: Vec<VarId> = (0..net.generators.len())
        .map(|g| lp.add_var(format!("dg{g}_t{tau}"), 0.0, f64::INFINITY, margin_obj))
        .collect();
    let u_g: Vec<VarId> = (0..net.generators.len())
        .map(|g| lp.add_var(format!("ug{g}_t{tau}"), 0.0, f64::INFINITY, margin_obj))
        .collect();
    for (g, gen) in net.generators.iter().enumerate() {
        let floor = LinExpr::var(pg[g]).term(d_g[g], -1.0);
        lp.add_row(format!("pg_floor{g}_t{tau}"), &floor, Rel::Ge, gen.p_min);
        let ceil = LinExpr::var(pg[g]).term(u_g[g], 1.0);
        lp.add_row(format!("pg_ceil{g}_t{tau}"), &ceil, Rel::Le, gen.p_max);
    }

    // Voltage expressions per non-root bus in the reduced space, with margin
    // variables against both voltage bounds.
    let (vlo, vhi) = net.voltage_bounds;
    let base_w: Vec<f64> = {
        let mut bw: Vec<f64> = net.buses.iter().map(|b| b.active_load[tau]).collect();
        for (s, st) in net.stations.iter().enumerate() {
            bw[st.bus - 1] += slot_demand(cfg, s, tau);
        }
        for (j, ru) in net.res_units.iter().enumerate() {
            bw[ru.bus - 1] -= cfg.res_forecast[j][tau];
        }
        bw
    };
    let mut d_v = Vec::with_capacity(n - 1);
    let mut u_v = Vec::with_capacity(n - 1);
    for kb in 1..n {
        let mut vexpr = LinExpr::new();
        let mut c = net.v0;
        for b in 0..n {
            c -= grid.rsens[kb][b] * base_w[b] + grid.xsens[kb][b] * net.buses[b].reactive_load[tau];
        }
        vexpr.add_constant(c);
        for (g, gen) in net.generators.iter().enumerate() {
            let gb = gen.bus - 1;
            if grid.rsens[kb][gb] != 0.0 {
                vexpr.add_term(pg[g], grid.rsens[kb][gb]);
            }
            if grid.xsens[kb][gb] != 0.0 {
                vexpr.add_term(qg[g], grid.xsens[kb][gb]);
            }
        }
        for (s, st) in net.stations.iter().enumerate() {
            let sb = st.bus - 1;
            if grid.rsens[kb][sb] != 0.0 {
                vexpr.add_term(pb[s], -grid.rsens[kb][sb]);
            }
        }
        let dv = lp.add_var(format!("dv{}_t{tau}", kb + 1), 0.0, f64::INFINITY, margin_obj);
        let uv = lp.add_var(format!("uv{}_t{tau}", kb + 1), 0.0, f64::INFINITY, margin_obj);
        let floor = vexpr.clone().term(dv, -1.0);
        lp.add_row(format!("v_floor{}_t{tau}", kb + 1), &floor, Rel::Ge, vlo);
        let ceil = vexpr.term(uv, 1.0);
        lp.add_row(format!("v_ceil{}_t{tau}", kb + 1), &ceil, Rel::Le, vhi);
        d_v.push(dv);
        u_v.push(uv);
    }

    let mut lam_v = Vec::new();
    let mut exact_g = Vec::new();
    let mut exact_v = Vec::new();
    if accel {
        // Accelerated risk: both CVaR families collapse to terms linear in
        // the decisions. The generator family is exact (its loss is a scaled
        // copy of the summed error); the voltage family uses the subadditive
        // split of its mixed loss, which keeps the bound on the safe side.
        let eps_slope = if n_coords > 0 { w.epsilon * q } else { 0.0 };
        let vcol: Vec<f64> = net
            .generators
            .iter()
            .map(|gen| (1..n).map(|kb| grid.rsens[kb][gen.bus - 1]).sum())
            .collect();
        for (g, &a) in alpha.iter().enumerate() {
            lp.add_obj_coeff(
                a,
                w.mu1 * (cfg.risk.kappa_s[tau] + eps_slope + cfg.risk.kappa_s[tau] * vcol[g]),
            );
        }
        lp.add_obj_offset(w.mu1 * cfg.risk.kappa_c[tau][1..].iter().sum::<f64>());
        if n_coords > 0 {
            for kb in 1..n {
                let rs: Vec<f64> = cfg
                    .risk
                    .coord_buses
                    .iter()
                    .map(|&b| grid.rsens[kb][b - 1])
                    .collect();
                let rmax = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let rmin = rs.iter().cloned().fold(f64::INFINITY, f64::min);
                let lam = lp.add_var(
                    format!("lamv{}_t{tau}", kb + 1),
                    0.0,
                    f64::INFINITY,
                    w.mu1 * w.epsilon,
                );
                let mut hi_side = LinExpr::var(lam);
                let mut lo_side = LinExpr::var(lam);
                for (g, gen) in net.generators.iter().enumerate() {
                    let coef = q * grid.rsens[kb][gen.bus - 1];
                    if coef != 0.0 {
                        hi_side.add_term(alpha[g], coef);
                        lo_side.add_term(alpha[g], -coef);
                    }
                }
                lp.add_row(
                    format!("lamv_hi{}_t{tau}", kb + 1),
                    &hi_side,
                    Rel::Ge,
                    q * rmax,
                );
                lp.add_row(
                    format!("lamv_lo{}_t{tau}", kb + 1),
                    &lo_side,
                    Rel::Ge,
                    -q * rmin,
                );
                lam_v.push(lam);
            }
        }
    } else {
        // Exact dual per risk family: per-sample epigraph variables with
        // support-vertex rows. LP size grows linearly with the sample count.
        for g in 0..net.generators.len() {
            let f_alpha = vec![(alpha[g], 1.0)];
            let f_const = vec![0.0; n_coords];
            let fam = add_exact_family(
                lp,
                cfg,
                tau,
                &format!("xg{g}_t{tau}"),
                &f_const,
                &f_alpha,
                d_g[g],
                u_g[g],
            );
            exact_g.push(fam);
        }
        for kb in 1..n {
            let f_alpha: Vec<(VarId, f64)> = net
                .generators
                .iter()
                .enumerate()
                .map(|(g, gen)| (alpha[g], -grid.rsens[kb][gen.bus - 1]))
                .collect();
            let f_const: Vec<f64> = cfg
                .risk
                .coord_buses
                .iter()
                .map(|&b| grid.rsens[kb][b - 1])
                .collect();
            let fam = add_exact_family(
                lp,
                cfg,
                tau,
                &format!("xv{}_t{tau}", kb + 1),
                &f_const,
                &f_alpha,
                u_v[kb - 1],
                d_v[kb - 1],
            );
            exact_v.push(fam);
        }
    }

    Ok(SlotVars {
        pg,
        qg,
        alpha,
        pb,
        soc_next,
        d_g,
        u_g,
        d_v,
        u_v,
        lam_v,
        exact_g,
        exact_v,
    })
}

/// Emits the exact Wasserstein dual of one two-sided CVaR family whose
/// deviation is `f(xi) = sum_c (f_const[c] + <f_alpha, alpha>) xi_c`, with
/// upper margin `m1` on `f` and lower margin `m2` on `-f`. Adds
/// `mu1 * (epsilon*lambda + mean(s_i))` to the objective.
#[allow(clippy::too_many_arguments)]
fn add_exact_family(
    lp: &mut LinearProgram,
    cfg: &Stage2Config,
    tau: usize,
    label: &str,
    f_const: &[f64],
    f_alpha: &[(VarId, f64)],
    m1: VarId,
    m2: VarId,
) -> ExactFamily {
    let w = cfg.weights;
    let q = 1.0 / (1.0 - w.beta);
    let samples = &cfg.risk.samples[tau];
    let support = &cfg.risk.supports[tau];
    let n = samples.len().max(1);
    let om1 = lp.add_var(format!("{label}_om1"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    let om2 = lp.add_var(format!("{label}_om2"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    let lam = lp.add_var(
        format!("{label}_lam"),
        0.0,
        f64::INFINITY,
        w.mu1 * w.epsilon,
    );
    let mut s_vars = Vec::with_capacity(samples.len());
    for (i, xi) in samples.iter().enumerate() {
        let s = lp.add_var(
            format!("{label}_s{i}"),
            f64::NEG_INFINITY,
            f64::INFINITY,
            w.mu1 / n as f64,
        );
        // Piece values of the two-sided CVaR max form, as epigraph rows on
        // s_i. Pieces 1 and 4 carry no dependence on xi.
        let b1 = LinExpr::var(s)
            .term(om1, -(1.0 - q))
            .term(om2, -(1.0 - q))
            .term(m1, q)
            .term(m2, q);
        lp.add_row(format!("{label}_p1_{i}"), &b1, Rel::Ge, 0.0);
        let b4 = LinExpr::var(s).term(om1, -1.0).term(om2, -1.0);
        lp.add_row(format!("{label}_p4_{i}"), &b4, Rel::Ge, 0.0);
        for (piece, sign) in [(2, 1.0), (3, -1.0)] {
            let mut epi = LinExpr::var(s);
            match piece {
                2 => {
                    epi.add_term(om1, -(1.0 - q));
                    epi.add_term(om2, -1.0);
                    epi.add_term(m1, q);
                }
                _ => {
                    epi.add_term(om1, -1.0);
                    epi.add_term(om2, -(1.0 - q));
                    epi.add_term(m2, q);
                }
            }
            for (c, (&xhat, &(lo, hi))) in xi.iter().zip(support).enumerate() {
                let wv = lp.add_var(
                    format!("{label}_w{piece}_{i}_{c}"),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    0.0,
                );
                // Transport vertex candidates: stay at the sample, or move
                // to either support endpoint paying lambda per unit.
                for (ci, (v, dist)) in
                    [(xhat, 0.0), (lo, xhat - lo), (hi, hi - xhat)].into_iter().enumerate()
                {
                    let mut row = LinExpr::var(wv);
                    if dist != 0.0 {
                        row.add_term(lam, dist);
                    }
                    let scale = sign * q * v;
                    for &(av, ac) in f_alpha {
                        if ac != 0.0 {
                            row.add_term(av, -scale * ac);
                        }
                    }
                    lp.add_row(
                        format!("{label}_w{piece}_{i}_{c}_c{ci}"),
                        &row,
                        Rel::Ge,
                        scale * f_const[c],
                    );
                }
                epi.add_term(wv, -1.0);
            }
            lp.add_row(format!("{label}_p{piece}_{i}"), &epi, Rel::Ge, 0.0);
        }
        s_vars.push(s);
    }
    ExactFamily {
        om1,
        om2,
        lam,
        s: s_vars,
    }
}

impl<'a> Stage2Problem<'a> {
    pub fn num_rows(&self) -> usize {
        self.lp.num_rows()
    }

    pub fn num_cols(&self) -> usize {
        self.lp.num_vars()
    }

    pub fn solve(&self) -> Result<WindowSolution, SchedError> {
        let started = Instant::now();
        let sol = self.lp.solve()?;
        let solve_time = started.elapsed();
        if !sol.is_optimal() {
            return Err(SchedError::InfeasibleWindow {
                t0: self.spec.t0,
                status: sol.status,
                rows: self.lp.num_rows(),
                cols: self.lp.num_vars(),
            });
        }
        let mut actions = Vec::with_capacity(self.slots.len());
        let mut slot_risk = Vec::with_capacity(self.slots.len());
        let mut slot_norm = Vec::with_capacity(self.slots.len());
        for (rel, slot) in self.slots.iter().enumerate() {
            let tau = self.spec.t0 + rel;
            actions.push(self.reconstruct(slot, tau, rel, |v| sol.value(v))?);
            let (risk, norm) = self.slot_risk_norm(slot, tau, |v| sol.value(v));
            slot_risk.push(risk);
            slot_norm.push(norm);
        }
        Ok(WindowSolution {
            objective: sol.objective,
            actions,
            slot_risk,
            slot_norm,
            iterations: sol.iterations,
            solve_time,
        })
    }

    /// Unweighted risk and margin-magnitude values of one solved slot.
    fn slot_risk_norm(
        &self,
        slot: &SlotVars,
        tau: usize,
        value: impl Fn(VarId) -> f64,
    ) -> (f64, f64) {
        let cfg = &self.cfg;
        let grid = cfg.grid;
        let n = grid.num_buses();
        let w = cfg.weights;
        let q = 1.0 / (1.0 - w.beta);
        let mut norm = 0.0;
        for (&d, &u) in slot.d_g.iter().zip(&slot.u_g) {
            norm += value(d) + value(u);
        }
        for (&d, &u) in slot.d_v.iter().zip(&slot.u_v) {
            norm += value(d) + value(u);
        }
        let mut risk = 0.0;
        if cfg.exact_dual {
            for fam in slot.exact_g.iter().chain(&slot.exact_v) {
                let mean_s: f64 =
                    fam.s.iter().map(|&s| value(s)).sum::<f64>() / fam.s.len().max(1) as f64;
                risk += w.epsilon * value(fam.lam) + mean_s;
            }
        } else {
            let eps_slope = if cfg.risk.n_coords > 0 { w.epsilon * q } else { 0.0 };
            for g in 0..grid.net.generators.len() {
                let a = value(slot.alpha[g]);
                risk += a * (cfg.risk.kappa_s[tau] + eps_slope)
                    - value(slot.d_g[g])
                    - value(slot.u_g[g]);
            }
            for kb in 1..n {
                let h: f64 = grid
                    .net
                    .generators
                    .iter()
                    .enumerate()
                    .map(|(g, gen)| grid.rsens[kb][gen.bus - 1] * value(slot.alpha[g]))
                    .sum();
                risk += cfg.risk.kappa_c[tau][kb] + h * cfg.risk.kappa_s[tau]
                    - value(slot.d_v[kb - 1])
                    - value(slot.u_v[kb - 1]);
                if !slot.lam_v.is_empty() {
                    risk += w.epsilon * value(slot.lam_v[kb - 1]);
                }
            }
        }
        (risk, norm)
    }

    fn reconstruct(
        &self,
        slot: &SlotVars,
        tau: usize,
        rel: usize,
        value: impl Fn(VarId) -> f64,
    ) -> Result<ControlAction, SchedError> {
        let cfg = &self.cfg;
        let grid = cfg.grid;
        let net = &grid.net;
        let n = grid.num_buses();

        let gen_p: Vec<f64> = slot.pg.iter().map(|&v| value(v)).collect();
        let gen_q: Vec<f64> = slot.qg.iter().map(|&v| value(v)).collect();
        let alpha_g: Vec<f64> = slot.alpha.iter().map(|&v| value(v)).collect();
        let station_p: Vec<f64> = slot.pb.iter().map(|&v| value(v)).collect();
        let station_soc: Vec<f64> = match rel {
            0 => self.spec.soc_start.clone(),
            _ => self.slots[rel - 1]
                .soc_next
                .iter()
                .map(|&v| value(v))
                .collect(),
        };
        let station_pcs: Vec<f64> = station_p
            .iter()
            .enumerate()
            .map(|(s, pb)| slot_demand(cfg, s, tau) + pb)
            .collect();

        let mut alpha = vec![0.0; n];
        for (g, gen) in net.generators.iter().enumerate() {
            alpha[gen.bus - 1] += alpha_g[g];
        }

        // Withdrawals, then flows as subtree sums, then the voltage profile.
        let mut wd: Vec<f64> = net.buses.iter().map(|b| b.active_load[tau]).collect();
        let mut wq: Vec<f64> = net.buses.iter().map(|b| b.reactive_load[tau]).collect();
        for (s, st) in net.stations.iter().enumerate() {
            wd[st.bus - 1] += station_pcs[s];
        }
        for (j, ru) in net.res_units.iter().enumerate() {
            wd[ru.bus - 1] -= cfg.res_forecast[j][tau];
        }
        for (g, gen) in net.generators.iter().enumerate() {
            wd[gen.bus - 1] -= gen_p[g];
            wq[gen.bus - 1] -= gen_q[g];
        }
        let n_lines = net.lines.len();
        let mut flow_p = vec![0.0; n_lines];
        let mut flow_q = vec![0.0; n_lines];
        for li in 0..n_lines {
            for b in 0..n {
                if grid.path[li][b] != 0.0 {
                    flow_p[li] += grid.path[li][b] * wd[b];
                    flow_q[li] += grid.path[li][b] * wq[b];
                }
            }
        }
        let voltage = grid.lindistflow_voltage(&flow_p, &flow_q, net.v0);

        let d_g: Vec<f64> = slot.d_g.iter().map(|&v| value(v)).collect();
        let u_g: Vec<f64> = slot.u_g.iter().map(|&v| value(v)).collect();
        let mut d_v = vec![0.0; n];
        let mut u_v = vec![0.0; n];
        for kb in 1..n {
            d_v[kb] = value(slot.d_v[kb - 1]);
            u_v[kb] = value(slot.u_v[kb - 1]);
        }

        // CVaR thresholds attaining each risk term, for reporting. In exact
        // mode they are decision variables; in accelerated mode they follow
        // from the empirical quantiles at the solved decisions.
        let n_gens = net.generators.len();
        let mut omega1_g = vec![0.0; n_gens];
        let mut omega2_g = vec![0.0; n_gens];
        let mut omega1_v = vec![0.0; n];
        let mut omega2_v = vec![0.0; n];
        if cfg.exact_dual {
            for (g, fam) in slot.exact_g.iter().enumerate() {
                omega1_g[g] = value(fam.om1);
                omega2_g[g] = value(fam.om2);
            }
            for (kb, fam) in slot.exact_v.iter().enumerate() {
                omega1_v[kb + 1] = value(fam.om1);
                omega2_v[kb + 1] = value(fam.om2);
            }
        } else {
            for g in 0..n_gens {
                omega1_g[g] = alpha_g[g] * cfg.risk.var_s[tau] - d_g[g];
                omega2_g[g] = alpha_g[g] * cfg.risk.var_neg_s[tau] - u_g[g];
            }
            if cfg.risk.n_coords > 0 {
                for kb in 1..n {
                    let h: f64 = grid
                        .net
                        .generators
                        .iter()
                        .enumerate()
                        .map(|(g, gen)| grid.rsens[kb][gen.bus - 1] * alpha_g[g])
                        .sum();
                    let mu: Vec<f64> = cfg
                        .risk
                        .coord_buses
                        .iter()
                        .map(|&b| grid.rsens[kb][b - 1] - h)
                        .collect();
                    let f: Vec<f64> = cfg.risk.samples[tau]
                        .iter()
                        .map(|xi| xi.iter().zip(&mu).map(|(x, m)| x * m).sum())
                        .collect();
                    let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
                    omega1_v[kb] = var_empirical(&f, cfg.weights.beta)? - u_v[kb];
                    omega2_v[kb] = var_empirical(&neg_f, cfg.weights.beta)? - d_v[kb];
                }
            } else {
                for kb in 1..n {
                    omega1_v[kb] = -u_v[kb];
                    omega2_v[kb] = -d_v[kb];
                }
            }
        }

        Ok(ControlAction {
            t: tau,
            gen_p,
            gen_q,
            gen_alpha: alpha_g,
            alpha,
            voltage,
            flow_p,
            flow_q,
            station_p,
            station_soc,
            station_pcs,
            d_g,
            u_g,
            d_v,
            u_v,
            omega1_g,
            omega2_g,
            omega1_v,
            omega2_v,
        })
    }
}

/// Runs the receding-horizon loop: `t_l` windows of length `t_c` (truncated
/// at the data horizon), each committing its first slot, with the realized
/// disturbance `realized_w[station][t]` applied to the stored state between
/// windows.
pub fn solve_receding_horizon(
    cfg: &Stage2Config,
    t_c: usize,
    t_l: usize,
    soc0: &[f64],
    realized_w: &[Vec<f64>],
) -> Result<ScheduleResult, SchedError> {
    let net = &cfg.grid.net;
    if t_c == 0 || t_l == 0 {
        return Err(SchedError::BadWindow(format!(
            "need t_c >= 1 and t_l >= 1, got {t_c} and {t_l}"
        )));
    }
    if t_l > cfg.risk.horizon {
        return Err(SchedError::BadWindow(format!(
            "{t_l} commitments exceed the data horizon {}",
            cfg.risk.horizon
        )));
    }
    if soc0.len() != net.stations.len() {
        return Err(SchedError::DimMismatch(format!(
            "{} initial states for {} stations",
            soc0.len(),
            net.stations.len()
        )));
    }
    if realized_w.len() != net.stations.len()
        || realized_w.iter().any(|w| w.len() < t_l)
    {
        return Err(SchedError::DimMismatch(
            "realized disturbance shape does not cover every committed slot".into(),
        ));
    }

    let mut soc = soc0.to_vec();
    let mut trajectory = vec![soc.clone()];
    let mut committed = Vec::with_capacity(t_l);
    let mut clamp_events = Vec::new();
    let mut cost = CostBreakdown::default();
    let mut windows = Vec::with_capacity(t_l);

    for t0 in 0..t_l {
        let t_end = (t0 + t_c).min(cfg.risk.horizon);
        let spec = WindowSpec {
            t0,
            t_end,
            soc_start: soc.clone(),
        };
        let prob = build_stage2_problem(cfg, &spec)?;
        let wsol = prob.solve()?;
        let action = wsol.actions[0].clone();

        let mut slot_cost = CostBreakdown {
            risk: wsol.slot_risk[0],
            norm: wsol.slot_norm[0],
            ..CostBreakdown::default()
        };
        for (g, gen) in net.generators.iter().enumerate() {
            slot_cost.generation += gen.cost_at(action.gen_p[g]);
        }
        let price = net.charging_price.as_ref().map(|p| p[t0]).unwrap_or(0.0);
        for (s, st) in net.stations.iter().enumerate() {
            slot_cost.charging += price * action.station_p[s];
            slot_cost.degradation += degradation_rate(st)? * action.station_p[s].abs();
        }
        cost.accumulate(&slot_cost);

        for (s, st) in net.stations.iter().enumerate() {
            let next = soc[s] + action.station_p[s] + realized_w[s][t0];
            let clamped = next.clamp(st.soc_min, st.soc_max);
            if clamped != next {
                clamp_events.push(ClampEvent {
                    t: t0,
                    station: s,
                    unclamped: next,
                    clamped,
                });
            }
            soc[s] = clamped;
        }
        trajectory.push(soc.clone());

        windows.push(WindowStats {
            t0,
            slots: t_end - t0,
            objective: wsol.objective,
            rows: prob.num_rows(),
            cols: prob.num_cols(),
            iterations: wsol.iterations,
            solve_time: wsol.solve_time,
        });
        committed.push(action);
    }

    Ok(ScheduleResult {
        committed,
        soc_trajectory: trajectory,
        clamp_events,
        cost,
        windows,
    })
}
