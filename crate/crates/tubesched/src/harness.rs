//! Experiment harness: the four scheduling methods, out-of-sample
//! reliability evaluation, sweep tables, and synthetic benchmark instances.
//!
//! A [`Scenario`] bundles a network with a pool of renewable output draws
//! and a pool of charging disturbances. The first `n_static` renewable rows
//! and `n_dynamic` disturbance rows are training data; the rest are held
//! out for out-of-sample tests. When a pool is not supplied on disk it is
//! synthesized deterministically from the network description.
//!
//! Methods differ only in how they treat the two uncertainties:
//!
//! * `WdrMpc` sizes the error tube from the Wasserstein-robust stage-1
//!   program and runs receding-horizon dispatch with tightened bounds.
//! * `SaaMpc` is the same loop with the tube sized at plain empirical
//!   quantiles of the propagated error samples.
//! * `NormalMpc` builds no tube and instead folds the mean disturbance
//!   into the charging-demand prediction.
//! * `StaticDro` solves a single plan over the whole commitment range,
//!   treating the charging disturbance as extra static uncertainty
//!   coordinates riding the grid (flexible load) with no error recursion.
//!
//! Reliability is measured by replaying committed actions against held-out
//! draws: an event fails if any original box constraint (state of charge,
//! battery power, voltage, generator limits under the reserve response) is
//! violated at any committed slot.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{generate_disturbances, DataError, DisturbanceDataset, SampleSet};
use crate::grid::{Bus, Generator, GridError, GridModel, Line, Network, ResUnit, Station};
use crate::sched::{
    build_stage2_problem, degradation_rate, solve_receding_horizon, CostBreakdown, RiskData,
    RiskWeights, ScheduleResult, SchedError, Stage2Config, WindowSpec, WindowStats,
};
use crate::tube::{
    assemble_tube, error_supports, propagate_error_samples, stage1_tube_bounds, AmbiguityTube,
    ClosedLoopSystem, TightenedSets, TubeError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    WdrMpc,
    SaaMpc,
    NormalMpc,
    StaticDro,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::WdrMpc,
        Method::SaaMpc,
        Method::NormalMpc,
        Method::StaticDro,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::WdrMpc => "wdr-mpc",
            Method::SaaMpc => "saa-mpc",
            Method::NormalMpc => "normal-mpc",
            Method::StaticDro => "static-dro",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Method, HarnessError> {
        match s.to_ascii_lowercase().as_str() {
            "wdr-mpc" | "wdr" => Ok(Method::WdrMpc),
            "saa-mpc" | "saa" => Ok(Method::SaaMpc),
            "normal-mpc" | "normal" => Ok(Method::NormalMpc),
            "static-dro" | "static" => Ok(Method::StaticDro),
            other => Err(HarnessError::Config(format!("unknown method {other}"))),
        }
    }
}

/// All tunables of one run. Serializable so a run can be pinned to a config
/// file; every field has a section-V-shaped default.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
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

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            epsilon: 0.001,
            beta: 0.95,
            mu1: 10.0,
            mu2: 1.0,
            mu_tube: 1e3,
            rho: 0.5,
            t_c: 12,
            t_l: 12,
            seed: 1,
            n_static: 30,
            n_dynamic: 500,
            support_margin: 0.05,
            exact_dual: false,
            feas_tol: 1e-8,
            opt_tol: 1e-7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(HarnessError::Config(format!("beta = {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(HarnessError::Config(format!("rho = {}", self.rho)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("mu_tube", self.mu_tube),
            ("support_margin", self.support_margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(HarnessError::Config(format!("{name} = {v}")));
            }
        }
        if self.t_c == 0 || self.t_l == 0 {
            return Err(HarnessError::Config(
                "window length and commitment count must be at least 1".into(),
            ));
        }
        if self.n_static == 0 || self.n_dynamic == 0 {
            return Err(HarnessError::Config(
                "training sizes must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> RiskWeights {
        RiskWeights {
            mu1: self.mu1,
            mu2: self.mu2,
            beta: self.beta,
            epsilon: self.epsilon,
            mu_tube: self.mu_tube,
        }
    }

    /// Loads a config file and returns defaults when the path is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, HarnessError> {
        let cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("bad config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A network with its renewable and disturbance sample pools.
pub struct Scenario {
    pub grid: GridModel,
    /// Raw renewable output draws, columns `bus{id}_t{slot}`; `None` when
    /// the network has no renewable units.
    pub res_pool: Option<SampleSet>,
    /// Charging disturbance pool; `None` when the network has no stations.
    pub dist_pool: Option<DisturbanceDataset>,
    /// Number of usable slots: the shortest of every bundled series.
    pub horizon: usize,
}

/// Rows bundled in a freshly synthesized renewable pool: enough for
/// training sweeps up to 130 plus a held-out remainder.
pub const DEFAULT_RES_POOL: usize = 230;
/// Rows bundled in a freshly synthesized disturbance pool: 500 training
/// sequences plus a held-out remainder.
pub const DEFAULT_DIST_POOL: usize = 700;
/// Relative amplitude of synthesized renewable output noise.
pub const RES_NOISE: f64 = 0.2;
/// Disturbance amplitude relative to the charging-demand forecast.
pub const DIST_RADIUS: f64 = 0.2;

impl Scenario {
    pub fn new(
        grid: GridModel,
        res_pool: Option<SampleSet>,
        dist_pool: Option<DisturbanceDataset>,
    ) -> Result<Scenario, HarnessError> {
        let net = &grid.net;
        if net.res_units.is_empty() != res_pool.is_none() {
            return Err(HarnessError::Config(
                "renewable pool must be present exactly when the network has renewable units"
                    .into(),
            ));
        }
        if net.stations.is_empty() != dist_pool.is_none() {
            return Err(HarnessError::Config(
                "disturbance pool must be present exactly when the network has stations".into(),
            ));
        }
        let mut horizon = usize::MAX;
        for bus in &net.buses {
            horizon = horizon.min(bus.active_load.len()).min(bus.reactive_load.len());
        }
        for st in &net.stations {
            horizon = horizon.min(st.demand_forecast.len());
        }
        if let Some(p) = &net.charging_price {
            horizon = horizon.min(p.len());
        }
        for (j, ru) in net.res_units.iter().enumerate() {
            if let Some(f) = &ru.forecast {
                horizon = horizon.min(f.len());
            }
            if let Some(pool) = &res_pool {
                let unit_slots = (0..)
                    .take_while(|t| pool.column_index(&format!("bus{}_t{t}", ru.bus)).is_some())
                    .count();
                if unit_slots == 0 {
                    return Err(HarnessError::Config(format!(
                        "renewable pool has no columns for unit {j} (bus {})",
                        ru.bus
                    )));
                }
                horizon = horizon.min(unit_slots);
            }
        }
        if let Some(pool) = &dist_pool {
            if pool.station_buses != net.stations.iter().map(|s| s.bus).collect::<Vec<_>>() {
                return Err(HarnessError::Config(
                    "disturbance pool station buses do not match the network".into(),
                ));
            }
            horizon = horizon.min(pool.horizon);
        }
        if horizon == usize::MAX || horizon == 0 {
            return Err(HarnessError::Config("no usable slots in the data".into()));
        }
        Ok(Scenario {
            grid,
            res_pool,
            dist_pool,
            horizon,
        })
    }

    /// Loads a scenario from disk, synthesizing any pool that is not
    /// supplied. Synthesis is deterministic in `seed`.
    pub fn load(
        network: &Path,
        res_samples: Option<&Path>,
        disturbances: Option<&Path>,
        seed: u64,
    ) -> Result<Scenario, HarnessError> {
        let grid = GridModel::load(network)?;
        let res_pool = match res_samples {
            Some(p) => Some(SampleSet::read_csv(p)?),
            None => synth_res_pool(&grid.net, DEFAULT_RES_POOL, RES_NOISE, seed ^ 0x5e5),
        };
        let dist_pool = match disturbances {
            Some(p) => Some(DisturbanceDataset::read_csv(p)?),
            None => synth_dist_pool(&grid.net, DEFAULT_DIST_POOL, DIST_RADIUS, seed ^ 0xd15)?,
        };
        Scenario::new(grid, res_pool, dist_pool)
    }

    fn stations(&self) -> &[Station] {
        &self.grid.net.stations
    }

    fn dist_train(&self, n: usize) -> Result<DisturbanceDataset, HarnessError> {
        let pool = self.dist_pool.as_ref().ok_or_else(|| {
            HarnessError::Config("network has no stations, no disturbance data".into())
        })?;
        if pool.len() < n {
            return Err(HarnessError::Config(format!(
                "disturbance pool has {} rows, {n} training rows requested",
                pool.len()
            )));
        }
        Ok(DisturbanceDataset::new(
            pool.station_buses.clone(),
            pool.horizon,
            pool.rows[..n].to_vec(),
        )?)
    }

    fn dist_test(&self, n_train: usize) -> Result<DisturbanceDataset, HarnessError> {
        let pool = self.dist_pool.as_ref().ok_or_else(|| {
            HarnessError::Config("network has no stations, no disturbance data".into())
        })?;
        if pool.len() <= n_train {
            return Err(HarnessError::Config(
                "no held-out disturbance rows beyond the training block".into(),
            ));
        }
        Ok(DisturbanceDataset::new(
            pool.station_buses.clone(),
            pool.horizon,
            pool.rows[n_train..].to_vec(),
        )?)
    }

    fn res_test(&self, n_train: usize) -> Result<Option<SampleSet>, HarnessError> {
        match &self.res_pool {
            None => Ok(None),
            Some(pool) => {
                if pool.len() <= n_train {
                    return Err(HarnessError::Config(
                        "no held-out renewable rows beyond the training block".into(),
                    ));
                }
                Ok(Some(SampleSet::new(
                    pool.names.clone(),
                    pool.rows[n_train..].to_vec(),
                )?))
            }
        }
    }
}

/// Forecast and centered error samples from the first `n_train` pool rows.
/// The forecast is the per-slot training mean unless the unit pins its own
/// series; errors are always the deviations from the training mean.
pub fn res_model(
    scn: &Scenario,
    n_train: usize,
    horizon: usize,
) -> Result<(Vec<Vec<f64>>, Option<SampleSet>), HarnessError> {
    let net = &scn.grid.net;
    let pool = match &scn.res_pool {
        None => return Ok((Vec::new(), None)),
        Some(p) => p,
    };
    if pool.len() < n_train {
        return Err(HarnessError::Config(format!(
            "renewable pool has {} rows, {n_train} training rows requested",
            pool.len()
        )));
    }
    let train = SampleSet::new(pool.names.clone(), pool.rows[..n_train].to_vec())?;
    let means = train.column_means();
    let mut forecast = Vec::with_capacity(net.res_units.len());
    for ru in &net.res_units {
        let series: Vec<f64> = (0..horizon)
            .map(|t| {
                if let Some(f) = &ru.forecast {
                    return Ok(f[t]);
                }
                let col = train
                    .column_index(&format!("bus{}_t{t}", ru.bus))
                    .ok_or_else(|| {
                        HarnessError::Config(format!(
                            "renewable pool missing column bus{}_t{t}",
                            ru.bus
                        ))
                    })?;
                Ok(means[col])
            })
            .collect::<Result<_, HarnessError>>()?;
        forecast.push(series);
    }
    let errors = train.centered(&means);
    Ok((forecast, Some(errors)))
}

fn risk_from_errors(
    scn: &Scenario,
    errors: &Option<SampleSet>,
    horizon: usize,
    cfg: &RunConfig,
) -> Result<RiskData, HarnessError> {
    match errors {
        Some(e) => Ok(RiskData::from_sample_set(
            &scn.grid,
            e,
            horizon,
            cfg.beta,
            cfg.support_margin,
        )?),
        None => Ok(RiskData::empty(&scn.grid, horizon, cfg.beta)),
    }
}

/// Empirical-quantile tube at level `beta`: the sample-average baseline for
/// stage 1, with no robustness term.
pub fn quantile_tube(errors: &crate::tube::ErrorSamples, beta: f64) -> Result<AmbiguityTube, HarnessError> {
    use crate::dro::var_empirical;
    let mut bounds = vec![vec![(0.0, 0.0); errors.dim]; errors.horizon];
    for t in 1..errors.horizon {
        for j in 0..errors.dim {
            let xs = &errors.samples[t][j];
            let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
            let hi = var_empirical(xs, beta).map_err(SchedError::from)?;
            let lo = -var_empirical(&neg, beta).map_err(SchedError::from)?;
            bounds[t][j] = (lo.min(hi), hi);
        }
    }
    Ok(AmbiguityTube {
        dim: errors.dim,
        horizon: errors.horizon,
        bounds,
    })
}

/// A committed schedule together with everything the replay needs to test
/// it out of sample.
pub struct MethodRun {
    pub method: Method,
    pub result: ScheduleResult,
    pub tube: Option<AmbiguityTube>,
    pub sets: Option<TightenedSets>,
    /// Error-feedback gain applied in the replay; zero for methods with no
    /// ancillary controller.
    pub feedback: f64,
    /// Per-station, per-slot mean disturbance folded into the prediction
    /// (zero except for the mean-prediction baseline).
    pub demand_shift: Vec<Vec<f64>>,
    /// Charging disturbances ride the grid (flexible-load treatment)
    /// instead of the storage recursion.
    pub static_grid: bool,
    pub forecast: Vec<Vec<f64>>,
    pub offline_time: Duration,
}

impl MethodRun {
    /// Mean pure-LP solve time across this run's windows.
    pub fn mean_window_solve(&self) -> Duration {
        let total: Duration = self.result.windows.iter().map(|w| w.solve_time).sum();
        total / self.result.windows.len().max(1) as u32
    }
}

fn initial_soc(stations: &[Station]) -> Vec<f64> {
    stations
        .iter()
        .map(|st| 0.5 * (st.soc_min + st.soc_max))
        .collect()
}

fn soc_boxes(stations: &[Station]) -> Vec<(f64, f64)> {
    stations.iter().map(|st| (st.soc_min, st.soc_max)).collect()
}

fn input_boxes(stations: &[Station]) -> Vec<(f64, f64)> {
    stations
        .iter()
        .map(|st| (-st.p_dch_max, st.p_ch_max))
        .collect()
}

/// Runs one method end to end: offline tube sizing where the method has
/// one, then the online loop committing `t_l` actions under zero realized
/// disturbance (the committed plan is the nominal trajectory, which is what
/// the out-of-sample replay perturbs).
pub fn run_method(
    scn: &Scenario,
    cfg: &RunConfig,
    method: Method,
) -> Result<MethodRun, HarnessError> {
    cfg.validate()?;
    if cfg.t_l > scn.horizon {
        return Err(HarnessError::Config(format!(
            "{} commitments exceed the {}-slot data horizon",
            cfg.t_l, scn.horizon
        )));
    }
    let horizon = scn.horizon;
    let stations = scn.stations();
    let n_st = stations.len();
    let soc0 = initial_soc(stations);
    let (forecast, errors) = res_model(scn, cfg.n_static, horizon)?;
    let risk = risk_from_errors(scn, &errors, horizon, cfg)?;
    let weights = cfg.weights();
    let zeros = vec![vec![0.0; cfg.t_l]; n_st];

    match method {
        Method::WdrMpc | Method::SaaMpc => {
            let started = Instant::now();
            let sys = ClosedLoopSystem::new(n_st.max(1), cfg.rho)?;
            let (tube, sets) = if n_st == 0 {
                (None, None)
            } else {
                let train = scn.dist_train(cfg.n_dynamic)?;
                let errs = propagate_error_samples(&sys, &train)?;
                let tube = match method {
                    Method::WdrMpc => {
                        let supports = error_supports(&sys, &train.slot_supports(cfg.support_margin))?;
                        stage1_tube_bounds(&errs, &supports, cfg.epsilon, cfg.beta, cfg.mu_tube)?
                    }
                    _ => quantile_tube(&errs, cfg.beta)?,
                };
                let sets = assemble_tube(&sys, &tube, &soc_boxes(stations), &input_boxes(stations))?;
                (Some(tube), Some(sets))
            };
            let offline_time = started.elapsed();
            let s2 = Stage2Config {
                grid: &scn.grid,
                risk: &risk,
                res_forecast: &forecast,
                tube: sets.as_ref(),
                weights: &weights,
                demand_adjust: None,
                exact_dual: cfg.exact_dual,
            };
            let result = solve_receding_horizon(&s2, cfg.t_c, cfg.t_l, &soc0, &zeros)?;
            Ok(MethodRun {
                method,
                result,
                tube,
                sets,
                feedback: if n_st > 0 { sys.k_gain() } else { 0.0 },
                demand_shift: vec![vec![0.0; horizon]; n_st],
                static_grid: false,
                forecast,
                offline_time,
            })
        }
        Method::NormalMpc => {
            let shift: Vec<Vec<f64>> = if n_st == 0 {
                Vec::new()
            } else {
                let train = scn.dist_train(cfg.n_dynamic)?;
                (0..n_st)
                    .map(|s| {
                        (0..horizon)
                            .map(|t| {
                                let xs = train.slot_samples(s, t);
                                xs.iter().sum::<f64>() / xs.len() as f64
                            })
                            .collect()
                    })
                    .collect()
            };
            let adjust: Vec<Vec<f64>> = shift
                .iter()
                .map(|row| row.iter().map(|&m| -m).collect())
                .collect();
            let realized: Vec<Vec<f64>> = (0..n_st)
                .map(|s| (0..cfg.t_l).map(|t| -shift[s][t]).collect())
                .collect();
            let s2 = Stage2Config {
                grid: &scn.grid,
                risk: &risk,
                res_forecast: &forecast,
                tube: None,
                weights: &weights,
                demand_adjust: if n_st == 0 { None } else { Some(&adjust) },
                exact_dual: cfg.exact_dual,
            };
            let result = solve_receding_horizon(&s2, cfg.t_c, cfg.t_l, &soc0, &realized)?;
            Ok(MethodRun {
                method,
                result,
                tube: None,
                sets: None,
                feedback: 0.0,
                demand_shift: shift,
                static_grid: false,
                forecast,
                offline_time: Duration::ZERO,
            })
        }
        Method::StaticDro => {
            let risk_static = static_risk(scn, cfg, &errors, horizon)?;
            let s2 = Stage2Config {
                grid: &scn.grid,
                risk: &risk_static,
                res_forecast: &forecast,
                tube: None,
                weights: &weights,
                demand_adjust: None,
                exact_dual: cfg.exact_dual,
            };
            let t_end = cfg.t_c.max(cfg.t_l).min(horizon);
            let spec = WindowSpec {
                t0: 0,
                t_end,
                soc_start: soc0.clone(),
            };
            let prob = build_stage2_problem(&s2, &spec)?;
            let wsol = prob.solve()?;
            let committed: Vec<_> = wsol.actions[..cfg.t_l].to_vec();
            let mut trajectory: Vec<Vec<f64>> =
                committed.iter().map(|a| a.station_soc.clone()).collect();
            let last = committed.last().expect("at least one committed slot");
            trajectory.push(
                last.station_soc
                    .iter()
                    .zip(&last.station_p)
                    .map(|(s, p)| s + p)
                    .collect(),
            );
            let mut cost = CostBreakdown::default();
            for (t, a) in committed.iter().enumerate() {
                let mut slot = CostBreakdown {
                    risk: wsol.slot_risk[t],
                    norm: wsol.slot_norm[t],
                    ..CostBreakdown::default()
                };
                for (g, gen) in scn.grid.net.generators.iter().enumerate() {
                    slot.generation += gen.cost_at(a.gen_p[g]);
                }
                let price = scn
                    .grid
                    .net
                    .charging_price
                    .as_ref()
                    .map(|p| p[t])
                    .unwrap_or(0.0);
                for (s, st) in stations.iter().enumerate() {
                    slot.charging += price * a.station_p[s];
                    slot.degradation += degradation_rate(st)? * a.station_p[s].abs();
                }
                cost.accumulate(&slot);
            }
            let result = ScheduleResult {
                committed,
                soc_trajectory: trajectory,
                clamp_events: Vec::new(),
                cost,
                windows: vec![WindowStats {
                    t0: 0,
                    slots: t_end,
                    objective: wsol.objective,
                    rows: prob.num_rows(),
                    cols: prob.num_cols(),
                    iterations: wsol.iterations,
                    solve_time: wsol.solve_time,
                }],
            };
            Ok(MethodRun {
                method,
                result,
                tube: None,
                sets: None,
                feedback: 0.0,
                demand_shift: vec![vec![0.0; horizon]; n_st],
                static_grid: true,
                forecast,
                offline_time: Duration::ZERO,
            })
        }
    }
}

/// Static-method risk data: renewable error coordinates augmented with one
/// coordinate per station (a demand shortfall is an injection surplus at
/// the station's bus). Zero-width all-zero station coordinates are dropped
/// so a noiseless disturbance pool reduces exactly to the renewable case.
fn static_risk(
    scn: &Scenario,
    cfg: &RunConfig,
    errors: &Option<SampleSet>,
    horizon: usize,
) -> Result<RiskData, HarnessError> {
    let net = &scn.grid.net;
    let n_st = net.stations.len();
    if n_st == 0 {
        return risk_from_errors(scn, errors, horizon, cfg);
    }
    let train = scn.dist_train(cfg.n_dynamic)?;
    let dist_supports = train.slot_supports(cfg.support_margin);
    let res_risk = risk_from_errors(scn, errors, horizon, cfg)?;
    let n_res_rows = if res_risk.n_coords > 0 {
        res_risk.samples[0].len()
    } else {
        usize::MAX
    };
    let n_joint = n_res_rows.min(train.len());

    let keep: Vec<usize> = (0..n_st)
        .filter(|&s| {
            (0..horizon).any(|t| {
                let (lo, hi) = dist_supports[s][t];
                lo != 0.0 || hi != 0.0 || train.slot_samples(s, t).iter().any(|&w| w != 0.0)
            })
        })
        .collect();
    if keep.is_empty() {
        return Ok(res_risk);
    }

    let mut coord_buses = res_risk.coord_buses.clone();
    coord_buses.extend(keep.iter().map(|&s| net.stations[s].bus));
    let mut samples = Vec::with_capacity(horizon);
    let mut supports = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut slot_rows = Vec::with_capacity(n_joint);
        for i in 0..n_joint {
            let mut row = if res_risk.n_coords > 0 {
                res_risk.samples[t][i].clone()
            } else {
                Vec::new()
            };
            row.extend(keep.iter().map(|&s| train.value(i, s, t)));
            slot_rows.push(row);
        }
        let mut sup = if res_risk.n_coords > 0 {
            res_risk.supports[t].clone()
        } else {
            Vec::new()
        };
        sup.extend(keep.iter().map(|&s| dist_supports[s][t]));
        samples.push(slot_rows);
        supports.push(sup);
    }
    Ok(RiskData::from_joint_samples(
        &scn.grid,
        coord_buses,
        samples,
        supports,
        cfg.beta,
    )?)
}

/// Violation tallies per constraint family; an event counts once per
/// family it violates.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct FamilyCounts {
    pub soc: usize,
    pub input: usize,
    pub voltage: usize,
    pub generator: usize,
}

/// One evaluation round: a batch of independent out-of-sample events.
#[derive(Clone, Debug, Serialize)]
pub struct RoundReport {
    pub tests: usize,
    pub violations: usize,
    pub reliability: f64,
    pub families: FamilyCounts,
}

/// Aggregated reliability of one method across rounds.
#[derive(Clone, Debug, Serialize)]
pub struct ReliabilityReport {
    pub method: String,
    pub rounds: Vec<RoundReport>,
    pub mean_reliability: f64,
    pub std_reliability: f64,
    /// Mean pure-LP time per online window, seconds.
    pub mean_window_solve_s: f64,
    /// Offline tube-construction time, seconds.
    pub offline_s: f64,
}

/// Held-out draws the replay tests against.
pub struct TestDraws<'a> {
    /// Held-out disturbance sequences.
    pub w_pool: Option<&'a DisturbanceDataset>,
    /// Held-out raw renewable rows; errors are deviations from the run's
    /// forecast.
    pub res_pool: Option<&'a SampleSet>,
}

const REPLAY_TOL: f64 = 1e-9;

/// Per-unit, per-slot column indices of a renewable test pool; errors when
/// the network has renewable units but no pool was supplied, or a column is
/// missing.
fn res_test_columns(
    net: &Network,
    pool: Option<&SampleSet>,
    t_l: usize,
) -> Result<Vec<Vec<usize>>, HarnessError> {
    match (pool, net.res_units.is_empty()) {
        (Some(pool), false) => net
            .res_units
            .iter()
            .map(|ru| {
                (0..t_l)
                    .map(|t| {
                        pool.column_index(&format!("bus{}_t{t}", ru.bus)).ok_or_else(|| {
                            HarnessError::Config(format!(
                                "test pool missing column bus{}_t{t}",
                                ru.bus
                            ))
                        })
                    })
                    .collect::<Result<_, _>>()
            })
            .collect::<Result<_, _>>(),
        (None, false) => Err(HarnessError::Config(
            "renewable draws required for a network with renewable units".into(),
        )),
        _ => Ok(Vec::new()),
    }
}

/// Replays the committed actions against `tests` random held-out draws.
/// An event is violated when any original constraint fails at any slot:
/// state of charge, applied battery power, generator limits under the
/// reserve response, or voltage bounds under the error image.
pub fn evaluate_reliability(
    grid: &GridModel,
    run: &MethodRun,
    draws: &TestDraws,
    tests: usize,
    seed: u64,
) -> Result<RoundReport, HarnessError> {
    if tests == 0 {
        return Err(HarnessError::Config("tests must be at least 1".into()));
    }
    let net = &grid.net;
    let n_st = net.stations.len();
    let t_l = run.result.committed.len();
    if n_st > 0 {
        let pool = draws.w_pool.ok_or_else(|| {
            HarnessError::Config("disturbance draws required for a network with stations".into())
        })?;
        if pool.horizon < t_l {
            return Err(HarnessError::Config(
                "test disturbance horizon shorter than the committed schedule".into(),
            ));
        }
    }
    let res_cols = res_test_columns(net, draws.res_pool, t_l)?;

    let (vlo, vhi) = net.voltage_bounds;
    let n = grid.num_buses();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut families = FamilyCounts::default();

    for _ in 0..tests {
        let w_row: Option<usize> = draws.w_pool.map(|p| rng.gen_range(0..p.len()));
        let res_row: Option<usize> = draws.res_pool.map(|p| rng.gen_range(0..p.len()));

        let mut soc_bad = false;
        let mut input_bad = false;
        let mut gen_bad = false;
        let mut volt_bad = false;

        let mut x = run.result.soc_trajectory[0].clone();
        for t in 0..t_l {
            let a = &run.result.committed[t];
            let z_t = &run.result.soc_trajectory[t];
            let z_next = &run.result.soc_trajectory[t + 1];
            let w_at = |s: usize| -> f64 {
                match (draws.w_pool, w_row) {
                    (Some(p), Some(i)) => p.value(i, s, t),
                    _ => 0.0,
                }
            };
            for s in 0..n_st {
                let st = &net.stations[s];
                let u = a.station_p[s] + run.feedback * (x[s] - z_t[s]);
                if u < -st.p_dch_max - REPLAY_TOL || u > st.p_ch_max + REPLAY_TOL {
                    input_bad = true;
                }
                if run.static_grid {
                    x[s] = z_next[s];
                } else {
                    x[s] += u + w_at(s) - run.demand_shift[s][t];
                    if x[s] < st.soc_min - REPLAY_TOL || x[s] > st.soc_max + REPLAY_TOL {
                        soc_bad = true;
                    }
                }
            }

            let res_err = |j: usize| -> f64 {
                match res_row {
                    Some(i) => {
                        draws.res_pool.expect("row implies pool").rows[i][res_cols[j][t]]
                            - run.forecast[j][t]
                    }
                    None => 0.0,
                }
            };
            let mut sigma: f64 = (0..net.res_units.len()).map(res_err).sum();
            if run.static_grid {
                sigma += (0..n_st).map(&w_at).sum::<f64>();
            }
            for (g, gen) in net.generators.iter().enumerate() {
                let p = a.gen_p[g] - a.gen_alpha[g] * sigma;
                if p < gen.p_min - REPLAY_TOL || p > gen.p_max + REPLAY_TOL {
                    gen_bad = true;
                }
            }
            for kb in 1..n {
                let h: f64 = net
                    .generators
                    .iter()
                    .enumerate()
                    .map(|(g, gen)| grid.rsens[kb][gen.bus - 1] * a.gen_alpha[g])
                    .sum();
                let mut dv = 0.0;
                for (j, ru) in net.res_units.iter().enumerate() {
                    dv += (grid.rsens[kb][ru.bus - 1] - h) * res_err(j);
                }
                if run.static_grid {
                    for (s, st) in net.stations.iter().enumerate() {
                        dv += (grid.rsens[kb][st.bus - 1] - h) * w_at(s);
                    }
                }
                let v = a.voltage[kb] + dv;
                if v < vlo - REPLAY_TOL || v > vhi + REPLAY_TOL {
                    volt_bad = true;
                }
            }
        }

        if soc_bad || input_bad || gen_bad || volt_bad {
            violations += 1;
            families.soc += soc_bad as usize;
            families.input += input_bad as usize;
            families.voltage += volt_bad as usize;
            families.generator += gen_bad as usize;
        }
    }

    Ok(RoundReport {
        tests,
        violations,
        reliability: 1.0 - violations as f64 / tests as f64,
        families,
    })
}

/// Mean out-of-sample operational cost of the committed schedule: generator
/// costs are priced at the reserve response to the realized renewable error,
/// the battery follows the error feedback, and charging is billed on the
/// applied battery power. Margin and risk terms are planning devices, not
/// money, and stay out; this is the spend a dispatcher would book.
pub fn realized_operational_cost(
    grid: &GridModel,
    run: &MethodRun,
    draws: &TestDraws,
    tests: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    if tests == 0 {
        return Err(HarnessError::Config("tests must be at least 1".into()));
    }
    let net = &grid.net;
    let n_st = net.stations.len();
    let t_l = run.result.committed.len();
    if n_st > 0 {
        let pool = draws.w_pool.ok_or_else(|| {
            HarnessError::Config("disturbance draws required for a network with stations".into())
        })?;
        if pool.horizon < t_l {
            return Err(HarnessError::Config(
                "test disturbance horizon shorter than the committed schedule".into(),
            ));
        }
    }
    let res_cols = res_test_columns(net, draws.res_pool, t_l)?;
    let rates: Vec<f64> = net
        .stations
        .iter()
        .map(degradation_rate)
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..tests {
        let w_row: Option<usize> = draws.w_pool.map(|p| rng.gen_range(0..p.len()));
        let res_row: Option<usize> = draws.res_pool.map(|p| rng.gen_range(0..p.len()));

        let mut x = run.result.soc_trajectory[0].clone();
        for t in 0..t_l {
            let a = &run.result.committed[t];
            let z_t = &run.result.soc_trajectory[t];
            let z_next = &run.result.soc_trajectory[t + 1];
            let w_at = |s: usize| -> f64 {
                match (draws.w_pool, w_row) {
                    (Some(p), Some(i)) => p.value(i, s, t),
                    _ => 0.0,
                }
            };
            let price = net.charging_price.as_ref().map(|p| p[t]).unwrap_or(0.0);
            for s in 0..n_st {
                let u = a.station_p[s] + run.feedback * (x[s] - z_t[s]);
                total += price * u + rates[s] * u.abs();
                if run.static_grid {
                    x[s] = z_next[s];
                } else {
                    x[s] += u + w_at(s) - run.demand_shift[s][t];
                }
            }

            let res_err = |j: usize| -> f64 {
                match res_row {
                    Some(i) => {
                        draws.res_pool.expect("row implies pool").rows[i][res_cols[j][t]]
                            - run.forecast[j][t]
                    }
                    None => 0.0,
                }
            };
            let mut sigma: f64 = (0..net.res_units.len()).map(res_err).sum();
            if run.static_grid {
                sigma += (0..n_st).map(&w_at).sum::<f64>();
            }
            for (g, gen) in net.generators.iter().enumerate() {
                total += gen.cost_at(a.gen_p[g] - a.gen_alpha[g] * sigma);
            }
        }
    }
    Ok(total / tests as f64)
}

fn round_seed(base: u64, round: usize) -> u64 {
    base ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round as u64 + 1))
}

/// Evaluates a committed run over several independently seeded rounds.
pub fn evaluate_method_rounds(
    scn: &Scenario,
    cfg: &RunConfig,
    run: &MethodRun,
    rounds: usize,
    tests: usize,
) -> Result<ReliabilityReport, HarnessError> {
    if rounds == 0 {
        return Err(HarnessError::Config("rounds must be at least 1".into()));
    }
    let w_pool = if scn.stations().is_empty() {
        None
    } else {
        Some(scn.dist_test(cfg.n_dynamic)?)
    };
    let res_pool = scn.res_test(cfg.n_static)?;
    let draws = TestDraws {
        w_pool: w_pool.as_ref(),
        res_pool: res_pool.as_ref(),
    };
    let mut reports = Vec::with_capacity(rounds);
    for r in 0..rounds {
        reports.push(evaluate_reliability(
            &scn.grid,
            run,
            &draws,
            tests,
            round_seed(cfg.seed, r),
        )?);
    }
    let mean = reports.iter().map(|r| r.reliability).sum::<f64>() / rounds as f64;
    let var = reports
        .iter()
        .map(|r| (r.reliability - mean).powi(2))
        .sum::<f64>()
        / rounds as f64;
    Ok(ReliabilityReport {
        method: run.method.to_string(),
        rounds: reports,
        mean_reliability: mean,
        std_reliability: var.sqrt(),
        mean_window_solve_s: run.mean_window_solve().as_secs_f64(),
        offline_s: run.offline_time.as_secs_f64(),
    })
}

/// Runs and evaluates each method on the same scenario and seeds.
pub fn compare_methods(
    scn: &Scenario,
    cfg: &RunConfig,
    methods: &[Method],
    rounds: usize,
    tests: usize,
) -> Result<Vec<(MethodRun, ReliabilityReport)>, HarnessError> {
    methods
        .iter()
        .map(|&m| {
            let run = run_method(scn, cfg, m)?;
            let report = evaluate_method_rounds(scn, cfg, &run, rounds, tests)?;
            Ok((run, report))
        })
        .collect()
}

/// Identifying string for timing context: comparisons across machines are
/// out of scope, so every timing artifact carries this.
pub fn machine_fingerprint() -> String {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{}-{} {} logical cores",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cores
    )
}

/// Median pure-LP solve time of `reps` rebuilds of the first window.
pub fn median_window_solve(
    scn: &Scenario,
    cfg: &RunConfig,
    exact_dual: bool,
    reps: usize,
) -> Result<(Duration, usize, usize), HarnessError> {
    let horizon = scn.horizon;
    let (forecast, errors) = res_model(scn, cfg.n_static, horizon)?;
    let risk = risk_from_errors(scn, &errors, horizon, cfg)?;
    let weights = cfg.weights();
    let s2 = Stage2Config {
        grid: &scn.grid,
        risk: &risk,
        res_forecast: &forecast,
        tube: None,
        weights: &weights,
        demand_adjust: None,
        exact_dual,
    };
    let spec = WindowSpec {
        t0: 0,
        t_end: cfg.t_c.min(horizon),
        soc_start: initial_soc(scn.stations()),
    };
    let mut times = Vec::with_capacity(reps);
    let mut dims = (0, 0);
    for _ in 0..reps.max(1) {
        let prob = build_stage2_problem(&s2, &spec)?;
        dims = (prob.num_rows(), prob.num_cols());
        let sol = prob.solve()?;
        times.push(sol.solve_time);
    }
    times.sort();
    Ok((times[times.len() / 2], dims.0, dims.1))
}

// ---------------------------------------------------------------------------
// Synthetic benchmark instances.

fn load_shape(t: usize) -> f64 {
    0.75 + 0.25 * (2.0 * std::f64::consts::PI * (t as f64 - 9.0) / 24.0).sin()
}

fn ev_shape(t: usize) -> f64 {
    0.6 + 0.4 * (2.0 * std::f64::consts::PI * (t as f64 - 16.0) / 24.0).sin()
}

fn res_shape(t: usize) -> f64 {
    let x = (t as f64 - 5.0) / 14.0;
    if (0.0..=1.0).contains(&x) {
        (std::f64::consts::PI * x).sin()
    } else {
        0.0
    }
}

fn price_shape(t: usize) -> f64 {
    30.0 + 12.0 * (2.0 * std::f64::consts::PI * (t as f64 - 14.0) / 24.0).sin()
}

/// Number of slots in the bundled daily profiles.
pub const SYNTH_HORIZON: usize = 24;

fn synth_station(bus: usize, demand_level: f64) -> Station {
    Station {
        bus,
        soc_min: 0.0,
        soc_max: 0.3,
        p_ch_max: 0.1,
        p_dch_max: 0.1,
        demand_forecast: (0..SYNTH_HORIZON).map(|t| demand_level * ev_shape(t)).collect(),
        battery_cost: 45_000.0,
        eta_end: 0.8,
        b1: 1e-4,
        b2: 0.0,
        i_c: 1.0,
        delta_t: 1.0,
    }
}

fn synth_local_generator(bus: usize, idx: usize) -> Generator {
    let shift = 2.0 * idx as f64;
    Generator {
        bus,
        p_min: 0.0,
        p_max: 0.75,
        q_min: -0.5,
        q_max: 0.5,
        cost_pieces: vec![
            (0.0, 10.0 + shift),
            (0.3, 18.0 + shift),
            (0.55, 27.0 + shift),
        ],
    }
}

fn synth_intertie() -> Generator {
    Generator {
        bus: 1,
        p_min: 0.0,
        p_max: 10.0,
        q_min: -5.0,
        q_max: 5.0,
        cost_pieces: vec![(0.0, 38.0)],
    }
}

fn synth_bus(id: usize, parent: Option<usize>, base: f64) -> Bus {
    Bus {
        id,
        parent,
        active_load: (0..SYNTH_HORIZON).map(|t| base * load_shape(t)).collect(),
        reactive_load: (0..SYNTH_HORIZON).map(|t| 0.35 * base * load_shape(t)).collect(),
    }
}

fn synth_line(child: usize, r_base: f64) -> Line {
    let jitter = ((child * 7) % 5) as f64 / 4.0;
    let r = r_base * (1.0 + 0.5 * jitter);
    Line {
        child_bus: child,
        r,
        x: 0.6 * r,
    }
}

/// Synthetic 38-bus feeder: three laterals from the substation, local
/// generation at buses 2, 6, and 12, renewables at 6, 16, 20, 25 and 28,
/// and one charging station at bus 2. Series span one day in hourly slots.
pub fn synth_network_38() -> Network {
    let mut buses = vec![synth_bus(1, None, 0.0)];
    let feeders: [(usize, usize); 3] = [(2, 13), (14, 25), (26, 38)];
    let mut lines = Vec::new();
    for &(start, end) in &feeders {
        for id in start..=end {
            let parent = if id == start { 1 } else { id - 1 };
            let base = 0.04 + 0.03 * ((id * 13) % 7) as f64 / 6.0;
            buses.push(synth_bus(id, Some(parent), base));
            lines.push(synth_line(id, 0.0015));
        }
    }
    Network {
        name: "synthetic-38".into(),
        base_mva: 1.0,
        v0: 1.0,
        voltage_bounds: (0.95, 1.05),
        buses,
        lines,
        generators: vec![
            synth_intertie(),
            synth_local_generator(2, 0),
            synth_local_generator(6, 1),
            synth_local_generator(12, 2),
        ],
        res_units: [6, 16, 20, 25, 28]
            .into_iter()
            .map(|bus| ResUnit {
                bus,
                forecast: None,
                error_support: None,
            })
            .collect(),
        stations: vec![synth_station(2, 0.05)],
        charging_price: Some((0..SYNTH_HORIZON).map(price_shape).collect()),
    }
}

/// Candidate buses for growing the station count on the 94-bus instance.
pub const STATION_SITES_94: [usize; 6] = [2, 6, 10, 12, 19, 26];

/// Synthetic 94-bus feeder: four laterals, seven local generators,
/// renewables at 6, 10, 15, 19 and 25, and charging stations at 2 and 6.
pub fn synth_network_94() -> Network {
    let mut buses = vec![synth_bus(1, None, 0.0)];
    let feeders: [(usize, usize); 4] = [(2, 24), (25, 47), (48, 70), (71, 94)];
    let mut lines = Vec::new();
    for &(start, end) in &feeders {
        for id in start..=end {
            let parent = if id == start { 1 } else { id - 1 };
            let base = 0.025 + 0.02 * ((id * 11) % 7) as f64 / 6.0;
            buses.push(synth_bus(id, Some(parent), base));
            lines.push(synth_line(id, 0.0012));
        }
    }
    let mut generators = vec![synth_intertie()];
    for (i, bus) in [2, 6, 10, 12, 19, 20, 26].into_iter().enumerate() {
        generators.push(synth_local_generator(bus, i));
    }
    Network {
        name: "synthetic-94".into(),
        base_mva: 1.0,
        v0: 1.0,
        voltage_bounds: (0.95, 1.05),
        buses,
        lines,
        generators,
        res_units: [6, 10, 15, 19, 25]
            .into_iter()
            .map(|bus| ResUnit {
                bus,
                forecast: None,
                error_support: None,
            })
            .collect(),
        stations: vec![synth_station(2, 0.05), synth_station(6, 0.05)],
        charging_price: Some((0..SYNTH_HORIZON).map(price_shape).collect()),
    }
}

/// Minimal three-bus instance for structural and timing checks: intertie at
/// the root, one local generator plus the station at bus 2, one renewable
/// unit at bus 3.
pub fn synth_network_3() -> Network {
    Network {
        name: "synthetic-3".into(),
        base_mva: 1.0,
        v0: 1.0,
        voltage_bounds: (0.95, 1.05),
        buses: vec![
            synth_bus(1, None, 0.0),
            synth_bus(2, Some(1), 0.3),
            synth_bus(3, Some(2), 0.25),
        ],
        lines: vec![synth_line(2, 0.01), synth_line(3, 0.008)],
        generators: vec![synth_intertie(), synth_local_generator(2, 0)],
        res_units: vec![ResUnit {
            bus: 3,
            forecast: None,
            error_support: None,
        }],
        stations: vec![synth_station(2, 0.05)],
        charging_price: Some((0..SYNTH_HORIZON).map(price_shape).collect()),
    }
}

/// Renewable output pool for a network: per-unit daily profile with
/// uniform relative noise, truncated at zero. `None` when the network has
/// no renewable units.
pub fn synth_res_pool(
    net: &Network,
    n: usize,
    rel_noise: f64,
    seed: u64,
) -> Option<SampleSet> {
    if net.res_units.is_empty() {
        return None;
    }
    let mut names = Vec::new();
    for ru in &net.res_units {
        for t in 0..SYNTH_HORIZON {
            names.push(format!("bus{}_t{t}", ru.bus));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            net.res_units
                .iter()
                .flat_map(|_| {
                    (0..SYNTH_HORIZON)
                        .map(|t| {
                            let level = 0.12 * res_shape(t);
                            let noisy = level * (1.0 + rng.gen_range(-rel_noise..=rel_noise));
                            noisy.max(0.0)
                        })
                        .collect::<Vec<f64>>()
                })
                .collect()
        })
        .collect();
    Some(SampleSet::new(names, rows).expect("synthesized pool is well formed"))
}

/// Disturbance pool for a network's stations, sized relative to the demand
/// forecast. `None` when the network has no stations.
pub fn synth_dist_pool(
    net: &Network,
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<Option<DisturbanceDataset>, HarnessError> {
    if net.stations.is_empty() {
        return Ok(None);
    }
    let buses: Vec<usize> = net.stations.iter().map(|s| s.bus).collect();
    let forecasts: Vec<Vec<f64>> = net
        .stations
        .iter()
        .map(|s| s.demand_forecast.clone())
        .collect();
    Ok(Some(generate_disturbances(&buses, &forecasts, radius, n, seed)?))
}

/// The same network with its station list replaced by `count` stations on
/// the first `count` sites (reusing the first station as the template, or a
/// default one when the network has none).
pub fn with_station_count(
    net: &Network,
    count: usize,
    sites: &[usize],
) -> Result<Network, HarnessError> {
    if count == 0 || count > sites.len() {
        return Err(HarnessError::Config(format!(
            "station count {count} outside the {}-site list",
            sites.len()
        )));
    }
    let n = net.buses.len();
    let template = net
        .stations
        .first()
        .cloned()
        .unwrap_or_else(|| synth_station(1, 0.05));
    let mut out = net.clone();
    out.stations = sites[..count]
        .iter()
        .map(|&bus| {
            if bus == 0 || bus > n {
                return Err(HarnessError::Config(format!(
                    "station site {bus} outside the network"
                )));
            }
            let mut st = template.clone();
            st.bus = bus;
            Ok(st)
        })
        .collect::<Result<_, _>>()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sweep tables and plot data.

/// Grid of sweep points, one axis per table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepAxes {
    pub epsilon: Vec<f64>,
    pub beta: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub station_counts: Vec<usize>,
}

impl Default for SweepAxes {
    fn default() -> SweepAxes {
        SweepAxes {
            epsilon: vec![0.0, 0.001, 0.002, 0.005],
            beta: vec![0.98, 0.95, 0.90],
            sample_sizes: vec![10, 30, 50, 100],
            station_counts: vec![1, 2, 4, 6],
        }
    }
}

impl SweepAxes {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epsilon.is_empty()
            || self.beta.is_empty()
            || self.sample_sizes.is_empty()
            || self.station_counts.is_empty()
        {
            return Err(HarnessError::Config("sweep axes must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
pub struct SweepSummary {
    pub fingerprint: String,
    pub config: RunConfig,
    pub axes: SweepAxes,
    pub rounds: usize,
    pub tests: usize,
    pub files: Vec<String>,
    pub failures: Vec<String>,
}

fn write_table(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
    w.write_record(header).map_err(DataError::from)?;
    for row in rows {
        w.write_record(row).map_err(DataError::from)?;
    }
    w.flush().map_err(DataError::from)?;
    Ok(())
}

fn fmt_g(v: f64) -> String {
    format!("{v:.9}")
}

/// A scenario drawing its renewable training rows as a seeded bootstrap
/// resample of the original training block, for seed-to-seed variation on
/// fixed data files.
pub fn bootstrap_scenario(
    scn: &Scenario,
    n_train: usize,
    seed: u64,
) -> Result<Scenario, HarnessError> {
    let pool = match &scn.res_pool {
        None => {
            return Scenario::new(
                GridModel::new(scn.grid.net.clone())?,
                None,
                scn.dist_pool.clone(),
            )
        }
        Some(p) => p,
    };
    let block = pool.len().min(DEFAULT_RES_POOL - 100).max(n_train);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = (0..n_train)
        .map(|_| pool.rows[rng.gen_range(0..block)].clone())
        .collect();
    // Keep the held-out block intact for evaluations.
    rows.extend(pool.rows[block.min(pool.len())..].iter().cloned());
    if rows.len() == n_train {
        rows.push(pool.rows[pool.len() - 1].clone());
    }
    let resampled = SampleSet::new(pool.names.clone(), rows)?;
    Scenario::new(
        GridModel::new(scn.grid.net.clone())?,
        Some(resampled),
        scn.dist_pool.clone(),
    )
}

/// Runs every table of the sweep, writing one CSV per table plus plot data,
/// a JSON summary, and a log of any cells that failed (those cells hold
/// `NA`).
pub fn sweep_and_emit(
    scn: &Scenario,
    cfg: &RunConfig,
    axes: &SweepAxes,
    rounds: usize,
    tests: usize,
    out: &Path,
) -> Result<SweepSummary, HarnessError> {
    cfg.validate()?;
    axes.validate()?;
    std::fs::create_dir_all(out)?;
    let mut failures = Vec::new();
    let mut files = Vec::new();

    // Table 1: margin magnitudes and tube size against the ambiguity radius.
    {
        let mut rows = Vec::new();
        for &eps in &axes.epsilon {
            let mut c = *cfg;
            c.epsilon = eps;
            match run_method(scn, &c, Method::WdrMpc) {
                Ok(run) => {
                    let tube_width = run.tube.as_ref().map(|t| t.total_width()).unwrap_or(0.0);
                    let (mg, mv) = margin_means(&run);
                    rows.push(vec![
                        fmt_g(eps),
                        fmt_g(tube_width),
                        fmt_g(mg),
                        fmt_g(mv),
                        fmt_g(run.result.cost.weighted_total(&c.weights())),
                    ]);
                }
                Err(e) => {
                    failures.push(format!("table1 eps={eps}: {e}"));
                    rows.push(vec![
                        fmt_g(eps),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                    ]);
                }
            }
        }
        let path = out.join("table1_epsilon.csv");
        write_table(
            &path,
            &["epsilon", "tube_width", "margin_gen", "margin_volt", "cost"],
            &rows,
        )?;
        files.push(path.display().to_string());
    }

    // Table 2: LP size and solve time of the exact dual against the
    // accelerated form, on the small structural instance.
    {
        let net3 = synth_network_3();
        let res3 = synth_res_pool(&net3, DEFAULT_RES_POOL, RES_NOISE, cfg.seed ^ 0x33);
        let dist3 = synth_dist_pool(&net3, DEFAULT_DIST_POOL, DIST_RADIUS, cfg.seed ^ 0x34)?;
        let scn3 = Scenario::new(GridModel::new(net3)?, res3, dist3)?;
        let mut rows = Vec::new();
        for &ns in &axes.sample_sizes {
            let mut c = *cfg;
            c.n_static = ns;
            c.t_c = 1;
            let cell = (|| -> Result<Vec<String>, HarnessError> {
                let (ta, ra, _) = median_window_solve(&scn3, &c, false, 5)?;
                let (te, re, _) = median_window_solve(&scn3, &c, true, 5)?;
                Ok(vec![
                    ns.to_string(),
                    ra.to_string(),
                    re.to_string(),
                    fmt_g(ta.as_secs_f64()),
                    fmt_g(te.as_secs_f64()),
                ])
            })();
            match cell {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failures.push(format!("table2 n={ns}: {e}"));
                    rows.push(vec![
                        ns.to_string(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                    ]);
                }
            }
        }
        let path = out.join("table2_samples.csv");
        write_table(
            &path,
            &["n_samples", "accel_rows", "exact_rows", "accel_solve_s", "exact_solve_s"],
            &rows,
        )?;
        files.push(path.display().to_string());
    }

    // Table 3: reliability and cost against the confidence level.
    {
        let mut rows = Vec::new();
        for &beta in &axes.beta {
            let mut c = *cfg;
            c.beta = beta;
            let cell = (|| -> Result<Vec<String>, HarnessError> {
                let run = run_method(scn, &c, Method::WdrMpc)?;
                let rep = evaluate_method_rounds(scn, &c, &run, rounds, tests)?;
                Ok(vec![
                    fmt_g(beta),
                    fmt_g(rep.mean_reliability),
                    fmt_g(rep.std_reliability),
                    // System cost without the risk and margin terms.
                    fmt_g(run.result.cost.operational()),
                ])
            })();
            match cell {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failures.push(format!("table3 beta={beta}: {e}"));
                    rows.push(vec![fmt_g(beta), "NA".into(), "NA".into(), "NA".into()]);
                }
            }
        }
        let path = out.join("table3_beta.csv");
        write_table(
            &path,
            &["beta", "mean_reliability", "std_reliability", "cost"],
            &rows,
        )?;
        files.push(path.display().to_string());
    }

    // Table 4: offline and online time against the station count.
    {
        let sites: Vec<usize> = {
            let mut s: Vec<usize> = scn.grid.net.stations.iter().map(|st| st.bus).collect();
            for cand in STATION_SITES_94 {
                if !s.contains(&cand) && cand <= scn.grid.num_buses() {
                    s.push(cand);
                }
            }
            s
        };
        let mut rows = Vec::new();
        for &k in &axes.station_counts {
            let cell = (|| -> Result<Vec<String>, HarnessError> {
                let net_k = with_station_count(&scn.grid.net, k, &sites)?;
                let dist_k = synth_dist_pool(&net_k, DEFAULT_DIST_POOL, DIST_RADIUS, cfg.seed ^ 0x44)?;
                let scn_k = Scenario::new(GridModel::new(net_k)?, scn.res_pool.clone(), dist_k)?;
                let run = run_method(&scn_k, cfg, Method::WdrMpc)?;
                let (online, _, _) = median_window_solve(&scn_k, cfg, cfg.exact_dual, 5)?;
                let rep = evaluate_method_rounds(
                    &scn_k,
                    cfg,
                    &run,
                    rounds.min(5),
                    tests.min(200),
                )?;
                Ok(vec![
                    k.to_string(),
                    fmt_g(run.offline_time.as_secs_f64()),
                    fmt_g(online.as_secs_f64()),
                    fmt_g(rep.mean_reliability),
                ])
            })();
            match cell {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failures.push(format!("table4 stations={k}: {e}"));
                    rows.push(vec![k.to_string(), "NA".into(), "NA".into(), "NA".into()]);
                }
            }
        }
        let path = out.join("table4_stations.csv");
        write_table(
            &path,
            &["stations", "offline_s", "online_s", "reliability"],
            &rows,
        )?;
        files.push(path.display().to_string());
    }

    // Plot data: out-of-sample operational cost against the training sample
    // size, one row per bootstrap seed.
    {
        let mut rows = Vec::new();
        for &ns in &axes.sample_sizes {
            for s in 0..10u64 {
                let cell = (|| -> Result<Vec<String>, HarnessError> {
                    let scn_b = bootstrap_scenario(scn, ns, cfg.seed ^ (0x77 + s))?;
                    let mut c = *cfg;
                    c.n_static = ns;
                    let run = run_method(&scn_b, &c, Method::WdrMpc)?;
                    let w_pool = if scn_b.stations().is_empty() {
                        None
                    } else {
                        Some(scn_b.dist_test(c.n_dynamic)?)
                    };
                    let res_pool = scn_b.res_test(ns)?;
                    let draws = TestDraws {
                        w_pool: w_pool.as_ref(),
                        res_pool: res_pool.as_ref(),
                    };
                    let cost = realized_operational_cost(
                        &scn_b.grid,
                        &run,
                        &draws,
                        tests,
                        round_seed(c.seed, s as usize),
                    )?;
                    Ok(vec![ns.to_string(), s.to_string(), fmt_g(cost)])
                })();
                match cell {
                    Ok(row) => rows.push(row),
                    Err(e) => {
                        failures.push(format!("fig2 n={ns} seed={s}: {e}"));
                        rows.push(vec![ns.to_string(), s.to_string(), "NA".into()]);
                    }
                }
            }
        }
        let path = out.join("fig2_cost_vs_samples.csv");
        write_table(&path, &["n_samples", "seed", "realized_cost"], &rows)?;
        files.push(path.display().to_string());
    }

    // Plot data: reliability bars per method.
    {
        let mut rows = Vec::new();
        for m in Method::ALL {
            let cell = (|| -> Result<Vec<String>, HarnessError> {
                let run = run_method(scn, cfg, m)?;
                let rep = evaluate_method_rounds(scn, cfg, &run, rounds, tests)?;
                Ok(vec![
                    m.to_string(),
                    fmt_g(rep.mean_reliability),
                    fmt_g(rep.std_reliability),
                ])
            })();
            match cell {
                Ok(row) => rows.push(row),
                Err(e) => {
                    failures.push(format!("fig3 method={m}: {e}"));
                    rows.push(vec![m.to_string(), "NA".into(), "NA".into()]);
                }
            }
        }
        let path = out.join("fig3_reliability.csv");
        write_table(
            &path,
            &["method", "mean_reliability", "std_reliability"],
            &rows,
        )?;
        files.push(path.display().to_string());
    }

    let summary = SweepSummary {
        fingerprint: machine_fingerprint(),
        config: *cfg,
        axes: axes.clone(),
        rounds,
        tests,
        files,
        failures: failures.clone(),
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| HarnessError::Config(format!("summary serialization: {e}")))?,
    )?;
    std::fs::write(out.join("log.txt"), failures.join("\n") + "\n")?;
    Ok(summary)
}

/// Mean committed generator and voltage margin magnitudes.
fn margin_means(run: &MethodRun) -> (f64, f64) {
    let n = run.result.committed.len().max(1) as f64;
    let mut mg = 0.0;
    let mut mv = 0.0;
    for a in &run.result.committed {
        mg += a.d_g.iter().sum::<f64>() + a.u_g.iter().sum::<f64>();
        mv += a.d_v.iter().sum::<f64>() + a.u_v.iter().sum::<f64>();
    }
    (mg / n, mv / n)
}

// ---------------------------------------------------------------------------
// Result files for single runs.

/// Serializable view of one run for `summary.json`.
#[derive(Serialize)]
pub struct RunSummary {
    pub method: String,
    pub fingerprint: String,
    pub config: RunConfig,
    pub generation_cost: f64,
    pub charging_cost: f64,
    pub degradation_cost: f64,
    pub risk: f64,
    pub margin_norm: f64,
    pub weighted_total: f64,
    pub clamp_events: usize,
    pub offline_s: f64,
    pub windows: Vec<WindowRow>,
}

#[derive(Serialize)]
pub struct WindowRow {
    pub t0: usize,
    pub slots: usize,
    pub objective: f64,
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub solve_s: f64,
}

pub fn run_summary(cfg: &RunConfig, run: &MethodRun) -> RunSummary {
    let cost = &run.result.cost;
    RunSummary {
        method: run.method.to_string(),
        fingerprint: machine_fingerprint(),
        config: *cfg,
        generation_cost: cost.generation,
        charging_cost: cost.charging,
        degradation_cost: cost.degradation,
        risk: cost.risk,
        margin_norm: cost.norm,
        weighted_total: cost.weighted_total(&cfg.weights()),
        clamp_events: run.result.clamp_events.len(),
        offline_s: run.offline_time.as_secs_f64(),
        windows: run
            .result
            .windows
            .iter()
            .map(|w| WindowRow {
                t0: w.t0,
                slots: w.slots,
                objective: w.objective,
                rows: w.rows,
                cols: w.cols,
                iterations: w.iterations,
                solve_s: w.solve_time.as_secs_f64(),
            })
            .collect(),
    }
}

/// Committed actions as one wide CSV row per slot.
pub fn write_actions_csv(
    path: &Path,
    grid: &GridModel,
    result: &ScheduleResult,
) -> Result<(), HarnessError> {
    let net = &grid.net;
    let mut header: Vec<String> = vec!["t".into()];
    for (g, gen) in net.generators.iter().enumerate() {
        header.push(format!("pg{g}_bus{}", gen.bus));
        header.push(format!("qg{g}_bus{}", gen.bus));
        header.push(format!("alpha{g}_bus{}", gen.bus));
    }
    for (s, st) in net.stations.iter().enumerate() {
        header.push(format!("pb{s}_bus{}", st.bus));
        header.push(format!("soc{s}_bus{}", st.bus));
        header.push(format!("pcs{s}_bus{}", st.bus));
    }
    for bus in &net.buses {
        header.push(format!("v{}", bus.id));
    }
    for line in &net.lines {
        header.push(format!("fp{}", line.child_bus));
    }
    for line in &net.lines {
        header.push(format!("fq{}", line.child_bus));
    }
    header.push("margin_gen".into());
    header.push("margin_volt".into());

    let mut rows = Vec::with_capacity(result.committed.len());
    for a in &result.committed {
        let mut row: Vec<String> = vec![a.t.to_string()];
        for g in 0..net.generators.len() {
            row.push(fmt_g(a.gen_p[g]));
            row.push(fmt_g(a.gen_q[g]));
            row.push(fmt_g(a.gen_alpha[g]));
        }
        for s in 0..net.stations.len() {
            row.push(fmt_g(a.station_p[s]));
            row.push(fmt_g(a.station_soc[s]));
            row.push(fmt_g(a.station_pcs[s]));
        }
        for v in &a.voltage {
            row.push(fmt_g(*v));
        }
        for f in &a.flow_p {
            row.push(fmt_g(*f));
        }
        for f in &a.flow_q {
            row.push(fmt_g(*f));
        }
        row.push(fmt_g(a.d_g.iter().sum::<f64>() + a.u_g.iter().sum::<f64>()));
        row.push(fmt_g(a.d_v.iter().sum::<f64>() + a.u_v.iter().sum::<f64>()));
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_table(path, &header_refs, &rows)
}

/// Per-round reliability rows for `evaluate.csv`.
pub fn write_reliability_csv(
    path: &Path,
    reports: &[ReliabilityReport],
) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for rep in reports {
        for (r, round) in rep.rounds.iter().enumerate() {
            rows.push(vec![
                rep.method.clone(),
                r.to_string(),
                round.tests.to_string(),
                round.violations.to_string(),
                fmt_g(round.reliability),
                round.families.soc.to_string(),
                round.families.input.to_string(),
                round.families.voltage.to_string(),
                round.families.generator.to_string(),
            ]);
        }
    }
    write_table(
        path,
        &[
            "method",
            "round",
            "tests",
            "violations",
            "reliability",
            "soc_events",
            "input_events",
            "voltage_events",
            "generator_events",
        ],
        &rows,
    )
}
