//! Closed-loop error dynamics and offline ambiguity-tube synthesis.
//!
//! Battery state errors follow the integrator recursion
//! `e(t+1) = (A+BK) e(t) + w(t)` with `A = B = 1` per station, so a
//! contraction gain `K = ρ−1` yields the stable closed loop `ρ e + w`.
//! Pushing the recorded disturbance sequences through this recursion gives
//! per-slot error samples; for each slot and station an LP then sizes an
//! interval that trades its own width against a distributionally robust
//! penalty on mass escaping it. The resulting tube tightens the SoC and
//! charging-power boxes via Pontryagin set differences, which for intervals
//! reduce to endpoint arithmetic.

use crate::data::{DataError, DisturbanceDataset};
use crate::dro::{DroError, MaxAffineLoss};
use crate::lp::{LinExpr, LinearProgram, LpError, Rel};
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TubeError {
    #[error("contraction factor {0} outside [0, 1)")]
    BadRho(f64),
    #[error("confidence level {0} outside (0, 1)")]
    BadBeta(f64),
    #[error("horizon mismatch: {0}")]
    HorizonMismatch(String),
    #[error("tightened set empty at slot {slot}, dim {dim}")]
    EmptyTightenedSet { slot: usize, dim: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Decoupled integrator dynamics with a shared contraction factor.
#[derive(Clone, Debug)]
pub struct ClosedLoopSystem {
    pub dim: usize,
    pub rho: f64,
}

impl ClosedLoopSystem {
    pub fn new(dim: usize, rho: f64) -> Result<ClosedLoopSystem, TubeError> {
        if !(0.0..1.0).contains(&rho) {
            return Err(TubeError::BadRho(rho));
        }
        Ok(ClosedLoopSystem { dim, rho })
    }

    /// Feedback gain per dimension: K = ρ − 1, so A + BK = ρ.
    pub fn k_gain(&self) -> f64 {
        self.rho - 1.0
    }
}

/// Synthesize the contraction gain for a plain integrator plant.
pub fn design_feedback_gain(dim: usize, rho: f64) -> Result<ClosedLoopSystem, TubeError> {
    ClosedLoopSystem::new(dim, rho)
}

/// Per-slot error samples: `samples[t][j][i]` is sequence i's error in
/// station j at slot t, for t = 0..=T (slot 0 is exactly zero).
#[derive(Clone, Debug)]
pub struct ErrorSamples {
    pub dim: usize,
    /// Number of slots, disturbance horizon plus one.
    pub horizon: usize,
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// Run every disturbance sequence through the closed-loop recursion.
pub fn propagate_error_samples(
    sys: &ClosedLoopSystem,
    data: &DisturbanceDataset,
) -> Result<ErrorSamples, TubeError> {
    if data.num_stations() != sys.dim {
        return Err(TubeError::HorizonMismatch(format!(
            "{} stations in data, system has dim {}",
            data.num_stations(),
            sys.dim
        )));
    }
    let t_len = data.horizon + 1;
    let n = data.len();
    let mut samples = vec![vec![vec![0.0; n]; sys.dim]; t_len];
    for i in 0..n {
        for j in 0..sys.dim {
            let mut e = 0.0;
            for t in 0..data.horizon {
                e = sys.rho * e + data.value(i, j, t);
                samples[t + 1][j][i] = e;
            }
        }
    }
    Ok(ErrorSamples { dim: sys.dim, horizon: t_len, samples })
}

/// Error-support intervals by interval arithmetic on the recursion:
/// `[lo, hi](t+1) = ρ·[lo, hi](t) + w_support(t)`. Slot 0 is {0}.
pub fn error_supports(
    sys: &ClosedLoopSystem,
    disturbance_supports: &[Vec<(f64, f64)>],
) -> Result<Vec<Vec<(f64, f64)>>, TubeError> {
    if disturbance_supports.len() != sys.dim {
        return Err(TubeError::HorizonMismatch(format!(
            "{} support series, system has dim {}",
            disturbance_supports.len(),
            sys.dim
        )));
    }
    let t_data = disturbance_supports.first().map(|s| s.len()).unwrap_or(0);
    let mut out = vec![vec![(0.0, 0.0); sys.dim]; t_data + 1];
    for j in 0..sys.dim {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for t in 0..t_data {
            let (wlo, whi) = disturbance_supports[j][t];
            lo = sys.rho * lo + wlo;
            hi = sys.rho * hi + whi;
            out[t + 1][j] = (lo, hi);
        }
    }
    Ok(out)
}

/// Per-slot, per-dimension tube intervals.
#[derive(Clone, Debug)]
pub struct AmbiguityTube {
    pub dim: usize,
    pub horizon: usize,
    /// `bounds[t][j] = (α̲, ᾱ)`; slot 0 is exactly (0, 0).
    pub bounds: Vec<Vec<(f64, f64)>>,
}

impl AmbiguityTube {
    /// Total width, the natural size measure for monotonicity checks.
    pub fn total_width(&self) -> f64 {
        self.bounds
            .iter()
            .flat_map(|slot| slot.iter().map(|&(lo, hi)| hi - lo))
            .sum()
    }

    pub fn contains(&self, t: usize, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.bounds[t])
            .all(|(&e, &(lo, hi))| lo - 1e-12 <= e && e <= hi + 1e-12)
    }
}

/// One slot/dim interval-sizing LP: minimize the interval width plus the
/// robustified exclusion penalty
/// `(ᾱ−α̲) + λε + (μ/((1−β)N)) Σ_i ([α̲−ê_i]_+ + [ê_i−ᾱ]_+)`
/// subject to `α̲ ≤ ᾱ` and `λ ≥ μ/(1−β)` (the hinge loss's Lipschitz
/// constant, which is what lets the multiplier decouple from the samples).
fn stage1_slot_lp(samples: &[f64], epsilon: f64, beta: f64, mu: f64) -> Result<(f64, f64), TubeError> {
    let n = samples.len();
    let coef = mu / ((1.0 - beta) * n as f64);
    let lambda1 = mu / (1.0 - beta);
    let mut lp = LinearProgram::new("tube_slot");
    let alo = lp.add_var("alpha_lo", f64::NEG_INFINITY, f64::INFINITY, -1.0);
    let ahi = lp.add_var("alpha_hi", f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let _lambda = lp.add_var("lambda", lambda1, f64::INFINITY, epsilon);
    for (i, &e) in samples.iter().enumerate() {
        let h_lo = lp.add_hinge(&format!("excl_lo_{i}"), &LinExpr::var(alo).plus(-e), 0.0);
        lp.set_obj_coeff(h_lo, coef);
        let h_hi = lp.add_hinge(&format!("excl_hi_{i}"), &LinExpr::constant(e).term(ahi, -1.0), 0.0);
        lp.set_obj_coeff(h_hi, coef);
    }
    lp.add_row(
        "ordered",
        &LinExpr::var(alo).term(ahi, -1.0),
        Rel::Le,
        0.0,
    );
    let sol = lp.solve()?;
    if !sol.is_optimal() {
        return Err(TubeError::Lp(LpError::Numerical(format!(
            "tube slot LP ended {:?}",
            sol.status
        ))));
    }
    Ok((sol.value(alo), sol.value(ahi)))
}

/// Size the tube: slot 0 is the zero interval; every later (slot, dim)
/// solves its own LP, independently and in parallel. The supports are used
/// to sanity-check the samples; the optimal multiplier itself is pinned by
/// the hinge Lipschitz constant and needs no support geometry.
pub fn stage1_tube_bounds(
    errors: &ErrorSamples,
    supports: &[Vec<(f64, f64)>],
    epsilon: f64,
    beta: f64,
    mu: f64,
) -> Result<AmbiguityTube, TubeError> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(TubeError::BadBeta(beta));
    }
    if supports.len() != errors.horizon {
        return Err(TubeError::HorizonMismatch(format!(
            "{} support slots, {} error slots",
            supports.len(),
            errors.horizon
        )));
    }
    let tol = 1e-9;
    for t in 1..errors.horizon {
        for j in 0..errors.dim {
            let (lo, hi) = supports[t][j];
            if errors.samples[t][j].iter().any(|&e| e < lo - tol || e > hi + tol) {
                return Err(TubeError::HorizonMismatch(format!(
                    "error sample outside support at slot {t}, dim {j}"
                )));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (1..errors.horizon)
        .flat_map(|t| (0..errors.dim).map(move |j| (t, j)))
        .collect();
    let solved: Result<Vec<((usize, usize), (f64, f64))>, TubeError> = jobs
        .par_iter()
        .map(|&(t, j)| {
            stage1_slot_lp(&errors.samples[t][j], epsilon, beta, mu).map(|b| ((t, j), b))
        })
        .collect();
    let mut bounds = vec![vec![(0.0, 0.0); errors.dim]; errors.horizon];
    for ((t, j), b) in solved? {
        bounds[t][j] = b;
    }
    Ok(AmbiguityTube { dim: errors.dim, horizon: errors.horizon, bounds })
}

/// Interval Pontryagin difference: `[a,b] ⊖ [c,d] = [a−c, b−d]`, the set of
/// points that stay inside the outer interval under any inner-interval
/// translation. Errors when the inner interval is too wide.
pub fn pontryagin_tighten(
    outer: (f64, f64),
    inner: (f64, f64),
) -> Result<(f64, f64), TubeError> {
    let (lo, hi) = (outer.0 - inner.0, outer.1 - inner.1);
    if lo > hi {
        return Err(TubeError::EmptyTightenedSet { slot: 0, dim: 0 });
    }
    Ok((lo, hi))
}

/// Image of an interval under scalar multiplication; negative factors swap
/// the endpoints.
pub fn scale_interval(k: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    if k >= 0.0 {
        (k * lo, k * hi)
    } else {
        (k * hi, k * lo)
    }
}

/// Tightened per-slot constraint boxes for states and inputs.
#[derive(Clone, Debug)]
pub struct TightenedSets {
    /// SoC intervals per slot, per dim.
    pub z_bounds: Vec<Vec<(f64, f64)>>,
    /// Nominal-input intervals per slot, per dim.
    pub v_bounds: Vec<Vec<(f64, f64)>>,
}

/// Shrink the state and input boxes by the tube: `ℤ(t) = X ⊖ S(t)` and
/// `𝕍(t) = U ⊖ K·S(t)`. Fails with slot/dim diagnostics when a slot's tube
/// outgrows its box.
pub fn assemble_tube(
    sys: &ClosedLoopSystem,
    tube: &AmbiguityTube,
    soc_box: &[(f64, f64)],
    input_box: &[(f64, f64)],
) -> Result<TightenedSets, TubeError> {
    if soc_box.len() != tube.dim || input_box.len() != tube.dim {
        return Err(TubeError::HorizonMismatch(format!(
            "{} soc boxes, {} input boxes, tube dim {}",
            soc_box.len(),
            input_box.len(),
            tube.dim
        )));
    }
    let k = sys.k_gain();
    let mut z_bounds = Vec::with_capacity(tube.horizon);
    let mut v_bounds = Vec::with_capacity(tube.horizon);
    for (t, slot) in tube.bounds.iter().enumerate() {
        let mut z_slot = Vec::with_capacity(tube.dim);
        let mut v_slot = Vec::with_capacity(tube.dim);
        for (j, &s) in slot.iter().enumerate() {
            let z = pontryagin_tighten(soc_box[j], s)
                .map_err(|_| TubeError::EmptyTightenedSet { slot: t, dim: j })?;
            let v = pontryagin_tighten(input_box[j], scale_interval(k, s))
                .map_err(|_| TubeError::EmptyTightenedSet { slot: t, dim: j })?;
            z_slot.push(z);
            v_slot.push(v);
        }
        z_bounds.push(z_slot);
        v_bounds.push(v_slot);
    }
    Ok(TightenedSets { z_bounds, v_bounds })
}

/// Tube and tightened sets as CSV rows (t, dim, alpha_lo, alpha_hi, z_lo,
/// z_hi, v_lo, v_hi).
pub fn write_tube_csv(
    path: &Path,
    tube: &AmbiguityTube,
    sets: &TightenedSets,
) -> Result<(), TubeError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
    w.write_record(["t", "dim", "alpha_lo", "alpha_hi", "z_lo", "z_hi", "v_lo", "v_hi"])
        .map_err(DataError::from)?;
    for t in 0..tube.horizon {
        for j in 0..tube.dim {
            let (alo, ahi) = tube.bounds[t][j];
            let (zlo, zhi) = sets.z_bounds[t][j];
            let (vlo, vhi) = sets.v_bounds[t][j];
            w.write_record([
                t.to_string(),
                j.to_string(),
                alo.to_string(),
                ahi.to_string(),
                zlo.to_string(),
                zhi.to_string(),
                vlo.to_string(),
                vhi.to_string(),
            ])
            .map_err(DataError::from)?;
        }
    }
    w.flush().map_err(DataError::from)?;
    Ok(())
}

/// The accelerated-form risk value the stage-1 LP assigns to fixed interval
/// bounds, as a max-affine DRO instance. Used to cross-check the LP against
/// the generic machinery: the exclusion hinges form the three-piece loss
/// `(μ/(1−β)) max(α̲−e, e−ᾱ, 0)` whose Lipschitz constant is exactly the
/// LP's multiplier floor.
pub fn exclusion_loss(alpha_lo: f64, alpha_hi: f64, beta: f64, mu: f64) -> Result<MaxAffineLoss, DroError> {
    let scale = mu / (1.0 - beta);
    MaxAffineLoss::new(vec![
        (vec![-scale], scale * alpha_lo),
        (vec![scale], -scale * alpha_hi),
        (vec![0.0], 0.0),
    ])
}

/// Fraction of fresh sequences whose whole error trajectory stays inside
/// the tube.
pub fn tube_coverage(
    sys: &ClosedLoopSystem,
    tube: &AmbiguityTube,
    fresh: &DisturbanceDataset,
) -> Result<f64, TubeError> {
    let errors = propagate_error_samples(sys, fresh)?;
    if errors.horizon > tube.horizon {
        return Err(TubeError::HorizonMismatch(format!(
            "{} error slots, tube has {}",
            errors.horizon, tube.horizon
        )));
    }
    let n = fresh.len();
    let mut covered = 0usize;
    for i in 0..n {
        let ok = (0..errors.horizon).all(|t| {
            (0..errors.dim).all(|j| {
                let e = errors.samples[t][j][i];
                let (lo, hi) = tube.bounds[t][j];
                lo - 1e-12 <= e && e <= hi + 1e-12
            })
        });
        if ok {
            covered += 1;
        }
    }
    Ok(covered as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_disturbances, WassersteinBall};
    use crate::dro::{accelerated, exact_dual, saa_value};

    fn const_dataset(value: f64, n: usize, horizon: usize) -> DisturbanceDataset {
        DisturbanceDataset::new(vec![2], horizon, vec![vec![value; horizon]; n]).unwrap()
    }

    #[test]
    fn gain_is_contraction_minus_one() {
        let sys = design_feedback_gain(1, 0.5).unwrap();
        assert_eq!(sys.k_gain(), -0.5);
        assert!(design_feedback_gain(1, 1.0).is_err());
        assert!(design_feedback_gain(1, -0.1).is_err());
        assert!(design_feedback_gain(1, 0.0).is_ok());
    }

    #[test]
    fn constant_disturbance_follows_geometric_recursion() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let data = const_dataset(0.1, 3, 3);
        let e = propagate_error_samples(&sys, &data).unwrap();
        let want = [0.0, 0.1, 0.15, 0.175];
        for (t, &w) in want.iter().enumerate() {
            for i in 0..3 {
                assert!((e.samples[t][0][i] - w).abs() < 1e-15, "t={t}");
            }
        }
    }

    #[test]
    fn zero_disturbance_keeps_error_at_zero() {
        let sys = ClosedLoopSystem::new(2, 0.7).unwrap();
        let data = DisturbanceDataset::new(vec![2, 6], 4, vec![vec![0.0; 8]; 5]).unwrap();
        let e = propagate_error_samples(&sys, &data).unwrap();
        assert!(e
            .samples
            .iter()
            .all(|slot| slot.iter().all(|d| d.iter().all(|&v| v == 0.0))));
    }

    #[test]
    fn recursion_matches_geometric_closed_form() {
        let sys = ClosedLoopSystem::new(1, 0.37).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.5; 6]], 0.4, 10, 77).unwrap();
        let e = propagate_error_samples(&sys, &data).unwrap();
        for i in 0..10 {
            for t in 1..=6 {
                let closed: f64 = (0..t)
                    .map(|j| sys.rho.powi((t - 1 - j) as i32) * data.value(i, 0, j))
                    .sum();
                assert!((e.samples[t][0][i] - closed).abs() < 1e-12, "i={i} t={t}");
            }
        }
    }

    #[test]
    fn deadbeat_error_equals_previous_disturbance() {
        let sys = ClosedLoopSystem::new(1, 0.0).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.3; 5]], 0.5, 8, 5).unwrap();
        let e = propagate_error_samples(&sys, &data).unwrap();
        for i in 0..8 {
            for t in 1..=5 {
                assert_eq!(e.samples[t][0][i], data.value(i, 0, t - 1));
            }
        }
    }

    #[test]
    fn supports_follow_interval_recursion() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let s = error_supports(&sys, &[vec![(-0.1, 0.2); 3]]).unwrap();
        assert_eq!(s[0][0], (0.0, 0.0));
        assert_eq!(s[1][0], (-0.1, 0.2));
        assert!((s[2][0].0 + 0.15).abs() < 1e-15);
        assert!((s[2][0].1 - 0.3).abs() < 1e-15);
    }

    /// Independent closed form for the slot LP: the optimal bounds are the
    /// k*-th smallest and k*-th largest samples with k* = ceil((1−β)N/μ),
    /// read off the hinge subgradient balance.
    fn quantile_oracle(samples: &[f64], beta: f64, mu: f64) -> Option<(f64, f64)> {
        let n = samples.len();
        let k = ((1.0 - beta) * n as f64 / mu).ceil() as usize;
        if k == 0 || k > n {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Some((s[k - 1], s[n - k]))
    }

    #[test]
    fn slot_lp_matches_quantile_closed_form() {
        let mut state = 0x70b3_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..10 {
            let n = 30 + (next() * 100.0) as usize;
            let samples: Vec<f64> = (0..n).map(|_| next() * 0.4 - 0.2).collect();
            let beta = 0.9;
            let mu = 2.0 + next() * 5.0;
            let (lo, hi) = stage1_slot_lp(&samples, 0.001, beta, mu).unwrap();
            let (olo, ohi) = quantile_oracle(&samples, beta, mu).unwrap();
            assert!((lo - olo).abs() < 1e-7, "trial {trial}: {lo} vs {olo}");
            assert!((hi - ohi).abs() < 1e-7, "trial {trial}: {hi} vs {ohi}");
        }
    }

    #[test]
    fn degenerate_equal_samples_give_point_tube() {
        let (lo, hi) = stage1_slot_lp(&[0.07; 40], 0.0, 0.95, 1000.0).unwrap();
        assert!((lo - 0.07).abs() < 1e-9);
        assert!((hi - 0.07).abs() < 1e-9);
    }

    #[test]
    fn vanishing_weight_collapses_the_tube() {
        let samples: Vec<f64> = (0..50).map(|i| (i as f64) / 50.0 - 0.5).collect();
        let (lo, hi) = stage1_slot_lp(&samples, 0.001, 0.95, 1e-6).unwrap();
        assert!(hi - lo < 1e-6, "width {}", hi - lo);
    }

    #[test]
    fn large_weight_spans_the_sample_range() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.4; 4]], 0.5, 500, 21).unwrap();
        let errors = propagate_error_samples(&sys, &data).unwrap();
        let supports = error_supports(&sys, &data.slot_supports(0.05)).unwrap();
        let tube = stage1_tube_bounds(&errors, &supports, 0.001, 0.95, 1000.0).unwrap();
        assert_eq!(tube.bounds[0][0], (0.0, 0.0));
        for t in 1..tube.horizon {
            let vals = &errors.samples[t][0];
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // k* = ceil(0.05 * 500 / 1000) = 1: the extreme order statistics.
            let (lo, hi) = tube.bounds[t][0];
            assert!((lo - min).abs() < 1e-7, "t={t}: {lo} vs {min}");
            assert!((hi - max).abs() < 1e-7, "t={t}: {hi} vs {max}");
        }
    }

    #[test]
    fn tube_width_grows_with_the_exclusion_weight() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.4; 5]], 0.5, 200, 13).unwrap();
        let errors = propagate_error_samples(&sys, &data).unwrap();
        let supports = error_supports(&sys, &data.slot_supports(0.05)).unwrap();
        let mut last = -1.0;
        for &mu in &[0.5, 2.0, 10.0, 100.0, 1000.0] {
            let tube = stage1_tube_bounds(&errors, &supports, 0.001, 0.95, mu).unwrap();
            let w = tube.total_width();
            assert!(w >= last - 1e-9, "width dropped at mu={mu}: {w} < {last}");
            last = w;
        }
    }

    #[test]
    fn slot_risk_upper_bounds_exact_dual_at_fixed_bounds() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.4; 3]], 0.5, 120, 3).unwrap();
        let errors = propagate_error_samples(&sys, &data).unwrap();
        let supports = error_supports(&sys, &data.slot_supports(0.05)).unwrap();
        let (eps, beta, mu) = (0.01, 0.9, 5.0);
        let tube = stage1_tube_bounds(&errors, &supports, eps, beta, mu).unwrap();
        for t in 1..tube.horizon {
            let (alo, ahi) = tube.bounds[t][0];
            let loss = exclusion_loss(alo, ahi, beta, mu).unwrap();
            let samples: Vec<Vec<f64>> = errors.samples[t][0].iter().map(|&e| vec![e]).collect();
            let ball = WassersteinBall::new(eps, vec![supports[t][0]]).unwrap();
            let exact = exact_dual(&loss, &ball, &samples).unwrap();
            let accel = accelerated(&loss, &ball, &samples).unwrap();
            // The LP prices risk at the accelerated value: λ1 ε + SAA.
            let lambda1 = mu / (1.0 - beta);
            let lp_risk = lambda1 * eps + saa_value(&loss, &samples).unwrap();
            assert!((accel.objective - lp_risk).abs() < 1e-9, "t={t}");
            assert!(accel.objective >= exact.objective - 1e-8, "t={t}");
        }
    }

    #[test]
    fn interval_difference_matches_hand_results() {
        let (lo, hi) = pontryagin_tighten((0.0, 0.3), (-0.05, 0.08)).unwrap();
        assert!((lo - 0.05).abs() < 1e-15 && (hi - 0.22).abs() < 1e-15, "[{lo}, {hi}]");
        assert_eq!(pontryagin_tighten((-1.0, 2.0), (0.0, 0.0)).unwrap(), (-1.0, 2.0));
        assert!(pontryagin_tighten((0.0, 0.1), (-0.2, 0.2)).is_err());
    }

    #[test]
    fn negative_gain_swaps_inner_endpoints() {
        let ks = scale_interval(-0.5, (-0.1, 0.2));
        assert_eq!(ks, (-0.1, 0.05));
        let v = pontryagin_tighten((-0.1, 0.1), ks).unwrap();
        assert!((v.0 - 0.0).abs() < 1e-15 && (v.1 - 0.05).abs() < 1e-15, "{v:?}");
    }

    #[test]
    fn tightened_interval_is_exactly_the_robust_membership_set() {
        // Grid check: u ∈ U ⊖ KS iff u + ks ∈ U for every ks in KS.
        let outer = (-0.1, 0.1);
        let inner = scale_interval(-0.5, (-0.1, 0.2));
        let (lo, hi) = pontryagin_tighten(outer, inner).unwrap();
        let steps = 1000;
        for g in 0..=steps {
            let u = -0.15 + 0.3 * g as f64 / steps as f64;
            let robust = (0..=steps).all(|h| {
                let ks = inner.0 + (inner.1 - inner.0) * h as f64 / steps as f64;
                outer.0 - 1e-9 <= u + ks && u + ks <= outer.1 + 1e-9
            });
            let inside = lo - 1e-9 <= u && u <= hi + 1e-9;
            assert_eq!(robust, inside, "u={u}");
        }
    }

    #[test]
    fn zero_tube_returns_full_boxes() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let tube = AmbiguityTube { dim: 1, horizon: 3, bounds: vec![vec![(0.0, 0.0)]; 3] };
        let sets = assemble_tube(&sys, &tube, &[(0.0, 0.3)], &[(-0.1, 0.1)]).unwrap();
        for t in 0..3 {
            assert_eq!(sets.z_bounds[t][0], (0.0, 0.3));
            assert_eq!(sets.v_bounds[t][0], (-0.1, 0.1));
        }
    }

    #[test]
    fn oversized_tube_reports_slot_and_dim() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let tube = AmbiguityTube {
            dim: 1,
            horizon: 3,
            bounds: vec![vec![(0.0, 0.0)], vec![(-0.01, 0.01)], vec![(-0.5, 0.5)]],
        };
        match assemble_tube(&sys, &tube, &[(0.0, 0.3)], &[(-0.1, 0.1)]) {
            Err(TubeError::EmptyTightenedSet { slot: 2, dim: 0 }) => {}
            other => panic!("expected empty set at slot 2, got {other:?}"),
        }
    }

    #[test]
    fn full_scale_stage_one_keeps_sets_nonempty() {
        // SoC box 0.3 MWh, power caps 0.1 MW, 500 sequences, 12 slots.
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let data = generate_disturbances(&[2], &[vec![0.05; 12]], 0.2, 500, 11).unwrap();
        let errors = propagate_error_samples(&sys, &data).unwrap();
        let supports = error_supports(&sys, &data.slot_supports(0.05)).unwrap();
        let tube = stage1_tube_bounds(&errors, &supports, 0.001, 0.95, 1000.0).unwrap();
        let sets = assemble_tube(&sys, &tube, &[(0.0, 0.3)], &[(-0.1, 0.1)]).unwrap();
        for t in 0..tube.horizon {
            assert!(sets.z_bounds[t][0].0 <= sets.z_bounds[t][0].1);
            assert!(sets.v_bounds[t][0].0 <= sets.v_bounds[t][0].1);
        }
    }

    #[test]
    fn coverage_on_fresh_draws_meets_the_confidence_target() {
        let sys = ClosedLoopSystem::new(1, 0.5).unwrap();
        let train = generate_disturbances(&[2], &[vec![0.05; 12]], 0.2, 500, 1).unwrap();
        let errors = propagate_error_samples(&sys, &train).unwrap();
        let supports = error_supports(&sys, &train.slot_supports(0.05)).unwrap();
        let tube = stage1_tube_bounds(&errors, &supports, 0.001, 0.95, 1000.0).unwrap();
        let fresh = generate_disturbances(&[2], &[vec![0.05; 12]], 0.2, 1000, 2).unwrap();
        let cov = tube_coverage(&sys, &tube, &fresh).unwrap();
        assert!(cov >= 0.93, "coverage {cov}");
    }

    #[test]
    fn deadbeat_tube_stabilizes_for_repeated_disturbances() {
        // Each sequence repeats its own constant, so the per-slot samples
        // coincide for t >= 1 and the sized intervals must too.
        let sys = ClosedLoopSystem::new(1, 0.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64) / 100.0 - 0.3; 6]).collect();
        let data = DisturbanceDataset::new(vec![2], 6, rows).unwrap();
        let errors = propagate_error_samples(&sys, &data).unwrap();
        let supports = error_supports(&sys, &data.slot_supports(0.05)).unwrap();
        let tube = stage1_tube_bounds(&errors, &supports, 0.001, 0.95, 1000.0).unwrap();
        for t in 2..tube.horizon {
            assert!((tube.bounds[t][0].0 - tube.bounds[1][0].0).abs() < 1e-9);
            assert!((tube.bounds[t][0].1 - tube.bounds[1][0].1).abs() < 1e-9);
        }
    }

    #[test]
    fn tube_csv_has_one_row_per_slot_and_dim() {
        let sys = ClosedLoopSystem::new(2, 0.5).unwrap();
        let tube = AmbiguityTube {
            dim: 2,
            horizon: 3,
            bounds: vec![vec![(0.0, 0.0); 2], vec![(-0.1, 0.1); 2], vec![(-0.15, 0.12); 2]],
        };
        let sets = assemble_tube(&sys, &tube, &[(0.0, 0.3); 2], &[(-0.1, 0.1); 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tube.csv");
        write_tube_csv(&path, &tube, &sets).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines[0].starts_with("t,dim,alpha_lo"));
    }
}
