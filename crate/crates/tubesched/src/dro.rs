//! Worst-case expectation of max-affine losses over a Wasserstein ball.
//!
//! The ambiguity set is a type-1 Wasserstein ball (ℓ1 ground metric) around
//! the empirical distribution of the samples, intersected with a box
//! support. For max-affine losses the dual of the worst-case expectation
//! closes in finitely many linear pieces: the inner supremum over the box is
//! attained at the sample point or a support vertex, coordinate by
//! coordinate. [`exact_dual`] minimizes the resulting convex piecewise-
//! linear function of the multiplier exactly over its breakpoints;
//! [`accelerated`] instead pins the multiplier at the loss's Lipschitz
//! constant, trading tightness for a sample-count-independent constraint
//! footprint. [`brute_force_worst_case`] solves the discretized primal
//! transport program directly and serves as the reference oracle.

use crate::data::WassersteinBall;
use crate::lp::{LinExpr, LinearProgram, LpError, Rel, VarId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DroError {
    #[error("invalid loss: {0}")]
    BadLoss(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no samples")]
    NoSamples,
    #[error("sample {index} lies outside the support box in dim {dim}")]
    SampleOutsideSupport { index: usize, dim: usize },
    #[error("confidence level {0} outside (0,1)")]
    BadBeta(f64),
    #[error("grid too coarse: {coarse} vs {fine} at doubled resolution")]
    GridTooCoarse { coarse: f64, fine: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Pointwise maximum of affine pieces: `loss(ξ) = max_j ⟨a_j, ξ⟩ + b_j`.
#[derive(Clone, Debug)]
pub struct MaxAffineLoss {
    pieces: Vec<(Vec<f64>, f64)>,
    dim: usize,
}

impl MaxAffineLoss {
    pub fn new(pieces: Vec<(Vec<f64>, f64)>) -> Result<MaxAffineLoss, DroError> {
        let dim = match pieces.first() {
            None => return Err(DroError::BadLoss("need at least one piece".into())),
            Some((a, _)) => a.len(),
        };
        for (j, (a, b)) in pieces.iter().enumerate() {
            if a.len() != dim {
                return Err(DroError::BadLoss(format!(
                    "piece {j} has dim {}, piece 0 has {dim}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
                return Err(DroError::BadLoss(format!("piece {j} has a non-finite coefficient")));
            }
        }
        Ok(MaxAffineLoss { pieces, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[(Vec<f64>, f64)] {
        &self.pieces
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|(a, b)| a.iter().zip(xi).map(|(ac, xc)| ac * xc).sum::<f64>() + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of a maximizing piece; ties go to the lowest index.
    pub fn argmax_piece(&self, xi: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, (a, b)) in self.pieces.iter().enumerate() {
            let v = a.iter().zip(xi).map(|(ac, xc)| ac * xc).sum::<f64>() + b;
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        best
    }

    /// ℓ1-Lipschitz constant over any box: the largest |a_jc|.
    pub fn lipschitz_l1(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|(a, _)| a.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}

/// Four-piece max-affine form of a two-sided CVaR relaxation. The two sides
/// are `⟨coeffs, ξ⟩ + d` and `−⟨coeffs, ξ⟩ − u` with thresholds `omega1`,
/// `omega2`; the pieces are ordered (both sides active, first side, second
/// side, neither).
pub fn cvar_max_affine(
    beta: f64,
    omega1: f64,
    omega2: f64,
    coeffs: &[f64],
    d: f64,
    u: f64,
) -> Result<MaxAffineLoss, DroError> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(DroError::BadBeta(beta));
    }
    let inv = 1.0 / (1.0 - beta);
    let base = omega1 + omega2;
    let zero = vec![0.0; coeffs.len()];
    let pos: Vec<f64> = coeffs.iter().map(|c| c * inv).collect();
    let neg: Vec<f64> = coeffs.iter().map(|c| -c * inv).collect();
    MaxAffineLoss::new(vec![
        (zero.clone(), base + (d - omega1 - u - omega2) * inv),
        (pos, base + (d - omega1) * inv),
        (neg, base + (-u - omega2) * inv),
        (zero, base),
    ])
}

/// Empirical expectation of the loss: `(1/N) Σ loss(ξ̂_i)`.
pub fn saa_value(loss: &MaxAffineLoss, samples: &[Vec<f64>]) -> Result<f64, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    check_dims(loss, samples)?;
    Ok(samples.iter().map(|s| loss.value(s)).sum::<f64>() / samples.len() as f64)
}

/// Outcome of a worst-case-expectation computation.
#[derive(Clone, Debug)]
pub struct DroValue {
    pub objective: f64,
    /// Transport-price multiplier at the optimum.
    pub lambda: f64,
    /// Per-sample epigraph values (the inner suprema at the optimum).
    pub per_sample_s: Vec<f64>,
}

fn check_dims(loss: &MaxAffineLoss, samples: &[Vec<f64>]) -> Result<(), DroError> {
    for (i, s) in samples.iter().enumerate() {
        if s.len() != loss.dim() {
            return Err(DroError::DimMismatch(format!(
                "sample {i} has dim {}, loss has {}",
                s.len(),
                loss.dim()
            )));
        }
    }
    Ok(())
}

fn check_ball(loss: &MaxAffineLoss, ball: &WassersteinBall, samples: &[Vec<f64>]) -> Result<(), DroError> {
    if ball.dim() != loss.dim() {
        return Err(DroError::DimMismatch(format!(
            "support has dim {}, loss has {}",
            ball.dim(),
            loss.dim()
        )));
    }
    let tol = 1e-9;
    for (i, s) in samples.iter().enumerate() {
        for (c, (&v, &(lo, hi))) in s.iter().zip(&ball.support).enumerate() {
            if v < lo - tol || v > hi + tol {
                return Err(DroError::SampleOutsideSupport { index: i, dim: c });
            }
        }
    }
    Ok(())
}

/// The three candidate values of `sup_ξc (a ξc − λ|ξc − ξ̂c|)` over
/// `[lo, hi]`: stay at the sample, or jump to an endpoint paying λ per unit
/// of moved mass. Each candidate is affine in λ: value = p − λ q, q ≥ 0.
#[inline]
fn vertex_candidates(a: f64, xhat: f64, lo: f64, hi: f64) -> [(f64, f64); 3] {
    [
        (a * xhat, 0.0),
        (a * lo, xhat - lo),
        (a * hi, hi - xhat),
    ]
}

/// `φ_i(λ)`: the inner supremum for one sample at a given multiplier.
fn phi(loss: &MaxAffineLoss, support: &[(f64, f64)], xhat: &[f64], lambda: f64) -> f64 {
    loss.pieces()
        .iter()
        .map(|(a, b)| {
            let mut v = *b;
            for (c, &ac) in a.iter().enumerate() {
                let (lo, hi) = support[c];
                v += vertex_candidates(ac, xhat[c], lo, hi)
                    .iter()
                    .map(|&(p, q)| p - lambda * q)
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Affine form `value(λ) = intercept + slope·λ` of one piece's inner
/// supremum on an interval free of candidate swaps, read off at `lm`.
fn piece_affine(
    a: &[f64],
    b: f64,
    support: &[(f64, f64)],
    xhat: &[f64],
    lm: f64,
) -> (f64, f64) {
    let mut intercept = b;
    let mut slope = 0.0;
    for (c, &ac) in a.iter().enumerate() {
        let (lo, hi) = support[c];
        let cands = vertex_candidates(ac, xhat[c], lo, hi);
        let (p, q) = cands
            .iter()
            .cloned()
            .max_by(|(p1, q1), (p2, q2)| (p1 - lm * q1).total_cmp(&(p2 - lm * q2)))
            .unwrap();
        intercept += p;
        slope -= q;
    }
    (intercept, slope)
}

/// Exact worst-case expectation via the dual program: minimize
/// `λε + (1/N) Σ_i φ_i(λ)` over λ ≥ 0. The objective is convex piecewise
/// linear in λ. Its kinks come from two sources: a vertex candidate swap
/// inside one piece's supremum, or two pieces exchanging the maximum.
/// Scanning the candidate-swap points brackets the minimizer between two
/// of them (convexity); on that bracket every piece is affine in λ, so the
/// remaining kinks are pairwise piece crossings, checked exhaustively.
pub fn exact_dual(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
) -> Result<DroValue, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    check_dims(loss, samples)?;
    check_ball(loss, ball, samples)?;

    let mut breakpoints = vec![0.0f64];
    for s in samples {
        for (a, _) in loss.pieces() {
            for (c, &ac) in a.iter().enumerate() {
                let (lo, hi) = ball.support[c];
                let cands = vertex_candidates(ac, s[c], lo, hi);
                for x in 0..3 {
                    for y in x + 1..3 {
                        let (p1, q1) = cands[x];
                        let (p2, q2) = cands[y];
                        if q1 != q2 {
                            let l = (p1 - p2) / (q1 - q2);
                            if l.is_finite() && l > 0.0 {
                                breakpoints.push(l);
                            }
                        }
                    }
                }
            }
        }
    }
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let n = samples.len() as f64;
    let g = |l: f64| -> f64 {
        l * ball.epsilon
            + samples.iter().map(|s| phi(loss, &ball.support, s, l)).sum::<f64>() / n
    };
    let mut best_idx = 0;
    let mut best_lambda = breakpoints[0];
    let mut best_obj = g(breakpoints[0]);
    for (idx, &l) in breakpoints.iter().enumerate().skip(1) {
        let obj = g(l);
        if obj < best_obj {
            best_obj = obj;
            best_lambda = l;
            best_idx = idx;
        }
    }

    // Refine the two intervals flanking the best scanned point.
    let mut intervals = Vec::new();
    if best_idx > 0 {
        intervals.push((breakpoints[best_idx - 1], breakpoints[best_idx]));
    }
    if best_idx + 1 < breakpoints.len() {
        intervals.push((breakpoints[best_idx], breakpoints[best_idx + 1]));
    }
    for (ll, lr) in intervals {
        if !(lr > ll) {
            continue;
        }
        let lm = 0.5 * (ll + lr);
        // Affine table and candidate crossings, per sample.
        let mut candidates: Vec<f64> = Vec::new();
        let tables: Vec<Vec<(f64, f64)>> = samples
            .iter()
            .map(|s| {
                loss.pieces()
                    .iter()
                    .map(|(a, b)| piece_affine(a, *b, &ball.support, s, lm))
                    .collect()
            })
            .collect();
        for tab in &tables {
            for x in 0..tab.len() {
                for y in x + 1..tab.len() {
                    let (i1, s1) = tab[x];
                    let (i2, s2) = tab[y];
                    if s1 != s2 {
                        let l = (i2 - i1) / (s1 - s2);
                        if l.is_finite() && l > ll && l < lr {
                            candidates.push(l);
                        }
                    }
                }
            }
        }
        for &l in &candidates {
            let obj = l * ball.epsilon
                + tables
                    .iter()
                    .map(|tab| {
                        tab.iter()
                            .map(|&(i, s)| i + s * l)
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum::<f64>()
                    / n;
            if obj < best_obj {
                best_obj = obj;
                best_lambda = l;
            }
        }
    }

    // Recompute at the winner so the reported pieces are self-consistent.
    let per_sample_s: Vec<f64> = samples
        .iter()
        .map(|s| phi(loss, &ball.support, s, best_lambda))
        .collect();
    let objective = best_lambda * ball.epsilon + per_sample_s.iter().sum::<f64>() / n;
    Ok(DroValue { objective, lambda: best_lambda, per_sample_s })
}

/// The exact dual as an explicit linear program, for cross-checks and
/// debug dumps. Scalar losses get the three-vertex rows directly; higher
/// dimensions add one auxiliary epigraph variable per (sample, piece,
/// coordinate) because the supremum separates per coordinate.
pub fn exact_dual_lp(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
) -> Result<LinearProgram, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    check_dims(loss, samples)?;
    check_ball(loss, ball, samples)?;
    let n = samples.len();
    let mut lp = LinearProgram::new("wdro_exact_dual");
    let lambda = lp.add_var("lambda", 0.0, f64::INFINITY, ball.epsilon);
    let s_vars: Vec<VarId> = (0..n)
        .map(|i| lp.add_var(&format!("s_{i}"), f64::NEG_INFINITY, f64::INFINITY, 1.0 / n as f64))
        .collect();
    for (i, xhat) in samples.iter().enumerate() {
        for (j, (a, b)) in loss.pieces().iter().enumerate() {
            if loss.dim() == 1 {
                let (lo, hi) = ball.support[0];
                for (k, &(p, q)) in vertex_candidates(a[0], xhat[0], lo, hi).iter().enumerate() {
                    // b + p − λq ≤ s_i
                    let e = LinExpr::new().term(lambda, -q).term(s_vars[i], -1.0);
                    lp.add_row(&format!("v_{i}_{j}_{k}"), &e, Rel::Le, -(b + p));
                }
            } else {
                let mut sum = LinExpr::new().term(s_vars[i], -1.0);
                for (c, &ac) in a.iter().enumerate() {
                    let w = lp.add_var(
                        &format!("w_{i}_{j}_{c}"),
                        f64::NEG_INFINITY,
                        f64::INFINITY,
                        0.0,
                    );
                    let (lo, hi) = ball.support[c];
                    for (k, &(p, q)) in vertex_candidates(ac, xhat[c], lo, hi).iter().enumerate() {
                        // p − λq ≤ w
                        let e = LinExpr::new().term(lambda, -q).term(w, -1.0);
                        lp.add_row(&format!("v_{i}_{j}_{c}_{k}"), &e, Rel::Le, -p);
                    }
                    sum.add_term(w, 1.0);
                }
                // b + Σ_c w ≤ s_i
                lp.add_row(&format!("s_{i}_{j}"), &sum, Rel::Le, -b);
            }
        }
    }
    Ok(lp)
}

/// Upper approximation: pin the multiplier at the loss's ℓ1-Lipschitz
/// constant, which collapses every inner supremum to the sample itself.
/// The value is `λ0 ε + SAA`; no per-sample machinery remains, so the
/// constraint count of any embedding is independent of the sample count.
pub fn accelerated(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
) -> Result<DroValue, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    check_dims(loss, samples)?;
    check_ball(loss, ball, samples)?;
    let lambda0 = loss.lipschitz_l1();
    let saa = saa_value(loss, samples)?;
    Ok(DroValue {
        objective: lambda0 * ball.epsilon + saa,
        lambda: lambda0,
        per_sample_s: samples.iter().map(|s| loss.value(s)).collect(),
    })
}

/// The accelerated bound as an explicit program: minimize λε plus the fixed
/// empirical mean subject to λ ≥ ±a_jc for every piece coefficient. Exists
/// for dump and cross-check purposes; the closed form is [`accelerated`].
pub fn accelerated_lp(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
) -> Result<LinearProgram, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    check_dims(loss, samples)?;
    check_ball(loss, ball, samples)?;
    let mut lp = LinearProgram::new("wdro_accelerated");
    let lambda = lp.add_var("lambda", 0.0, f64::INFINITY, ball.epsilon);
    lp.add_obj_offset(saa_value(loss, samples)?);
    for (j, (a, _)) in loss.pieces().iter().enumerate() {
        for (c, &ac) in a.iter().enumerate() {
            lp.add_row(
                &format!("lip_pos_{j}_{c}"),
                &LinExpr::var(lambda),
                Rel::Ge,
                ac,
            );
            lp.add_row(
                &format!("lip_neg_{j}_{c}"),
                &LinExpr::var(lambda),
                Rel::Ge,
                -ac,
            );
        }
    }
    Ok(lp)
}

/// Reference oracle: discretize the support, then maximize the expected
/// loss over couplings between the empirical distribution and the grid
/// subject to the transport budget. Exact up to grid resolution; intended
/// for 1- and 2-dimensional checks only.
pub fn brute_force_worst_case(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
    grid_points: usize,
) -> Result<f64, DroError> {
    if samples.is_empty() {
        return Err(DroError::NoSamples);
    }
    if loss.dim() > 2 {
        return Err(DroError::DimMismatch(format!(
            "oracle supports dim 1 or 2, got {}",
            loss.dim()
        )));
    }
    if grid_points < 2 {
        return Err(DroError::BadLoss("need at least 2 grid points".into()));
    }
    check_dims(loss, samples)?;
    check_ball(loss, ball, samples)?;

    // Axis grids: linspace plus the exact sample coordinates, so the ε=0
    // case can place mass precisely on the empirical atoms.
    let axes: Vec<Vec<f64>> = (0..loss.dim())
        .map(|c| {
            let (lo, hi) = ball.support[c];
            let mut ax: Vec<f64> = (0..grid_points)
                .map(|g| lo + (hi - lo) * g as f64 / (grid_points - 1) as f64)
                .collect();
            ax.extend(samples.iter().map(|s| s[c]));
            ax.sort_by(f64::total_cmp);
            ax.dedup();
            ax
        })
        .collect();
    let mut grid: Vec<Vec<f64>> = Vec::new();
    if loss.dim() == 1 {
        grid.extend(axes[0].iter().map(|&v| vec![v]));
    } else {
        for &x in &axes[0] {
            for &y in &axes[1] {
                grid.push(vec![x, y]);
            }
        }
    }

    let n = samples.len();
    let mut lp = LinearProgram::new("transport_oracle");
    // π_iq: mass moved from atom i to grid point q; maximize Σ π l(ξ_q).
    let mut row_exprs: Vec<LinExpr> = (0..n).map(|_| LinExpr::new()).collect();
    let mut cost_expr = LinExpr::new();
    for (q, point) in grid.iter().enumerate() {
        let l_q = loss.value(point);
        for (i, xhat) in samples.iter().enumerate() {
            let dist: f64 = point.iter().zip(xhat).map(|(a, b)| (a - b).abs()).sum();
            let v = lp.add_var(&format!("p_{i}_{q}"), 0.0, f64::INFINITY, -l_q);
            row_exprs[i].add_term(v, 1.0);
            if dist != 0.0 {
                cost_expr.add_term(v, dist);
            }
        }
    }
    for (i, e) in row_exprs.iter().enumerate() {
        lp.add_row(&format!("mass_{i}"), e, Rel::Eq, 1.0 / n as f64);
    }
    lp.add_row("budget", &cost_expr, Rel::Le, ball.epsilon);
    let sol = lp.solve()?;
    if !sol.is_optimal() {
        return Err(DroError::BadLoss(format!("oracle LP ended {:?}", sol.status)));
    }
    Ok(-sol.objective)
}

/// Oracle with a built-in resolution check: recompute at half resolution
/// and flag the grid as too coarse when the two disagree beyond `tol`.
pub fn brute_force_with_refinement(
    loss: &MaxAffineLoss,
    ball: &WassersteinBall,
    samples: &[Vec<f64>],
    grid_points: usize,
    tol: f64,
) -> Result<f64, DroError> {
    let fine = brute_force_worst_case(loss, ball, samples, grid_points)?;
    let coarse = brute_force_worst_case(loss, ball, samples, grid_points / 2)?;
    if (fine - coarse).abs() > tol {
        return Err(DroError::GridTooCoarse { coarse, fine });
    }
    Ok(fine)
}

/// Empirical conditional value-at-risk at level `beta`: the mean of the
/// `(1−beta)` tail, with fractional-atom interpolation. This is the exact
/// minimizer value of `ω + E[x−ω]_+/(1−β)` over ω for the discrete uniform
/// distribution on `xs`.
pub fn cvar_empirical(xs: &[f64], beta: f64) -> Result<f64, DroError> {
    if xs.is_empty() {
        return Err(DroError::NoSamples);
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(DroError::BadBeta(beta));
    }
    let n = xs.len();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Optimal threshold: smallest order statistic with at most N(1−β)
    // samples strictly above it.
    let t_star = ((n as f64) * beta).ceil() as usize;
    let t_star = t_star.clamp(1, n);
    let omega = sorted[t_star - 1];
    let tail: f64 = sorted[t_star..].iter().map(|x| x - omega).sum();
    Ok(omega + tail / (n as f64 * (1.0 - beta)))
}

/// Empirical value-at-risk at level `beta`: the order statistic that attains
/// the minimum in the threshold form of [`cvar_empirical`].
pub fn var_empirical(xs: &[f64], beta: f64) -> Result<f64, DroError> {
    if xs.is_empty() {
        return Err(DroError::NoSamples);
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(DroError::BadBeta(beta));
    }
    let n = xs.len();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_star = (((n as f64) * beta).ceil() as usize).clamp(1, n);
    Ok(sorted[t_star - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_loss() -> MaxAffineLoss {
        MaxAffineLoss::new(vec![(vec![1.0], 0.0), (vec![-1.0], 0.0)]).unwrap()
    }

    fn ball1(eps: f64, lo: f64, hi: f64) -> WassersteinBall {
        WassersteinBall::new(eps, vec![(lo, hi)]).unwrap()
    }

    struct XorShift(u64);
    impl XorShift {
        fn next(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    /// Random instance with samples kept inside the support box.
    fn random_instance(
        rng: &mut XorShift,
        dim: usize,
        pieces: usize,
        n: usize,
    ) -> (MaxAffineLoss, WassersteinBall, Vec<Vec<f64>>) {
        let loss = MaxAffineLoss::new(
            (0..pieces)
                .map(|_| {
                    (
                        (0..dim).map(|_| rng.next() * 4.0 - 2.0).collect(),
                        rng.next() * 2.0 - 1.0,
                    )
                })
                .collect(),
        )
        .unwrap();
        let support: Vec<(f64, f64)> = (0..dim)
            .map(|_| {
                let lo = -1.0 - rng.next() * 3.0;
                let hi = 1.0 + rng.next() * 3.0;
                (lo, hi)
            })
            .collect();
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                support
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.next())
                    .collect()
            })
            .collect();
        (loss, WassersteinBall::new(0.05, support).unwrap(), samples)
    }

    #[test]
    fn cvar_pieces_match_direct_substitution() {
        let loss = cvar_max_affine(0.9, 0.0, 0.0, &[0.5], 0.0, 0.0).unwrap();
        assert_eq!(loss.pieces().len(), 4);
        // Piece 2 carries the first side's slope scaled by 1/(1−β).
        assert!((loss.pieces()[1].0[0] - 5.0).abs() < 1e-12);
        assert!((loss.pieces()[2].0[0] + 5.0).abs() < 1e-12);
        for (_, b) in loss.pieces() {
            assert_eq!(*b, 0.0);
        }
        // With all offsets zero the loss is 5|ξ|.
        for &xi in &[-2.0, -0.3, 0.0, 0.7, 2.0] {
            assert!((loss.value(&[xi]) - 5.0 * xi.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_value_matches_two_sided_hinge_formula() {
        let mut rng = XorShift(0xabcd_ef01);
        let beta = 0.9;
        for _ in 0..20 {
            let coeffs = [rng.next() * 2.0 - 1.0, rng.next() * 2.0 - 1.0];
            let (w1, w2) = (rng.next() - 0.5, rng.next() - 0.5);
            let (d, u) = (rng.next() - 0.5, rng.next() - 0.5);
            let loss = cvar_max_affine(beta, w1, w2, &coeffs, d, u).unwrap();
            for _ in 0..50 {
                let xi = [rng.next() * 4.0 - 2.0, rng.next() * 4.0 - 2.0];
                let f = coeffs[0] * xi[0] + coeffs[1] * xi[1];
                let want = w1
                    + w2
                    + ((f + d - w1).max(0.0) + (-f - u - w2).max(0.0)) / (1.0 - beta);
                let got = loss.value(&xi);
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn cvar_rejects_bad_confidence_level() {
        assert!(cvar_max_affine(0.0, 0.0, 0.0, &[1.0], 0.0, 0.0).is_err());
        assert!(cvar_max_affine(1.0, 0.0, 0.0, &[1.0], 0.0, 0.0).is_err());
        assert!(cvar_max_affine(1.3, 0.0, 0.0, &[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn empirical_var_attains_empirical_cvar() {
        // CVaR(x) must equal VaR + mean tail excess over VaR, for the same
        // threshold index.
        let mut rng = XorShift(77);
        for n in [1usize, 2, 7, 40] {
            for beta in [0.5, 0.9, 0.95] {
                let xs: Vec<f64> = (0..n).map(|_| rng.next() * 8.0 - 4.0).collect();
                let omega = var_empirical(&xs, beta).unwrap();
                let tail: f64 = xs
                    .iter()
                    .map(|x| (x - omega).max(0.0))
                    .sum::<f64>()
                    / (n as f64 * (1.0 - beta));
                let want = cvar_empirical(&xs, beta).unwrap();
                assert!(
                    (omega + tail - want).abs() < 1e-12,
                    "n={n} beta={beta}: {} vs {want}",
                    omega + tail
                );
            }
        }
    }

    #[test]
    fn loss_value_dominates_every_piece() {
        let mut rng = XorShift(42);
        let (loss, _, samples) = random_instance(&mut rng, 3, 5, 10);
        for s in &samples {
            let v = loss.value(s);
            for (a, b) in loss.pieces() {
                let piece: f64 = a.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() + b;
                assert!(v >= piece - 1e-15);
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        let loss = MaxAffineLoss::new(vec![
            (vec![0.0], 1.0),
            (vec![0.0], 1.0),
            (vec![1.0], 0.0),
        ])
        .unwrap();
        assert_eq!(loss.argmax_piece(&[0.5]), 0);
        assert_eq!(loss.argmax_piece(&[2.0]), 2);
    }

    #[test]
    fn saa_averages_losses() {
        let v = saa_value(&abs_loss(), &[vec![-1.0], vec![3.0]]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        let constant = MaxAffineLoss::new(vec![(vec![0.0], 7.5)]).unwrap();
        let v2 = saa_value(&constant, &[vec![-1.0], vec![9.0], vec![0.0]]).unwrap();
        assert!((v2 - 7.5).abs() < 1e-15);
        assert!(saa_value(&abs_loss(), &[]).is_err());
    }

    #[test]
    fn zero_radius_collapses_exact_to_saa() {
        let mut rng = XorShift(7);
        for trial in 0..30 {
            let dim = 1 + (rng.next() * 3.0) as usize;
            let (loss, mut ball, samples) = random_instance(&mut rng, dim, 4, 12);
            ball.epsilon = 0.0;
            let exact = exact_dual(&loss, &ball, &samples).unwrap();
            let saa = saa_value(&loss, &samples).unwrap();
            assert!(
                (exact.objective - saa).abs() < 1e-10,
                "trial {trial}: {} vs {saa}",
                exact.objective
            );
            let accel = accelerated(&loss, &ball, &samples).unwrap();
            assert!((accel.objective - saa).abs() < 1e-10);
        }
    }

    #[test]
    fn abs_loss_small_ball_example_is_frozen() {
        let samples = vec![vec![-1.0], vec![3.0]];
        let ball = ball1(0.1, -5.0, 5.0);
        let exact = exact_dual(&abs_loss(), &ball, &samples).unwrap();
        assert!((exact.objective - 2.1).abs() < 1e-12, "{}", exact.objective);
        assert!((exact.lambda - 1.0).abs() < 1e-12);
        let accel = accelerated(&abs_loss(), &ball, &samples).unwrap();
        assert!((accel.lambda - 1.0).abs() < 1e-15);
        assert!((accel.objective - 2.1).abs() < 1e-12);
    }

    #[test]
    fn single_sample_at_upper_endpoint_stays_there() {
        let samples = vec![vec![5.0]];
        let ball = ball1(0.3, -5.0, 5.0);
        let exact = exact_dual(&abs_loss(), &ball, &samples).unwrap();
        assert!((exact.objective - 5.0).abs() < 1e-12, "{}", exact.objective);
    }

    #[test]
    fn per_sample_values_are_tight_inner_suprema() {
        let mut rng = XorShift(99);
        let (loss, ball, samples) = random_instance(&mut rng, 2, 4, 8);
        let exact = exact_dual(&loss, &ball, &samples).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let direct = phi(&loss, &ball.support, s, exact.lambda);
            assert!((exact.per_sample_s[i] - direct).abs() < 1e-12);
            // The supremum dominates the plain loss at the sample.
            assert!(exact.per_sample_s[i] >= loss.value(s) - 1e-12);
        }
        assert!(exact.lambda >= 0.0);
    }

    #[test]
    fn parametric_solution_matches_explicit_lp() {
        let mut rng = XorShift(0x5eed);
        for trial in 0..15 {
            let dim = 1 + (rng.next() * 3.0) as usize;
            let pieces = 2 + (rng.next() * 3.0) as usize;
            let n = 2 + (rng.next() * 10.0) as usize;
            let (loss, mut ball, samples) = random_instance(&mut rng, dim, pieces, n);
            ball.epsilon = rng.next() * 0.2;
            let fast = exact_dual(&loss, &ball, &samples).unwrap();
            let sol = exact_dual_lp(&loss, &ball, &samples).unwrap().solve().unwrap();
            assert!(sol.is_optimal(), "trial {trial}");
            assert!(
                (sol.objective - fast.objective).abs() < 1e-7 * (1.0 + fast.objective.abs()),
                "trial {trial}: lp {} vs parametric {}",
                sol.objective,
                fast.objective
            );
        }
    }

    #[test]
    fn accelerated_closed_form_matches_its_lp() {
        let mut rng = XorShift(0xacce1);
        for _ in 0..10 {
            let (loss, mut ball, samples) = random_instance(&mut rng, 2, 4, 6);
            ball.epsilon = rng.next() * 0.3;
            let fast = accelerated(&loss, &ball, &samples).unwrap();
            let sol = accelerated_lp(&loss, &ball, &samples).unwrap().solve().unwrap();
            assert!(sol.is_optimal());
            assert!((sol.objective - fast.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn accelerated_dominates_exact_dual() {
        let mut rng = XorShift(0xdead);
        for trial in 0..40 {
            let dim = 1 + (rng.next() * 3.0) as usize;
            let pieces = 2 + (rng.next() * 4.0) as usize;
            let n = 2 + (rng.next() * 20.0) as usize;
            let (loss, mut ball, samples) = random_instance(&mut rng, dim, pieces, n);
            ball.epsilon = rng.next() * 0.3;
            let exact = exact_dual(&loss, &ball, &samples).unwrap();
            let accel = accelerated(&loss, &ball, &samples).unwrap();
            assert!(
                accel.objective >= exact.objective - 1e-8,
                "trial {trial}: accel {} < exact {}",
                accel.objective,
                exact.objective
            );
        }
    }

    #[test]
    fn both_bounds_grow_with_the_radius() {
        let mut rng = XorShift(0x0e95);
        let (loss, _, samples) = random_instance(&mut rng, 2, 4, 10);
        let support = vec![(-4.0, 4.0), (-4.0, 4.0)];
        let mut last_exact = f64::NEG_INFINITY;
        let mut last_accel = f64::NEG_INFINITY;
        for &eps in &[0.0, 0.001, 0.01, 0.1, 0.5] {
            let ball = WassersteinBall::new(eps, support.clone()).unwrap();
            let e = exact_dual(&loss, &ball, &samples).unwrap().objective;
            let a = accelerated(&loss, &ball, &samples).unwrap().objective;
            assert!(e >= last_exact - 1e-12, "exact dropped at eps={eps}");
            assert!(a >= last_accel - 1e-12, "accel dropped at eps={eps}");
            last_exact = e;
            last_accel = a;
        }
    }

    #[test]
    fn oracle_with_zero_radius_returns_empirical_mean() {
        let samples = vec![vec![-1.0], vec![3.0]];
        let ball = ball1(0.0, -5.0, 5.0);
        let v = brute_force_worst_case(&abs_loss(), &ball, &samples, 101).unwrap();
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn oracle_with_saturated_ball_puts_all_mass_at_argmax() {
        let samples = vec![vec![-1.0], vec![3.0]];
        // Diameter is 10; ε beyond it frees all mass.
        let ball = ball1(25.0, -5.0, 5.0);
        let v = brute_force_worst_case(&abs_loss(), &ball, &samples, 101).unwrap();
        assert!((v - 5.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn oracle_matches_frozen_abs_example_at_fine_grid() {
        let samples = vec![vec![-1.0], vec![3.0]];
        let ball = ball1(0.1, -5.0, 5.0);
        let v = brute_force_with_refinement(&abs_loss(), &ball, &samples, 10001, 1e-4).unwrap();
        assert!((v - 2.1).abs() < 1e-4, "{v}");
    }

    #[test]
    fn oracle_never_exceeds_exact_dual() {
        let mut rng = XorShift(0xbead);
        for trial in 0..8 {
            let (loss, mut ball, samples) = random_instance(&mut rng, 1, 3, 5);
            ball.epsilon = rng.next() * 0.2;
            let exact = exact_dual(&loss, &ball, &samples).unwrap();
            let brute = brute_force_worst_case(&loss, &ball, &samples, 2001).unwrap();
            assert!(
                brute <= exact.objective + 1e-6,
                "trial {trial}: brute {brute} vs exact {}",
                exact.objective
            );
            // Strong duality: the gap closes under refinement.
            assert!(
                exact.objective - brute < 1e-3,
                "trial {trial}: gap {}",
                exact.objective - brute
            );
        }
    }

    #[test]
    fn empirical_cvar_matches_hand_cases() {
        // Worst half of two points is the larger one.
        assert!((cvar_empirical(&[1.0, 5.0], 0.5).unwrap() - 5.0).abs() < 1e-15);
        // Worst half of four points is the mean of the top two.
        let v = cvar_empirical(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert!((v - 3.5).abs() < 1e-15);
        // Fractional tail: N(1−β) = 1.5 atoms.
        let v2 = cvar_empirical(&[0.0, 1.0, 2.0], 0.5).unwrap();
        assert!((v2 - (1.0 + (2.0 - 1.0) / 1.5)).abs() < 1e-12, "{v2}");
        // β near 1 picks the maximum.
        assert!((cvar_empirical(&[3.0, 9.0, 6.0], 0.99).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_cvar_dominates_mean_and_respects_max() {
        let mut rng = XorShift(31337);
        for _ in 0..30 {
            let n = 2 + (rng.next() * 40.0) as usize;
            let xs: Vec<f64> = (0..n).map(|_| rng.next() * 10.0 - 5.0).collect();
            let beta = 0.5 + rng.next() * 0.45;
            let cvar = cvar_empirical(&xs, beta).unwrap();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(cvar >= mean - 1e-12);
            assert!(cvar <= max + 1e-12);
        }
    }

    #[test]
    fn samples_outside_the_support_are_rejected() {
        let samples = vec![vec![9.0]];
        let ball = ball1(0.1, -5.0, 5.0);
        assert!(matches!(
            exact_dual(&abs_loss(), &ball, &samples),
            Err(DroError::SampleOutsideSupport { .. })
        ));
    }

    #[test]
    fn dual_lp_dump_is_well_formed() {
        let samples = vec![vec![-1.0], vec![3.0]];
        let ball = ball1(0.1, -5.0, 5.0);
        let lp = exact_dual_lp(&abs_loss(), &ball, &samples).unwrap();
        let text = lp.to_lp_text();
        assert!(text.contains("lambda"));
        assert!(text.contains("Minimize"));
    }
}
