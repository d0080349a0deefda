//! Bounded-variable revised primal simplex.
//!
//! The solver works on the computational form `A x + s = b` with one logical
//! variable per row; row senses become bounds on the logicals. Phase 1 runs a
//! composite scheme that minimizes the total bound violation of the basic
//! variables with a long-step ratio test (it may drive several violations to
//! zero in one pivot). Phase 2 prices with Dantzig's rule, switching to
//! Bland's rule after a run of degenerate pivots so cycling is impossible.
//!
//! Every choice (pricing, tie-breaking, ratio-test clusters) is deterministic,
//! so repeated solves of the same problem produce bit-identical results.

use super::factor::{EtaFile, FactorError, LuFactors, Workspace};
use super::{LpError, LpStatus};

pub(super) const INF: f64 = f64::INFINITY;

/// Problem in computational form. Variables `0..n` are structural, `n..n+m`
/// logical; `cols` holds the structural columns sorted by row.
pub(super) struct CoreLp {
    pub m: usize,
    pub n: usize,
    pub cols: Vec<Vec<(u32, f64)>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub obj: Vec<f64>,
    pub b: Vec<f64>,
    pub iter_limit: usize,
}

pub(super) struct RawSolution {
    pub status: LpStatus,
    /// Values of all n + m variables.
    pub x: Vec<f64>,
    /// Row duals in original row order (derivative of the objective in b).
    pub y: Vec<f64>,
    /// Reduced costs of all n + m variables under the true objective.
    pub dj: Vec<f64>,
    pub iterations: usize,
    pub factorizations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VStat {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable pinned at zero.
    Free,
    /// lo == hi; never priced.
    Fixed,
}

enum Step {
    Flip { delta: f64 },
    Pivot { delta: f64, pos: usize, to_upper: bool },
    Unbounded,
    /// The direct directional derivative disagrees with pricing (roundoff);
    /// the column is banned until the next successful step.
    NoProgress,
}

const REFRESH_ETAS: usize = 64;
const DEGEN_BLAND_TRIGGER: usize = 40;
const RESIDUAL_CHECK_EVERY: usize = 25;

pub(super) fn solve_core(lp: &CoreLp) -> Result<RawSolution, LpError> {
    Solver::new(lp)?.run()
}

struct Solver<'a> {
    lp: &'a CoreLp,
    nt: usize,
    stat: Vec<VStat>,
    basis: Vec<u32>,
    xb: Vec<f64>,
    lu: LuFactors,
    etas: EtaFile,
    ws: Workspace,
    dwork: Vec<f64>,
    ywork: Vec<f64>,
    cwork: Vec<f64>,
    banned: Vec<bool>,
    iterations: usize,
    factorizations: usize,
    degen_run: usize,
    resets: usize,
    row_tol: f64,
    dual_tol: f64,
}

impl<'a> Solver<'a> {
    fn new(lp: &'a CoreLp) -> Result<Self, LpError> {
        let m = lp.m;
        let nt = lp.n + m;
        let mut stat = Vec::with_capacity(nt);
        for j in 0..nt {
            let (l, h) = (lp.lo[j], lp.hi[j]);
            stat.push(if j >= lp.n {
                VStat::Basic
            } else if l == h {
                VStat::Fixed
            } else if l > -INF {
                VStat::AtLower
            } else if h < INF {
                VStat::AtUpper
            } else {
                VStat::Free
            });
        }
        let basis: Vec<u32> = (lp.n..nt).map(|j| j as u32).collect();
        let bmax = lp.b.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let cmax = lp.obj.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let mut ws = Workspace::new(m);
        let lu = factor_basis(lp, &basis, &mut ws)
            .map_err(|_| LpError::Numerical("identity basis failed to factor".into()))?;
        let mut s = Solver {
            lp,
            nt,
            stat,
            basis,
            xb: vec![0.0; m],
            lu,
            etas: EtaFile::new(),
            ws,
            dwork: vec![0.0; m],
            ywork: vec![0.0; m],
            cwork: vec![0.0; m],
            banned: vec![false; nt],
            iterations: 0,
            factorizations: 1,
            degen_run: 0,
            resets: 0,
            row_tol: 1e-8 * (1.0 + bmax),
            dual_tol: 1e-9 * (1.0 + cmax),
        };
        s.recompute_xb();
        Ok(s)
    }

    fn nb_val(&self, j: usize) -> f64 {
        match self.stat[j] {
            VStat::AtLower | VStat::Fixed => self.lp.lo[j],
            VStat::AtUpper => self.lp.hi[j],
            VStat::Free => 0.0,
            VStat::Basic => unreachable!("basic variable has no bound value"),
        }
    }

    fn dot_col_y(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.lp.n {
            self.lp.cols[j].iter().map(|&(r, v)| v * y[r as usize]).sum()
        } else {
            y[j - self.lp.n]
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        match factor_basis(self.lp, &self.basis, &mut self.ws) {
            Ok(lu) => {
                self.lu = lu;
                self.etas.clear();
                self.factorizations += 1;
                self.recompute_xb();
                Ok(())
            }
            Err(FactorError::Singular { .. }) => self.reset_to_slack_basis(),
        }
    }

    /// Last-resort repair: restart from the all-logical basis. The identity
    /// always factors, so this cannot recurse.
    fn reset_to_slack_basis(&mut self) -> Result<(), LpError> {
        self.resets += 1;
        if self.resets > 3 {
            return Err(LpError::Numerical(
                "basis repeatedly became singular".into(),
            ));
        }
        let (n, m) = (self.lp.n, self.lp.m);
        for j in 0..n {
            let (l, h) = (self.lp.lo[j], self.lp.hi[j]);
            self.stat[j] = if l == h {
                VStat::Fixed
            } else if l > -INF {
                VStat::AtLower
            } else if h < INF {
                VStat::AtUpper
            } else {
                VStat::Free
            };
        }
        for j in n..self.nt {
            self.stat[j] = VStat::Basic;
        }
        for i in 0..m {
            self.basis[i] = (n + i) as u32;
        }
        self.lu = factor_basis(self.lp, &self.basis, &mut self.ws)
            .map_err(|_| LpError::Numerical("identity basis failed to factor".into()))?;
        self.etas.clear();
        self.factorizations += 1;
        self.recompute_xb();
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let m = self.lp.m;
        let mut r = self.lp.b.clone();
        for j in 0..self.nt {
            if self.stat[j] == VStat::Basic {
                continue;
            }
            let v = self.nb_val(j);
            if v == 0.0 {
                continue;
            }
            if j < self.lp.n {
                for &(row, a) in &self.lp.cols[j] {
                    r[row as usize] -= a * v;
                }
            } else {
                r[j - self.lp.n] -= v;
            }
        }
        let rhs: Vec<(u32, f64)> = r
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        let mut out = vec![0.0; m];
        self.lu.ftran(&rhs, &mut self.ws, &mut out);
        self.etas.ftran(&mut out);
        self.xb = out;
    }

    /// FTRAN the column of variable j into self.dwork.
    fn ftran_col(&mut self, j: usize) {
        let tmp;
        let col: &[(u32, f64)] = if j < self.lp.n {
            &self.lp.cols[j]
        } else {
            tmp = [((j - self.lp.n) as u32, 1.0)];
            &tmp
        };
        self.lu.ftran(col, &mut self.ws, &mut self.dwork);
        self.etas.ftran(&mut self.dwork);
    }

    /// BTRAN the basic cost vector (indexed by basis position) into self.ywork.
    fn btran_costs(&mut self, cb: &[f64]) {
        self.cwork.copy_from_slice(cb);
        self.etas.btran(&mut self.cwork);
        self.lu.btran(&self.cwork, &mut self.ywork);
    }

    /// Per-basic violation signs and the largest violation amount.
    fn violations(&self, v: &mut [i8]) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.lp.m {
            let bi = self.basis[i] as usize;
            let val = self.xb[i];
            let over = val - self.lp.hi[bi];
            let under = self.lp.lo[bi] - val;
            v[i] = if over > self.row_tol {
                worst = worst.max(over);
                1
            } else if under > self.row_tol {
                worst = worst.max(under);
                -1
            } else {
                worst = worst.max(over.max(under).max(0.0));
                0
            };
        }
        worst
    }

    /// `‖B d − a_j‖∞` for the freshly ftran'd column of j in dwork.
    fn ftran_residual(&self, j: usize) -> f64 {
        let m = self.lp.m;
        let mut acc = vec![0.0; m];
        for i in 0..m {
            let v = self.dwork[i];
            if v == 0.0 {
                continue;
            }
            let bj = self.basis[i] as usize;
            if bj < self.lp.n {
                for &(row, a) in &self.lp.cols[bj] {
                    acc[row as usize] += a * v;
                }
            } else {
                acc[bj - self.lp.n] += v;
            }
        }
        if j < self.lp.n {
            for &(row, a) in &self.lp.cols[j] {
                acc[row as usize] -= a;
            }
        } else {
            acc[j - self.lp.n] -= 1.0;
        }
        acc.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    fn price(&self, phase1: bool, bland: bool) -> Option<(usize, i8, f64)> {
        let mut best: Option<(f64, usize, i8, f64)> = None;
        for j in 0..self.nt {
            if self.banned[j] {
                continue;
            }
            let cost = if phase1 { 0.0 } else { self.lp.obj[j] };
            let (sigma, dj) = match self.stat[j] {
                VStat::Basic | VStat::Fixed => continue,
                VStat::AtLower => {
                    let dj = cost - self.dot_col_y(j, &self.ywork);
                    if dj < -self.dual_tol {
                        (1i8, dj)
                    } else {
                        continue;
                    }
                }
                VStat::AtUpper => {
                    let dj = cost - self.dot_col_y(j, &self.ywork);
                    if dj > self.dual_tol {
                        (-1i8, dj)
                    } else {
                        continue;
                    }
                }
                VStat::Free => {
                    let dj = cost - self.dot_col_y(j, &self.ywork);
                    if dj < -self.dual_tol {
                        (1i8, dj)
                    } else if dj > self.dual_tol {
                        (-1i8, dj)
                    } else {
                        continue;
                    }
                }
            };
            if bland {
                return Some((j, sigma, dj));
            }
            let score = dj.abs();
            match best {
                Some((s, _, _, _)) if s >= score => {}
                _ => best = Some((score, j, sigma, dj)),
            }
        }
        best.map(|(_, j, sigma, dj)| (j, sigma, dj))
    }

    fn pivot_tol(&self) -> f64 {
        let dmax = self.dwork.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        1e-11 * (1.0 + dmax)
    }

    fn phase2_ratio(&self, j: usize, sigma: i8, bland: bool) -> Step {
        let m = self.lp.m;
        let span = self.lp.hi[j] - self.lp.lo[j];
        let ptol = self.pivot_tol();
        let s = sigma as f64;
        let mut dmin = span;
        for i in 0..m {
            let rate = -s * self.dwork[i];
            let bi = self.basis[i] as usize;
            let dist = if rate > ptol && self.lp.hi[bi] < INF {
                (self.lp.hi[bi] - self.xb[i]).max(0.0) / rate
            } else if rate < -ptol && self.lp.lo[bi] > -INF {
                (self.xb[i] - self.lp.lo[bi]).max(0.0) / (-rate)
            } else {
                continue;
            };
            if dist < dmin {
                dmin = dist;
            }
        }
        if dmin == INF {
            return Step::Unbounded;
        }
        if dmin >= span {
            return Step::Flip { delta: span };
        }
        // Among blockers within a relative band of the minimum, prefer the
        // largest pivot magnitude for stability; under Bland's rule prefer
        // the smallest basic variable index for the anti-cycling guarantee.
        let band = dmin + 1e-9 * (1.0 + dmin);
        let mut chosen: Option<(usize, f64, bool)> = None;
        let mut best_key = if bland { u32::MAX } else { 0 };
        for i in 0..m {
            let rate = -s * self.dwork[i];
            let bi = self.basis[i] as usize;
            let (dist, to_upper) = if rate > ptol && self.lp.hi[bi] < INF {
                ((self.lp.hi[bi] - self.xb[i]).max(0.0) / rate, true)
            } else if rate < -ptol && self.lp.lo[bi] > -INF {
                ((self.xb[i] - self.lp.lo[bi]).max(0.0) / (-rate), false)
            } else {
                continue;
            };
            if dist > band {
                continue;
            }
            if bland {
                if (self.basis[i]) < best_key {
                    best_key = self.basis[i];
                    chosen = Some((i, dist, to_upper));
                }
            } else {
                // Ascending scan keeps the smallest position among exact ties.
                let mag = self.dwork[i].abs();
                let better = match chosen {
                    None => true,
                    Some((ci, _, _)) => mag > self.dwork[ci].abs(),
                };
                if better {
                    chosen = Some((i, dist, to_upper));
                }
            }
        }
        match chosen {
            Some((pos, dist, to_upper)) => Step::Pivot {
                delta: dist.max(0.0),
                pos,
                to_upper,
            },
            None => Step::Flip { delta: span },
        }
    }

    fn phase1_ratio(&self, j: usize, sigma: i8, v: &[i8], bland: bool) -> Step {
        let m = self.lp.m;
        let span = self.lp.hi[j] - self.lp.lo[j];
        let ptol = self.pivot_tol();
        let s = sigma as f64;
        let mut s0 = 0.0;
        // (delta, slope increment, basis position, leaves at upper bound)
        let mut events: Vec<(f64, f64, u32, bool)> = Vec::new();
        for i in 0..m {
            let rate = -s * self.dwork[i];
            let bi = self.basis[i] as usize;
            let (l, h) = (self.lp.lo[bi], self.lp.hi[bi]);
            s0 += v[i] as f64 * rate;
            if rate.abs() <= ptol {
                continue;
            }
            match v[i] {
                -1 => {
                    if rate > 0.0 {
                        events.push(((l - self.xb[i]) / rate, rate, i as u32, false));
                        if h < INF {
                            events.push(((h - self.xb[i]) / rate, rate, i as u32, true));
                        }
                    }
                }
                1 => {
                    if rate < 0.0 {
                        events.push(((self.xb[i] - h) / -rate, -rate, i as u32, true));
                        if l > -INF {
                            events.push(((self.xb[i] - l) / -rate, -rate, i as u32, false));
                        }
                    }
                }
                _ => {
                    if rate > 0.0 && h < INF {
                        events.push((((h - self.xb[i]).max(0.0)) / rate, rate, i as u32, true));
                    } else if rate < 0.0 && l > -INF {
                        events.push((((self.xb[i] - l).max(0.0)) / -rate, -rate, i as u32, false));
                    }
                }
            }
        }
        if s0 >= -1e-12 {
            return Step::NoProgress;
        }
        events.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.2.cmp(&b.2)));
        if bland {
            // Plain shortest-step rule: first event, smallest basic variable
            // index among exact ties.
            let mut first: Option<&(f64, f64, u32, bool)> = None;
            for ev in &events {
                if ev.0 >= span {
                    break;
                }
                match first {
                    None => first = Some(ev),
                    Some(f0) => {
                        if ev.0 > f0.0 + 1e-12 {
                            break;
                        }
                        if self.basis[ev.2 as usize] < self.basis[f0.2 as usize] {
                            first = Some(ev);
                        }
                    }
                }
            }
            return match first {
                Some(&(delta, _, pos, to_upper)) => Step::Pivot {
                    delta: delta.max(0.0),
                    pos: pos as usize,
                    to_upper,
                },
                None if span < INF => Step::Flip { delta: span },
                None => Step::NoProgress,
            };
        }
        let mut slope = s0;
        let mut idx = 0;
        while idx < events.len() {
            if events[idx].0 >= span {
                break;
            }
            // Process ties as one cluster; if the slope turns nonnegative
            // inside it, the most stable member leaves.
            let cluster_delta = events[idx].0;
            let mut end = idx;
            while end < events.len() && events[end].0 <= cluster_delta + 1e-12 {
                slope += events[end].1;
                end += 1;
            }
            if slope >= 0.0 {
                let mut pick = idx;
                for k in idx + 1..end {
                    if events[k].1 > events[pick].1 {
                        pick = k;
                    }
                }
                let (delta, _, pos, to_upper) = events[pick];
                return Step::Pivot {
                    delta: delta.max(0.0),
                    pos: pos as usize,
                    to_upper,
                };
            }
            idx = end;
        }
        if span < INF {
            Step::Flip { delta: span }
        } else {
            Step::NoProgress
        }
    }

    fn apply_flip(&mut self, j: usize, sigma: i8, delta: f64) {
        if delta > 0.0 {
            let s = sigma as f64;
            for i in 0..self.lp.m {
                self.xb[i] -= delta * s * self.dwork[i];
            }
        }
        self.stat[j] = match self.stat[j] {
            VStat::AtLower => VStat::AtUpper,
            VStat::AtUpper => VStat::AtLower,
            other => other,
        };
    }

    fn apply_pivot(&mut self, j: usize, sigma: i8, delta: f64, pos: usize, to_upper: bool) {
        let s = sigma as f64;
        let enter_val = self.nb_val(j) + s * delta;
        if delta > 0.0 {
            for i in 0..self.lp.m {
                self.xb[i] -= delta * s * self.dwork[i];
            }
        }
        let leaving = self.basis[pos] as usize;
        self.stat[leaving] = if to_upper { VStat::AtUpper } else { VStat::AtLower };
        self.stat[j] = VStat::Basic;
        self.basis[pos] = j as u32;
        self.xb[pos] = enter_val;
        self.etas.push(pos, &self.dwork);
    }

    fn run(mut self) -> Result<RawSolution, LpError> {
        let m = self.lp.m;
        let mut v = vec![0i8; m];
        let mut cb = vec![0.0; m];
        let mut cleaned = false;
        loop {
            if self.iterations >= self.lp.iter_limit {
                return Ok(self.extract(LpStatus::IterationLimit));
            }
            if self.etas.len() >= REFRESH_ETAS {
                self.refactor()?;
            }
            let worst = self.violations(&mut v);
            let phase1 = worst > self.row_tol;
            for i in 0..m {
                cb[i] = if phase1 {
                    v[i] as f64
                } else {
                    self.lp.obj[self.basis[i] as usize]
                };
            }
            self.btran_costs(&cb);
            let bland = self.degen_run >= DEGEN_BLAND_TRIGGER;
            let Some((j, sigma, _dj)) = self.price(phase1, bland) else {
                // No attractive column. Refactor once and reprice to wash
                // eta-file drift before declaring a final status.
                if !cleaned {
                    self.refactor()?;
                    self.banned.iter_mut().for_each(|b| *b = false);
                    cleaned = true;
                    continue;
                }
                let status = if phase1 {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                };
                return Ok(self.extract(status));
            };
            self.ftran_col(j);
            if self.iterations % RESIDUAL_CHECK_EVERY == RESIDUAL_CHECK_EVERY - 1
                && !self.etas.is_empty()
            {
                let res = self.ftran_residual(j);
                if res > 1e-7 {
                    self.refactor()?;
                    continue;
                }
            }
            let step = if phase1 {
                self.phase1_ratio(j, sigma, &v, bland)
            } else {
                self.phase2_ratio(j, sigma, bland)
            };
            self.iterations += 1;
            match step {
                Step::Unbounded => {
                    return Ok(self.extract(LpStatus::Unbounded));
                }
                Step::NoProgress => {
                    if !self.etas.is_empty() {
                        self.refactor()?;
                    } else {
                        self.banned[j] = true;
                    }
                    continue;
                }
                Step::Flip { delta } => {
                    if !delta.is_finite() {
                        return Err(LpError::Numerical(
                            "bound flip over an infinite span".into(),
                        ));
                    }
                    self.apply_flip(j, sigma, delta);
                    self.after_step(delta, &mut cleaned);
                }
                Step::Pivot { delta, pos, to_upper } => {
                    self.apply_pivot(j, sigma, delta, pos, to_upper);
                    self.after_step(delta, &mut cleaned);
                }
            }
        }
    }

    fn after_step(&mut self, delta: f64, cleaned: &mut bool) {
        if delta > 1e-10 {
            self.degen_run = 0;
        } else {
            self.degen_run += 1;
        }
        self.banned.iter_mut().for_each(|b| *b = false);
        *cleaned = false;
    }

    fn extract(mut self, status: LpStatus) -> RawSolution {
        let m = self.lp.m;
        let mut x = vec![0.0; self.nt];
        for j in 0..self.nt {
            if self.stat[j] != VStat::Basic {
                x[j] = self.nb_val(j);
            }
        }
        for i in 0..m {
            x[self.basis[i] as usize] = self.xb[i];
        }
        let mut cb = vec![0.0; m];
        for i in 0..m {
            cb[i] = self.lp.obj[self.basis[i] as usize];
        }
        self.btran_costs(&cb);
        let y = self.ywork.clone();
        let mut dj = vec![0.0; self.nt];
        for j in 0..self.nt {
            if self.stat[j] == VStat::Basic {
                continue;
            }
            dj[j] = self.lp.obj[j] - self.dot_col_y(j, &y);
        }
        RawSolution {
            status,
            x,
            y,
            dj,
            iterations: self.iterations,
            factorizations: self.factorizations,
        }
    }
}

fn factor_basis(
    lp: &CoreLp,
    basis: &[u32],
    ws: &mut Workspace,
) -> Result<LuFactors, FactorError> {
    let cols: Vec<Vec<(u32, f64)>> = basis
        .iter()
        .map(|&j| {
            let j = j as usize;
            if j < lp.n {
                lp.cols[j].clone()
            } else {
                vec![((j - lp.n) as u32, 1.0)]
            }
        })
        .collect();
    LuFactors::factor(&cols, ws)
}
