//! Linear programming layer: a small builder API over a sparse revised
//! simplex solver.
//!
//! Problems are assembled from named variables with box bounds and linear
//! rows with `<=`, `>=` or `=` senses. Helper methods add the auxiliary
//! variables and rows for absolute-value, max and hinge epigraphs; the
//! auxiliaries equal the modeled quantity at any optimum as long as they
//! carry positive objective weight.
//!
//! Solves are deterministic: the same problem yields bit-identical solutions
//! across runs. Every `Optimal` return has passed an internal feasibility and
//! strong-duality check, so downstream code can rely on the reported
//! objective without re-verifying it.

mod factor;
mod simplex;

use std::fmt::Write as _;
use thiserror::Error;

/// Handle to a variable of a [`LinearProgram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(u32);

/// Handle to a row of a [`LinearProgram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(u32);

/// Row sense.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("numerical failure in simplex: {0}")]
    Numerical(String),
}

/// Linear expression `sum coeff * var + constant`, built incrementally.
#[derive(Clone, Debug, Default)]
pub struct LinExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((v, coeff));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    /// Chainable term for literal formulas.
    pub fn term(mut self, v: VarId, coeff: f64) -> Self {
        self.add_term(v, coeff);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    /// Terms merged by variable, zeros dropped, plus the constant.
    fn canonical(&self) -> (Vec<(u32, f64)>, f64) {
        let mut terms: Vec<(u32, f64)> = self.terms.iter().map(|&(v, c)| (v.0, c)).collect();
        terms.sort_unstable_by_key(|t| t.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        (merged, self.constant)
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::var(v)
    }
}

struct VarInfo {
    name: String,
    lo: f64,
    hi: f64,
    obj: f64,
}

struct RowInfo {
    name: String,
    terms: Vec<(u32, f64)>,
    rel: Rel,
    rhs: f64,
}

/// Minimization problem over box-bounded variables and linear rows.
pub struct LinearProgram {
    name: String,
    vars: Vec<VarInfo>,
    rows: Vec<RowInfo>,
    obj_offset: f64,
    iter_limit: Option<usize>,
}

impl LinearProgram {
    pub fn new(name: impl Into<String>) -> Self {
        LinearProgram {
            name: name.into(),
            vars: Vec::new(),
            rows: Vec::new(),
            obj_offset: 0.0,
            iter_limit: None,
        }
    }

    /// Add a variable with bounds `[lo, hi]` (either may be infinite) and an
    /// objective coefficient.
    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, obj: f64) -> VarId {
        let id = VarId(self.vars.len() as u32);
        self.vars.push(VarInfo {
            name: name.into(),
            lo,
            hi,
            obj,
        });
        id
    }

    pub fn set_bounds(&mut self, v: VarId, lo: f64, hi: f64) {
        self.vars[v.0 as usize].lo = lo;
        self.vars[v.0 as usize].hi = hi;
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        let info = &self.vars[v.0 as usize];
        (info.lo, info.hi)
    }

    pub fn set_obj_coeff(&mut self, v: VarId, obj: f64) {
        self.vars[v.0 as usize].obj = obj;
    }

    pub fn add_obj_coeff(&mut self, v: VarId, delta: f64) {
        self.vars[v.0 as usize].obj += delta;
    }

    pub fn add_obj_offset(&mut self, delta: f64) {
        self.obj_offset += delta;
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0 as usize].name
    }

    /// Add `expr rel rhs`; any constant inside `expr` moves to the right side.
    pub fn add_row(&mut self, name: impl Into<String>, expr: &LinExpr, rel: Rel, rhs: f64) -> RowId {
        let (terms, constant) = expr.canonical();
        let id = RowId(self.rows.len() as u32);
        self.rows.push(RowInfo {
            name: name.into(),
            terms,
            rel,
            rhs: rhs - constant,
        });
        id
    }

    /// Auxiliary `t >= |expr|`, tight at any optimum where `t` carries
    /// positive objective weight.
    pub fn add_abs_epigraph(&mut self, name: &str, expr: &LinExpr, obj: f64) -> VarId {
        let t = self.add_var(name, 0.0, f64::INFINITY, obj);
        let mut pos = LinExpr::var(t);
        pos.add_expr(expr, -1.0);
        self.add_row(format!("{name}_pos"), &pos, Rel::Ge, 0.0);
        let mut neg = LinExpr::var(t);
        neg.add_expr(expr, 1.0);
        self.add_row(format!("{name}_neg"), &neg, Rel::Ge, 0.0);
        t
    }

    /// Auxiliary `t >= max_k expr_k`, tight at any optimum where `t` carries
    /// positive objective weight.
    pub fn add_max_epigraph(&mut self, name: &str, exprs: &[LinExpr], obj: f64) -> VarId {
        let t = self.add_var(name, -f64::INFINITY, f64::INFINITY, obj);
        for (k, e) in exprs.iter().enumerate() {
            let mut row = LinExpr::var(t);
            row.add_expr(e, -1.0);
            self.add_row(format!("{name}_p{k}"), &row, Rel::Ge, 0.0);
        }
        t
    }

    /// Auxiliary `h >= max(expr, 0)`, tight at any optimum where `h` carries
    /// positive objective weight.
    pub fn add_hinge(&mut self, name: &str, expr: &LinExpr, obj: f64) -> VarId {
        let h = self.add_var(name, 0.0, f64::INFINITY, obj);
        let mut row = LinExpr::var(h);
        row.add_expr(expr, -1.0);
        self.add_row(format!("{name}_hinge"), &row, Rel::Ge, 0.0);
        h
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.terms.len()).sum()
    }

    pub fn set_iteration_limit(&mut self, limit: usize) {
        self.iter_limit = Some(limit);
    }

    fn validate(&self) -> Result<(), LpError> {
        for v in &self.vars {
            if v.lo.is_nan() || v.hi.is_nan() || !v.obj.is_finite() {
                return Err(LpError::Malformed(format!(
                    "variable {} has a NaN bound or non-finite objective",
                    v.name
                )));
            }
            if v.lo > v.hi {
                return Err(LpError::Malformed(format!(
                    "variable {} has lo > hi ({} > {})",
                    v.name, v.lo, v.hi
                )));
            }
            if v.lo == f64::INFINITY || v.hi == -f64::INFINITY {
                return Err(LpError::Malformed(format!(
                    "variable {} has an empty bound interval",
                    v.name
                )));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Err(LpError::Malformed(format!(
                    "row {} has non-finite right-hand side",
                    r.name
                )));
            }
            for &(v, c) in &r.terms {
                if !c.is_finite() {
                    return Err(LpError::Malformed(format!(
                        "row {} has non-finite coefficient on {}",
                        r.name, self.vars[v as usize].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.validate()?;
        let n = self.vars.len();
        let m = self.rows.len();
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(v, c) in &r.terms {
                cols[v as usize].push((i as u32, c));
            }
        }
        let mut lo: Vec<f64> = self.vars.iter().map(|v| v.lo).collect();
        let mut hi: Vec<f64> = self.vars.iter().map(|v| v.hi).collect();
        let mut obj: Vec<f64> = self.vars.iter().map(|v| v.obj).collect();
        let mut b = Vec::with_capacity(m);
        for r in &self.rows {
            let (slo, shi) = match r.rel {
                Rel::Le => (0.0, f64::INFINITY),
                Rel::Ge => (-f64::INFINITY, 0.0),
                Rel::Eq => (0.0, 0.0),
            };
            lo.push(slo);
            hi.push(shi);
            obj.push(0.0);
            b.push(r.rhs);
        }
        let core = simplex::CoreLp {
            m,
            n,
            cols,
            lo,
            hi,
            obj,
            b,
            iter_limit: self.iter_limit.unwrap_or(50_000 + 100 * (m + n)),
        };
        let raw = simplex::solve_core(&core)?;
        let objective = if raw.status == LpStatus::Optimal || raw.status == LpStatus::IterationLimit
        {
            (0..n).map(|j| core.obj[j] * raw.x[j]).sum::<f64>() + self.obj_offset
        } else {
            f64::NAN
        };
        let max_infeasibility = self.max_violation(&raw.x[..n]);
        let duality_gap = {
            let primal: f64 = (0..n).map(|j| core.obj[j] * raw.x[j]).sum();
            let ydotb: f64 = (0..m).map(|i| raw.y[i] * core.b[i]).sum();
            let djx: f64 = (0..n + m).map(|j| raw.dj[j] * raw.x[j]).sum();
            (primal - ydotb - djx).abs() / (1.0 + primal.abs())
        };
        if raw.status == LpStatus::Optimal {
            let bscale = 1.0 + core.b.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            if max_infeasibility > 1e-6 * bscale {
                return Err(LpError::Numerical(format!(
                    "optimal solution violates a constraint by {max_infeasibility:.3e}"
                )));
            }
            if duality_gap > 1e-7 {
                return Err(LpError::Numerical(format!(
                    "relative duality gap {duality_gap:.3e} exceeds 1e-7"
                )));
            }
        }
        Ok(LpSolution {
            status: raw.status,
            objective,
            values: raw.x[..n].to_vec(),
            duals: raw.y,
            reduced_costs: raw.dj[..n].to_vec(),
            iterations: raw.iterations,
            factorizations: raw.factorizations,
            max_infeasibility,
            duality_gap,
        })
    }

    /// Largest violation of the original rows and bounds at `x`.
    fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (j, v) in self.vars.iter().enumerate() {
            worst = worst.max(v.lo - x[j]).max(x[j] - v.hi);
        }
        for r in &self.rows {
            let act: f64 = r.terms.iter().map(|&(v, c)| c * x[v as usize]).sum();
            let viol = match r.rel {
                Rel::Le => act - r.rhs,
                Rel::Ge => r.rhs - act,
                Rel::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst.max(0.0)
    }

    /// Serialize in CPLEX LP text format.
    pub fn to_lp_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ Problem: {}", self.name);
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (j, v) in self.vars.iter().enumerate() {
            if v.obj != 0.0 {
                push_term(&mut out, v.obj, &self.sanitized(j), &mut first);
            }
        }
        if self.obj_offset != 0.0 {
            let sign = if self.obj_offset >= 0.0 { "+" } else { "-" };
            let _ = write!(out, " {} {}", sign, self.obj_offset.abs());
            first = false;
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, " {}:", sanitize_name(&r.name, i, "c"));
            let mut rfirst = true;
            if r.terms.is_empty() {
                out.push_str(" 0");
                if !self.vars.is_empty() {
                    let _ = write!(out, " {}", self.sanitized(0));
                }
                rfirst = false;
            }
            for &(v, c) in &r.terms {
                push_term(&mut out, c, &self.sanitized(v as usize), &mut rfirst);
            }
            let rel = match r.rel {
                Rel::Le => "<=",
                Rel::Ge => ">=",
                Rel::Eq => "=",
            };
            let _ = writeln!(out, " {} {}", rel, r.rhs);
        }
        out.push_str("Bounds\n");
        for (j, v) in self.vars.iter().enumerate() {
            let name = self.sanitized(j);
            if v.lo == v.hi {
                let _ = writeln!(out, " {} = {}", name, v.lo);
            } else if v.lo == -f64::INFINITY && v.hi == f64::INFINITY {
                let _ = writeln!(out, " {} free", name);
            } else if v.hi == f64::INFINITY {
                let _ = writeln!(out, " {} >= {}", name, v.lo);
            } else if v.lo == -f64::INFINITY {
                let _ = writeln!(out, " -infinity <= {} <= {}", name, v.hi);
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", v.lo, name, v.hi);
            }
        }
        out.push_str("End\n");
        out
    }

    fn sanitized(&self, j: usize) -> String {
        sanitize_name(&self.vars[j].name, j, "x")
    }
}

fn sanitize_name(name: &str, index: usize, prefix: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    match cleaned.chars().next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => cleaned,
        _ => format!("{prefix}{index}_{cleaned}"),
    }
}

fn push_term(out: &mut String, coeff: f64, name: &str, first: &mut bool) {
    let sign = if coeff >= 0.0 { "+" } else { "-" };
    if *first && coeff >= 0.0 {
        let _ = write!(out, " {} {}", coeff, name);
    } else {
        let _ = write!(out, " {} {} {}", sign, coeff.abs(), name);
    }
    *first = false;
}

/// Result of [`LinearProgram::solve`].
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value including any constant offset; NaN unless the status
    /// is `Optimal` or `IterationLimit`.
    pub objective: f64,
    values: Vec<f64>,
    duals: Vec<f64>,
    reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub factorizations: usize,
    /// Largest constraint or bound violation of the returned point.
    pub max_infeasibility: f64,
    /// Relative gap between the primal objective and its dual certificate.
    pub duality_gap: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0 as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row dual: derivative of the optimal objective in the row's rhs.
    pub fn dual(&self, r: RowId) -> f64 {
        self.duals[r.0 as usize]
    }

    pub fn reduced_cost(&self, v: VarId) -> f64 {
        self.reduced_costs[v.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn minimizes_single_variable_above_bound() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", -f64::INFINITY, f64::INFINITY, 1.0);
        let r = lp.add_row("floor", &LinExpr::var(x), Rel::Ge, 2.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.objective, 2.0, 1e-9);
        assert_close(sol.value(x), 2.0, 1e-9);
        assert_close(sol.dual(r), 1.0, 1e-9);
    }

    #[test]
    fn detects_conflicting_rows_as_infeasible() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", -f64::INFINITY, f64::INFINITY, 1.0);
        lp.add_row("a", &LinExpr::var(x), Rel::Ge, 3.0);
        lp.add_row("b", &LinExpr::var(x), Rel::Le, 2.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded_direction() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, f64::INFINITY, -1.0);
        let y = lp.add_var("y", 0.0, 5.0, 0.0);
        let mut e = LinExpr::var(y);
        e.add_term(x, 0.1);
        lp.add_row("link", &e, Rel::Ge, -100.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn abs_epigraph_is_tight_for_negative_argument() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", -3.0, -3.0, 0.0);
        let t = lp.add_abs_epigraph("t", &LinExpr::var(x), 1.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.value(t), 3.0, 1e-9);
    }

    #[test]
    fn max_epigraph_selects_largest_piece() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.4, 0.4, 0.0);
        let pieces = vec![
            LinExpr::var(x),
            LinExpr::var(x).scaled(2.0),
            LinExpr::var(x).scaled(-1.0).plus(1.0),
        ];
        let t = lp.add_max_epigraph("t", &pieces, 1.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(t), 0.8, 1e-9);
    }

    #[test]
    fn hinge_is_zero_below_and_linear_above() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", -2.0, -2.0, 0.0);
        let y = lp.add_var("y", 1.5, 1.5, 0.0);
        let hx = lp.add_hinge("hx", &LinExpr::var(x), 1.0);
        let hy = lp.add_hinge("hy", &LinExpr::var(y), 1.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(hx), 0.0, 1e-9);
        assert_close(sol.value(hy), 1.5, 1e-9);
    }

    #[test]
    fn bound_flips_reach_box_optimum() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, 1.0, -1.0);
        let y = lp.add_var("y", 0.0, 1.0, -1.0);
        let mut e = LinExpr::var(x);
        e.add_term(y, 1.0);
        lp.add_row("cap", &e, Rel::Le, 1.5);
        let sol = lp.solve().unwrap();
        assert_close(sol.objective, -1.5, 1e-9);
    }

    #[test]
    fn equality_rows_and_fixed_vars_combine() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, 10.0, 2.0);
        let y = lp.add_var("y", 3.0, 3.0, 0.0);
        let mut e = LinExpr::var(x);
        e.add_term(y, 1.0);
        lp.add_row("sum", &e, Rel::Eq, 7.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(x), 4.0, 1e-9);
        assert_close(sol.objective, 8.0, 1e-9);
    }

    #[test]
    fn expression_constant_moves_to_rhs() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, f64::INFINITY, 1.0);
        let e = LinExpr::var(x).plus(-1.0);
        lp.add_row("r", &e, Rel::Ge, 1.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(x), 2.0, 1e-9);
    }

    #[test]
    fn duplicate_terms_merge() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, f64::INFINITY, 1.0);
        let mut e = LinExpr::new();
        e.add_term(x, 1.0).add_term(x, 2.0);
        lp.add_row("r", &e, Rel::Ge, 6.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(x), 2.0, 1e-9);
    }

    #[test]
    fn objective_offset_is_included() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 1.0, 1.0, 3.0);
        let _ = x;
        lp.add_obj_offset(10.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.objective, 13.0, 1e-12);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let mut lp = LinearProgram::new("t");
        let mut vars = Vec::new();
        for j in 0..12 {
            vars.push(lp.add_var(format!("x{j}"), 0.0, 2.0, ((j * 7 % 5) as f64) - 2.0));
        }
        for i in 0..8 {
            let mut e = LinExpr::new();
            for (j, &v) in vars.iter().enumerate() {
                let c = (((i * 13 + j * 5) % 7) as f64) - 3.0;
                e.add_term(v, c);
            }
            lp.add_row(format!("r{i}"), &e, if i % 2 == 0 { Rel::Le } else { Rel::Ge }, (i as f64) - 2.0);
        }
        let a = lp.solve().unwrap();
        let b = lp.solve().unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        for (va, vb) in a.values().iter().zip(b.values().iter()) {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
    }

    #[test]
    fn optimal_solutions_carry_tight_duality_certificates() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, 4.0, 1.0);
        let y = lp.add_var("y", 0.0, 4.0, 2.0);
        let mut e = LinExpr::var(x);
        e.add_term(y, 1.0);
        lp.add_row("demand", &e, Rel::Ge, 5.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_close(sol.objective, 6.0, 1e-9);
        assert!(sol.duality_gap <= 1e-7);
        assert!(sol.max_infeasibility <= 1e-8);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 1.0, -1.0, 0.0);
        let _ = x;
        match lp.solve() {
            Err(LpError::Malformed(_)) => {}
            other => panic!("expected malformed error, got {other:?}"),
        }
        let mut lp2 = LinearProgram::new("t2");
        let y = lp2.add_var("y", 0.0, 1.0, f64::NAN);
        let _ = y;
        assert!(matches!(lp2.solve(), Err(LpError::Malformed(_))));
    }

    #[test]
    fn lp_text_export_contains_all_sections() {
        let mut lp = LinearProgram::new("export");
        let x = lp.add_var("p_gen", 0.0, 0.75, 12.0);
        let y = lp.add_var("flow 1", -f64::INFINITY, f64::INFINITY, 0.0);
        let mut e = LinExpr::var(x);
        e.add_term(y, -1.0);
        lp.add_row("link", &e, Rel::Eq, 0.25);
        let text = lp.to_lp_text();
        assert!(text.contains("Minimize"));
        assert!(text.contains("Subject To"));
        assert!(text.contains("Bounds"));
        assert!(text.contains("End"));
        assert!(text.contains("p_gen"));
        assert!(text.contains("flow_1"));
        assert!(text.contains("= 0.25"));
        assert!(text.contains("free"));
    }

    #[test]
    fn degenerate_overlapping_rows_still_solve() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", 0.0, 10.0, 1.0);
        let y = lp.add_var("y", 0.0, 10.0, 1.0);
        for i in 0..6 {
            let mut e = LinExpr::var(x);
            e.add_term(y, 1.0);
            lp.add_row(format!("r{i}"), &e, Rel::Ge, 4.0);
        }
        let mut e2 = LinExpr::var(x);
        e2.add_term(y, -1.0);
        lp.add_row("tie", &e2, Rel::Eq, 0.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.objective, 4.0, 1e-9);
        assert_close(sol.value(x), 2.0, 1e-9);
    }

    #[test]
    fn free_variables_enter_and_settle() {
        let mut lp = LinearProgram::new("t");
        let x = lp.add_var("x", -f64::INFINITY, f64::INFINITY, 0.0);
        let t = lp.add_abs_epigraph("t", &LinExpr::var(x).plus(-7.0), 1.0);
        let sol = lp.solve().unwrap();
        assert_close(sol.value(x), 7.0, 1e-9);
        assert_close(sol.value(t), 0.0, 1e-9);
    }
}
