//! Sparse LU factorization of a simplex basis.
//!
//! The basis matrices produced by this crate are extremely sparse (a handful
//! of nonzeros per row) and close to triangular, so the factorization runs a
//! singleton peel first: column singletons become leading pivots and row
//! singletons trailing pivots, neither producing fill. The remaining bump is
//! factored left-looking with partial pivoting.
//!
//! Row indices inside `l_cols` live in original row space; `u_cols` entries
//! live in pivot-position space. `colperm` maps pivot position to the basis
//! position whose column was eliminated at that step, so solves permute in
//! and out of pivot space at the boundaries.

/// Dense workspace reused across factorizations and solves.
pub struct Workspace {
    work: Vec<f64>,
    mark: Vec<bool>,
}

impl Workspace {
    pub fn new(m: usize) -> Self {
        Workspace {
            work: vec![0.0; m],
            mark: vec![false; m],
        }
    }

    fn ensure(&mut self, m: usize) {
        if self.work.len() < m {
            self.work.resize(m, 0.0);
            self.mark.resize(m, false);
        }
    }
}

pub struct LuFactors {
    m: usize,
    /// Unit lower-triangular columns, entries (original row, value).
    l_cols: Vec<Vec<(u32, f64)>>,
    /// Strictly upper entries of U column k, (pivot position < k, value).
    u_cols: Vec<Vec<(u32, f64)>>,
    diag: Vec<f64>,
    /// Pivot position -> original row.
    p: Vec<u32>,
    /// Original row -> pivot position.
    pinv: Vec<u32>,
    /// Pivot position -> basis position (column order fed to the factorizer).
    colperm: Vec<u32>,
}

pub enum FactorError {
    /// The basis is numerically singular; the caller repairs it by falling
    /// back to a fresh slack basis.
    Singular,
}

const PIVOT_TINY: f64 = 1e-11;

impl LuFactors {
    /// Factor the basis given as `m` sparse columns (entries sorted by row).
    pub fn factor(
        cols: &[Vec<(u32, f64)>],
        ws: &mut Workspace,
    ) -> Result<LuFactors, FactorError> {
        let m = cols.len();
        ws.ensure(m);
        let order = peel_order(cols, m);

        let mut lu = LuFactors {
            m,
            l_cols: Vec::with_capacity(m),
            u_cols: Vec::with_capacity(m),
            diag: vec![0.0; m],
            p: vec![u32::MAX; m],
            pinv: vec![u32::MAX; m],
            colperm: order.clone(),
        };

        let work = &mut ws.work;
        let mark = &mut ws.mark;
        let mut touched: Vec<u32> = Vec::with_capacity(64);

        for (k, &bpos) in order.iter().enumerate() {
            // Scatter column.
            for &(r, v) in &cols[bpos as usize] {
                work[r as usize] = v;
                if !mark[r as usize] {
                    mark[r as usize] = true;
                    touched.push(r);
                }
            }
            // Left-looking elimination with finished columns, ascending by
            // pivot position. The sequential scan keeps the solve simple and
            // is cheap at the basis sizes this crate builds.
            for t in 0..k {
                let pr = lu.p[t] as usize;
                if !mark[pr] {
                    continue;
                }
                let v = work[pr];
                if v == 0.0 {
                    continue;
                }
                for &(r, lv) in &lu.l_cols[t] {
                    let r = r as usize;
                    work[r] -= lv * v;
                    if !mark[r] {
                        mark[r] = true;
                        touched.push(r as u32);
                    }
                }
            }
            // Split into U part (finished rows) and pivot candidates.
            let mut best_row = u32::MAX;
            let mut best_abs = 0.0_f64;
            for &r in &touched {
                if lu.pinv[r as usize] == u32::MAX {
                    let a = work[r as usize].abs();
                    if a > best_abs || (a == best_abs && r < best_row) {
                        best_abs = a;
                        best_row = r;
                    }
                }
            }
            if best_abs <= PIVOT_TINY {
                for &r in &touched {
                    work[r as usize] = 0.0;
                    mark[r as usize] = false;
                }
                touched.clear();
                return Err(FactorError::Singular);
            }
            let piv = work[best_row as usize];
            let mut ucol: Vec<(u32, f64)> = Vec::new();
            let mut lcol: Vec<(u32, f64)> = Vec::new();
            for &r in &touched {
                let ri = r as usize;
                let v = work[ri];
                work[ri] = 0.0;
                mark[ri] = false;
                if v == 0.0 {
                    continue;
                }
                let pos = lu.pinv[ri];
                if pos != u32::MAX {
                    ucol.push((pos, v));
                } else if r != best_row {
                    lcol.push((r, v / piv));
                }
            }
            touched.clear();
            ucol.sort_unstable_by_key(|e| e.0);
            lcol.sort_unstable_by_key(|e| e.0);
            lu.diag[k] = piv;
            lu.u_cols.push(ucol);
            lu.l_cols.push(lcol);
            lu.p[k] = best_row;
            lu.pinv[best_row as usize] = k as u32;
        }
        Ok(lu)
    }

    /// Solve `B x = a` where `a` is given as sparse (row, value) pairs.
    /// The result is written densely into `out` indexed by basis position.
    pub fn ftran(&self, a: &[(u32, f64)], ws: &mut Workspace, out: &mut [f64]) {
        let work = &mut ws.work;
        for w in work[..self.m].iter_mut() {
            *w = 0.0;
        }
        for &(r, v) in a {
            work[r as usize] += v;
        }
        // L solve, ascending pivot positions.
        for t in 0..self.m {
            let v = work[self.p[t] as usize];
            if v != 0.0 {
                for &(r, lv) in &self.l_cols[t] {
                    work[r as usize] -= lv * v;
                }
            }
        }
        // U back-substitution in pivot space.
        let mut z = vec![0.0; self.m];
        for k in 0..self.m {
            z[k] = work[self.p[k] as usize];
        }
        for k in (0..self.m).rev() {
            let v = z[k] / self.diag[k];
            z[k] = v;
            if v != 0.0 {
                for &(t, uv) in &self.u_cols[k] {
                    z[t as usize] -= uv * v;
                }
            }
        }
        for o in out[..self.m].iter_mut() {
            *o = 0.0;
        }
        for k in 0..self.m {
            out[self.colperm[k] as usize] = z[k];
        }
    }

    /// Solve `B^T y = c` where `c` is given densely by basis position.
    /// The result is written into `out` indexed by original row.
    pub fn btran(&self, c: &[f64], out: &mut [f64]) {
        let m = self.m;
        // Forward solve with U^T in pivot space.
        let mut z = vec![0.0; m];
        for k in 0..m {
            let mut v = c[self.colperm[k] as usize];
            for &(t, uv) in &self.u_cols[k] {
                v -= uv * z[t as usize];
            }
            z[k] = v / self.diag[k];
        }
        // Backward solve with L^T, result lands in original row space.
        for o in out[..m].iter_mut() {
            *o = 0.0;
        }
        for k in 0..m {
            out[self.p[k] as usize] = z[k];
        }
        for t in (0..m).rev() {
            let mut acc = out[self.p[t] as usize];
            for &(r, lv) in &self.l_cols[t] {
                acc -= lv * out[r as usize];
            }
            out[self.p[t] as usize] = acc;
        }
    }

}

/// Column order for the factorization: column singletons first, row
/// singletons last (reversed), the bump in between by ascending fill degree.
fn peel_order(cols: &[Vec<(u32, f64)>], m: usize) -> Vec<u32> {
    let mut col_cnt: Vec<u32> = cols.iter().map(|c| c.len() as u32).collect();
    let mut row_cnt: Vec<u32> = vec![0; m];
    let mut row_lists: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (j, col) in cols.iter().enumerate() {
        for &(r, _) in col {
            row_cnt[r as usize] += 1;
            row_lists[r as usize].push(j as u32);
        }
    }
    let mut col_active = vec![true; m];
    let mut row_active = vec![true; m];
    let mut front: Vec<u32> = Vec::new();
    let mut back: Vec<u32> = Vec::new();
    let mut col_queue: Vec<u32> = (0..m as u32).filter(|&j| col_cnt[j as usize] == 1).collect();
    let mut row_queue: Vec<u32> = (0..m as u32).filter(|&r| row_cnt[r as usize] == 1).collect();
    let mut remaining = m;

    let deactivate_col = |j: u32,
                          cols: &[Vec<(u32, f64)>],
                          row_active: &[bool],
                          row_cnt: &mut [u32],
                          row_queue: &mut Vec<u32>| {
        for &(r, _) in &cols[j as usize] {
            let r = r as usize;
            if row_active[r] {
                row_cnt[r] -= 1;
                if row_cnt[r] == 1 {
                    row_queue.push(r as u32);
                }
            }
        }
    };
    let deactivate_row = |r: u32,
                          row_lists: &[Vec<u32>],
                          col_active: &[bool],
                          col_cnt: &mut [u32],
                          col_queue: &mut Vec<u32>| {
        for &j in &row_lists[r as usize] {
            let j = j as usize;
            if col_active[j] {
                col_cnt[j] -= 1;
                if col_cnt[j] == 1 {
                    col_queue.push(j as u32);
                }
            }
        }
    };

    while remaining > 0 {
        if let Some(j) = col_queue.pop() {
            let j = j as usize;
            if !col_active[j] || col_cnt[j] != 1 {
                continue;
            }
            let r = cols[j]
                .iter()
                .map(|&(r, _)| r)
                .find(|&r| row_active[r as usize]);
            let Some(r) = r else {
                continue;
            };
            col_active[j] = false;
            row_active[r as usize] = false;
            front.push(j as u32);
            remaining -= 1;
            deactivate_col(j as u32, cols, &row_active, &mut row_cnt, &mut row_queue);
            deactivate_row(r, &row_lists, &col_active, &mut col_cnt, &mut col_queue);
            continue;
        }
        if let Some(r) = row_queue.pop() {
            let r = r as usize;
            if !row_active[r] || row_cnt[r] != 1 {
                continue;
            }
            let j = row_lists[r]
                .iter()
                .copied()
                .find(|&j| col_active[j as usize]);
            let Some(j) = j else {
                continue;
            };
            row_active[r] = false;
            col_active[j as usize] = false;
            back.push(j);
            remaining -= 1;
            deactivate_col(j, cols, &row_active, &mut row_cnt, &mut row_queue);
            deactivate_row(r as u32, &row_lists, &col_active, &mut col_cnt, &mut col_queue);
            continue;
        }
        break;
    }

    let mut bump: Vec<u32> = (0..m as u32).filter(|&j| col_active[j as usize]).collect();
    bump.sort_unstable_by_key(|&j| (col_cnt[j as usize], j));

    let mut order = front;
    order.extend_from_slice(&bump);
    order.extend(back.iter().rev());
    debug_assert_eq!(order.len(), m);
    order
}

/// Product-form eta file appended on top of an [`LuFactors`] refactorization.
pub struct EtaFile {
    etas: Vec<Eta>,
}

struct Eta {
    /// Basis position replaced by the pivot.
    pos: u32,
    pivot: f64,
    /// Off-pivot entries (basis position, value of the ftran'd column).
    entries: Vec<(u32, f64)>,
}

impl EtaFile {
    pub fn new() -> Self {
        EtaFile { etas: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn clear(&mut self) {
        self.etas.clear();
    }

    /// Record the basis change at position `pos` with ftran'd column `d`.
    pub fn push(&mut self, pos: usize, d: &[f64]) {
        let mut entries = Vec::new();
        for (i, &v) in d.iter().enumerate() {
            if i != pos && v.abs() > 1e-14 {
                entries.push((i as u32, v));
            }
        }
        self.etas.push(Eta {
            pos: pos as u32,
            pivot: d[pos],
            entries,
        });
    }

    /// Apply the eta inverses to an ftran result (ascending order).
    pub fn ftran(&self, w: &mut [f64]) {
        for eta in &self.etas {
            let p = eta.pos as usize;
            let t = w[p] / eta.pivot;
            if t != 0.0 {
                w[p] = t;
                for &(i, v) in &eta.entries {
                    w[i as usize] -= v * t;
                }
            } else {
                w[p] = 0.0;
            }
        }
    }

    /// Apply the transposed eta inverses to a btran input (descending order).
    /// Operates in basis-position space, before the LU btran.
    pub fn btran(&self, c: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let p = eta.pos as usize;
            let mut acc = c[p];
            for &(i, v) in &eta.entries {
                acc -= v * c[i as usize];
            }
            c[p] = acc / eta.pivot;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let m = a.len();
        let mut aug: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut x = b.to_vec();
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let piv = (k..m)
                .max_by(|&i, &j| {
                    aug[perm[i]][k]
                        .abs()
                        .partial_cmp(&aug[perm[j]][k].abs())
                        .unwrap()
                })
                .unwrap();
            perm.swap(k, piv);
            let pr = perm[k];
            let pv = aug[pr][k];
            assert!(pv.abs() > 1e-12, "singular test matrix");
            for i in k + 1..m {
                let r = perm[i];
                let f = aug[r][k] / pv;
                if f != 0.0 {
                    for c in k..m {
                        let upd = aug[pr][c] * f;
                        aug[r][c] -= upd;
                    }
                    x[r] -= x[pr] * f;
                }
            }
        }
        let mut sol = vec![0.0; m];
        for k in (0..m).rev() {
            let r = perm[k];
            let mut acc = x[r];
            for c in k + 1..m {
                acc -= aug[r][c] * sol[c];
            }
            sol[k] = acc / aug[r][k];
        }
        sol
    }

    fn random_sparse(m: usize, seed: u64) -> Vec<Vec<(u32, f64)>> {
        // Diagonally dominant after a row shuffle, so nonsingular.
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut rows: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = (next() as usize) % (i + 1);
            rows.swap(i, j);
        }
        (0..m)
            .map(|j| {
                let mut col = vec![(rows[j] as u32, 4.0 + (next() % 100) as f64 / 25.0)];
                let extra = (next() % 3) as usize;
                for _ in 0..extra {
                    let r = (next() as usize) % m;
                    if r != rows[j] && !col.iter().any(|&(rr, _)| rr == r as u32) {
                        col.push((r as u32, ((next() % 200) as f64 - 100.0) / 60.0));
                    }
                }
                col.sort_unstable_by_key(|e| e.0);
                col
            })
            .collect()
    }

    fn to_dense(cols: &[Vec<(u32, f64)>], m: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; m]; m];
        for (j, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                a[r as usize][j] = v;
            }
        }
        a
    }

    #[test]
    fn ftran_matches_dense_solve() {
        for seed in 0..20 {
            let m = 3 + (seed as usize % 17);
            let cols = random_sparse(m, seed + 1);
            let dense = to_dense(&cols, m);
            let mut ws = Workspace::new(m);
            let lu = match LuFactors::factor(&cols, &mut ws) {
                Ok(lu) => lu,
                Err(FactorError::Singular { .. }) => panic!("unexpected singular"),
            };
            let rhs: Vec<(u32, f64)> = vec![(0, 1.0), ((m as u32) - 1, -2.0)];
            let mut out = vec![0.0; m];
            lu.ftran(&rhs, &mut ws, &mut out);
            let mut b = vec![0.0; m];
            for &(r, v) in &rhs {
                b[r as usize] += v;
            }
            let want = dense_solve(&dense, &b);
            for i in 0..m {
                assert!(
                    (out[i] - want[i]).abs() < 1e-9,
                    "seed {seed} ftran mismatch at {i}: {} vs {}",
                    out[i],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn btran_matches_dense_transpose_solve() {
        for seed in 0..20 {
            let m = 3 + (seed as usize % 13);
            let cols = random_sparse(m, seed + 101);
            let dense = to_dense(&cols, m);
            let mut ws = Workspace::new(m);
            let lu = LuFactors::factor(&cols, &mut ws)
                .unwrap_or_else(|_| panic!("unexpected singular"));
            let c: Vec<f64> = (0..m).map(|i| (i as f64) - 1.5).collect();
            let mut y = vec![0.0; m];
            lu.btran(&c, &mut y);
            // Check B^T y = c directly: column j of B dotted with y.
            for j in 0..m {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += dense[r][j] * y[r];
                }
                assert!(
                    (acc - c[j]).abs() < 1e-9,
                    "seed {seed} btran residual at {j}: {acc} vs {}",
                    c[j]
                );
            }
        }
    }

    #[test]
    fn singular_basis_is_reported() {
        let cols: Vec<Vec<(u32, f64)>> = vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, 2.0), (1, 2.0)],
            vec![(2, 1.0)],
        ];
        let mut ws = Workspace::new(3);
        match LuFactors::factor(&cols, &mut ws) {
            Err(FactorError::Singular { .. }) => {}
            Ok(_) => panic!("singular matrix factored"),
        }
    }

    #[test]
    fn eta_file_tracks_column_replacement() {
        let m = 6;
        let cols = random_sparse(m, 7);
        let mut ws = Workspace::new(m);
        let lu = LuFactors::factor(&cols, &mut ws).unwrap_or_else(|_| panic!("singular"));
        // Replace basis position 2 with a new column.
        let newcol: Vec<(u32, f64)> = vec![(1, 2.0), (3, -1.0), (4, 0.5)];
        let mut d = vec![0.0; m];
        lu.ftran(&newcol, &mut ws, &mut d);
        // Replace at the position with the largest pivot so the update is
        // well conditioned.
        let pos = (0..m)
            .max_by(|&a, &b| d[a].abs().partial_cmp(&d[b].abs()).unwrap())
            .unwrap();
        assert!(d[pos].abs() > 1e-12, "pivot too small for test");
        let mut etas = EtaFile::new();
        etas.push(pos, &d);

        let mut updated = cols.clone();
        updated[pos] = newcol;
        let dense = to_dense(&updated, m);

        let rhs: Vec<(u32, f64)> = vec![(0, 3.0), (5, 1.0)];
        let mut w = vec![0.0; m];
        lu.ftran(&rhs, &mut ws, &mut w);
        etas.ftran(&mut w);
        let mut b = vec![0.0; m];
        for &(r, v) in &rhs {
            b[r as usize] += v;
        }
        let want = dense_solve(&dense, &b);
        for i in 0..m {
            assert!(
                (w[i] - want[i]).abs() < 1e-9,
                "eta ftran mismatch at {i}: {} vs {}",
                w[i],
                want[i]
            );
        }

        let cb: Vec<f64> = (0..m).map(|i| 0.3 * i as f64 - 0.7).collect();
        let mut c = cb.clone();
        etas.btran(&mut c);
        let mut y = vec![0.0; m];
        lu.btran(&c, &mut y);
        for j in 0..m {
            let mut acc = 0.0;
            for r in 0..m {
                acc += dense[r][j] * y[r];
            }
            assert!(
                (acc - cb[j]).abs() < 1e-9,
                "eta btran residual at {j}: {acc} vs {}",
                cb[j]
            );
        }
    }
}
