//! Radial distribution-network model and linearized power flow.
//!
//! Networks are trees rooted at bus 1 (the transmission interface). Line k
//! terminates at its child bus, and the path matrix B marks which lines lie
//! on the root path of each bus, which turns flow and voltage computations
//! into sparse matrix products: flows are B times the bus withdrawals, and
//! voltage drops are `Bᵀ(R P + X Q)/V0` under the linearized DistFlow model.
//!
//! All derived matrices are built once at validation time and are immutable
//! afterwards, so a model can be shared freely across evaluation workers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bus {
    /// 1-based id; bus 1 is the root.
    pub id: usize,
    /// Parent bus id; None exactly for the root.
    #[serde(default)]
    pub parent: Option<usize>,
    /// Active load per slot, MW.
    #[serde(default)]
    pub active_load: Vec<f64>,
    /// Reactive load per slot, MVAr.
    #[serde(default)]
    pub reactive_load: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Line {
    /// The bus this line feeds; the parent end is the bus's parent.
    pub child_bus: usize,
    /// Resistance, per-unit.
    pub r: f64,
    /// Reactance, per-unit.
    pub x: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Convex piecewise-linear cost: (breakpoint, slope) with the first
    /// breakpoint at p_min, cost 0 there, and non-decreasing slopes.
    pub cost_pieces: Vec<(f64, f64)>,
}

impl Generator {
    /// Cost of producing `p`, integrating the segment slopes.
    pub fn cost_at(&self, p: f64) -> f64 {
        let mut cost = 0.0;
        for (i, &(bp, slope)) in self.cost_pieces.iter().enumerate() {
            let next = self
                .cost_pieces
                .get(i + 1)
                .map(|&(b, _)| b)
                .unwrap_or(f64::INFINITY);
            if p <= bp {
                break;
            }
            cost += slope * (p.min(next) - bp);
        }
        cost
    }

    /// Affine pieces (slope, intercept) whose max is the cost curve;
    /// this is the epigraph form consumed by the dispatch program.
    pub fn cost_affine_pieces(&self) -> Vec<(f64, f64)> {
        self.cost_pieces
            .iter()
            .map(|&(bp, slope)| (slope, self.cost_at(bp) - slope * bp))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResUnit {
    pub bus: usize,
    /// Forecast output per slot, MW; filled from sample means when absent.
    #[serde(default)]
    pub forecast: Option<Vec<f64>>,
    /// Forecast-error support; filled from sample extremes when absent.
    #[serde(default)]
    pub error_support: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Station {
    pub bus: usize,
    /// SoC box [MWh].
    pub soc_min: f64,
    pub soc_max: f64,
    /// Charge / discharge power caps [MW].
    pub p_ch_max: f64,
    pub p_dch_max: f64,
    /// Predicted charging demand per slot, MW.
    pub demand_forecast: Vec<f64>,
    /// Replacement cost of the battery, currency units.
    pub battery_cost: f64,
    /// End-of-life remaining-capacity fraction.
    pub eta_end: f64,
    /// Degradation throughput coefficients: loss = b1 e^{b2 i_c} Σ|P^B|Δt.
    pub b1: f64,
    pub b2: f64,
    pub i_c: f64,
    /// Slot length in hours.
    pub delta_t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    /// Substation voltage, per-unit; also the linearization base.
    pub v0: f64,
    /// Uniform (min, max) voltage bounds applied to every non-root bus.
    pub voltage_bounds: (f64, f64),
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub res_units: Vec<ResUnit>,
    pub stations: Vec<Station>,
    /// Charging price per slot; defaults to zero when absent.
    #[serde(default)]
    pub charging_price: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid network: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("distribution factors violate the simplex: {0}")]
    BadAlpha(String),
}

/// Structural and physical consistency diagnostics; empty means valid.
pub fn validate_radial(net: &Network) -> Vec<String> {
    let mut out = Vec::new();
    let n = net.buses.len();
    if n == 0 {
        out.push("network has no buses".into());
        return out;
    }
    for (i, b) in net.buses.iter().enumerate() {
        if b.id != i + 1 {
            out.push(format!("bus ids must be 1..{n} in order; position {i} has id {}", b.id));
        }
    }
    if !out.is_empty() {
        return out;
    }
    match net.buses[0].parent {
        None => {}
        Some(p) => out.push(format!("bus 1 must be the root but has parent {p}")),
    }
    for b in net.buses.iter().skip(1) {
        match b.parent {
            None => out.push(format!("bus {} has no parent; only bus 1 may be the root", b.id)),
            Some(p) if p == 0 || p > n => out.push(format!("bus {} references missing parent {p}", b.id)),
            Some(p) if p == b.id => out.push(format!("bus {} is its own parent", b.id)),
            _ => {}
        }
    }
    if !out.is_empty() {
        return out;
    }
    // Walk to the root from every bus; a cycle shows up as a long walk.
    for b in net.buses.iter().skip(1) {
        let mut cur = b.id;
        let mut steps = 0;
        while cur != 1 {
            cur = net.buses[cur - 1].parent.unwrap_or(1);
            steps += 1;
            if steps > n {
                out.push(format!("cycle in parent relation reachable from bus {}", b.id));
                break;
            }
        }
    }
    if net.lines.len() != n - 1 {
        out.push(format!(
            "expected {} lines for {n} buses, found {}",
            n - 1,
            net.lines.len()
        ));
    }
    let mut seen = vec![false; n + 1];
    for l in &net.lines {
        if l.child_bus < 2 || l.child_bus > n {
            out.push(format!("line child bus {} out of range", l.child_bus));
        } else if seen[l.child_bus] {
            out.push(format!("duplicate line for child bus {}", l.child_bus));
        } else {
            seen[l.child_bus] = true;
        }
        if l.r < 0.0 || l.x < 0.0 {
            out.push(format!("line to bus {} has negative impedance", l.child_bus));
        }
    }
    for g in &net.generators {
        if g.bus == 0 || g.bus > n {
            out.push(format!("generator references missing bus {}", g.bus));
        }
        if g.p_min > g.p_max || g.q_min > g.q_max {
            out.push(format!("generator at bus {} has inverted bounds", g.bus));
        }
        let slopes: Vec<f64> = g.cost_pieces.iter().map(|&(_, s)| s).collect();
        if slopes.windows(2).any(|w| w[0] > w[1] + 1e-12) {
            out.push(format!("generator at bus {} has non-convex cost", g.bus));
        }
        if g.cost_pieces.is_empty() {
            out.push(format!("generator at bus {} has no cost pieces", g.bus));
        }
    }
    for r in &net.res_units {
        if r.bus == 0 || r.bus > n {
            out.push(format!("res unit references missing bus {}", r.bus));
        }
    }
    for s in &net.stations {
        if s.bus == 0 || s.bus > n {
            out.push(format!("station references missing bus {}", s.bus));
        }
        if !(0.0 <= s.soc_min && s.soc_min < s.soc_max) {
            out.push(format!("station at bus {} has invalid SoC box", s.bus));
        }
        if s.p_ch_max <= 0.0 || s.p_dch_max <= 0.0 {
            out.push(format!("station at bus {} has nonpositive power caps", s.bus));
        }
        if !(0.0 < s.eta_end && s.eta_end < 1.0) {
            out.push(format!("station at bus {} has eta_end outside (0,1)", s.bus));
        }
    }
    let horizon = net.buses[0].active_load.len();
    for b in &net.buses {
        if b.active_load.len() != horizon || b.reactive_load.len() != horizon {
            out.push(format!("bus {} load series length differs from bus 1", b.id));
        }
    }
    for s in &net.stations {
        if s.demand_forecast.len() != horizon {
            out.push(format!("station at bus {} demand series length mismatch", s.bus));
        }
    }
    if let Some(p) = &net.charging_price {
        if p.len() != horizon {
            out.push("charging price series length mismatch".into());
        }
    }
    if net.voltage_bounds.0 >= net.voltage_bounds.1 {
        out.push("voltage bounds are inverted".into());
    }
    if net.v0 <= 0.0 {
        out.push("v0 must be positive".into());
    }
    out
}

/// Path matrix: entry (i, j) is 1 iff line i lies on the root path of bus j.
/// Requires a validated network. The root's column is all zeros.
pub fn build_path_matrix(net: &Network) -> Vec<Vec<f64>> {
    let n = net.buses.len();
    let mut line_of_bus = vec![usize::MAX; n];
    for (li, l) in net.lines.iter().enumerate() {
        line_of_bus[l.child_bus - 1] = li;
    }
    let mut b = vec![vec![0.0; n]; net.lines.len()];
    for j in 1..n {
        let mut cur = j + 1;
        while cur != 1 {
            b[line_of_bus[cur - 1]][j] = 1.0;
            cur = net.buses[cur - 1].parent.expect("validated tree");
        }
    }
    b
}

/// Validated network with the derived path matrix and sensitivity products.
pub struct GridModel {
    pub net: Network,
    /// Path matrix, lines x buses.
    pub path: Vec<Vec<f64>>,
    /// `Bᵀ R B / v0`: voltage drop at bus k per unit of withdrawal at bus j.
    pub rsens: Vec<Vec<f64>>,
    /// `Bᵀ X B / v0`, the reactive analogue.
    pub xsens: Vec<Vec<f64>>,
    /// Line index feeding each bus; usize::MAX for the root.
    pub line_of_bus: Vec<usize>,
    /// Children of each bus.
    pub children: Vec<Vec<usize>>,
}

impl GridModel {
    pub fn new(net: Network) -> Result<GridModel, GridError> {
        let problems = validate_radial(&net);
        if !problems.is_empty() {
            return Err(GridError::Invalid(problems));
        }
        let n = net.buses.len();
        let path = build_path_matrix(&net);
        let mut line_of_bus = vec![usize::MAX; n];
        for (li, l) in net.lines.iter().enumerate() {
            line_of_bus[l.child_bus - 1] = li;
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for bus in net.buses.iter().skip(1) {
            children[bus.parent.unwrap() - 1].push(bus.id - 1);
        }
        // rsens[k][j] = sum over lines i of B[i][k] * r_i * B[i][j] / v0.
        let mut rsens = vec![vec![0.0; n]; n];
        let mut xsens = vec![vec![0.0; n]; n];
        for (li, l) in net.lines.iter().enumerate() {
            for k in 0..n {
                if path[li][k] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if path[li][j] != 0.0 {
                        rsens[k][j] += l.r / net.v0;
                        xsens[k][j] += l.x / net.v0;
                    }
                }
            }
        }
        Ok(GridModel {
            net,
            path,
            rsens,
            xsens,
            line_of_bus,
            children,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<GridModel, GridError> {
        let text = std::fs::read_to_string(path)?;
        let net: Network = serde_json::from_str(&text)?;
        GridModel::new(net)
    }

    pub fn num_buses(&self) -> usize {
        self.net.buses.len()
    }

    /// Buses in root-first topological order.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_buses());
        let mut stack = vec![0usize];
        while let Some(b) = stack.pop() {
            order.push(b);
            for &c in &self.children[b] {
                stack.push(c);
            }
        }
        order
    }

    /// Per-bus voltages from per-line flows by the parent recursion
    /// `V_child = V_parent - (r P + x Q)/v0`.
    pub fn lindistflow_voltage(&self, flow_p: &[f64], flow_q: &[f64], v_root: f64) -> Vec<f64> {
        let n = self.num_buses();
        let mut v = vec![0.0; n];
        for &b in &self.topological_order() {
            if b == 0 {
                v[0] = v_root;
                continue;
            }
            let li = self.line_of_bus[b];
            let line = &self.net.lines[li];
            let parent = self.net.buses[b].parent.unwrap() - 1;
            v[b] = v[parent] - (line.r * flow_p[li] + line.x * flow_q[li]) / self.net.v0;
        }
        v
    }

    /// Linear map from the RES forecast errors to the voltage perturbation
    /// at bus k, given the per-bus reserve distribution factors.
    pub fn voltage_sensitivity(&self, alpha: &[f64], k: usize) -> Result<Vec<f64>, GridError> {
        let n = self.num_buses();
        if alpha.len() != n {
            return Err(GridError::BadAlpha(format!(
                "expected {n} factors, got {}",
                alpha.len()
            )));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 || alpha.iter().any(|&a| !(-1e-12..=1.0 + 1e-12).contains(&a)) {
            return Err(GridError::BadAlpha(format!("sum {total}, entries must lie in [0,1]")));
        }
        let row = &self.rsens[k];
        let row_dot_alpha: f64 = row.iter().zip(alpha).map(|(r, a)| r * a).sum();
        Ok(self
            .net
            .res_units
            .iter()
            .map(|r| row[r.bus - 1] - row_dot_alpha)
            .collect())
    }
}

/// One slot of dispatch quantities, all in full per-bus or per-line vectors.
pub struct SlotDispatch<'a> {
    /// Active / reactive flow per line.
    pub line_p: &'a [f64],
    pub line_q: &'a [f64],
    /// Generator injections per bus (zero where no generator).
    pub gen_p: &'a [f64],
    pub gen_q: &'a [f64],
    /// RES injection per bus.
    pub res_p: &'a [f64],
    /// Charging-station draw per bus.
    pub station_p: &'a [f64],
    /// Loads per bus.
    pub load_p: &'a [f64],
    pub load_q: &'a [f64],
}

/// Per-bus active and reactive power-balance residuals. The flow into a bus
/// must equal its downstream flows plus local withdrawal; the root uses zero
/// inflow, which makes its residual the whole-network balance check.
pub fn power_balance_residual(grid: &GridModel, d: &SlotDispatch) -> (Vec<f64>, Vec<f64>) {
    let n = grid.num_buses();
    let mut res_p = vec![0.0; n];
    let mut res_q = vec![0.0; n];
    for k in 0..n {
        let inflow_p = if k == 0 { 0.0 } else { d.line_p[grid.line_of_bus[k]] };
        let inflow_q = if k == 0 { 0.0 } else { d.line_q[grid.line_of_bus[k]] };
        let down_p: f64 = grid.children[k].iter().map(|&c| d.line_p[grid.line_of_bus[c]]).sum();
        let down_q: f64 = grid.children[k].iter().map(|&c| d.line_q[grid.line_of_bus[c]]).sum();
        res_p[k] = inflow_p - (down_p - d.gen_p[k] - d.res_p[k] + d.station_p[k] + d.load_p[k]);
        res_q[k] = inflow_q - (down_q - d.gen_q[k] + d.load_q[k]);
    }
    (res_p, res_q)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Chain 1 -> 2 -> ... -> n with unit loads and simple impedances.
    pub(crate) fn chain(n: usize) -> Network {
        Network {
            name: format!("chain{n}"),
            base_mva: 1.0,
            v0: 1.0,
            voltage_bounds: (0.9, 1.1),
            buses: (1..=n)
                .map(|id| Bus {
                    id,
                    parent: if id == 1 { None } else { Some(id - 1) },
                    active_load: vec![0.1],
                    reactive_load: vec![0.05],
                })
                .collect(),
            lines: (2..=n)
                .map(|id| Line {
                    child_bus: id,
                    r: 0.01 * id as f64,
                    x: 0.005 * id as f64,
                })
                .collect(),
            generators: vec![],
            res_units: vec![],
            stations: vec![],
            charging_price: None,
        }
    }

    fn star3() -> Network {
        let mut net = chain(3);
        net.buses[2].parent = Some(1);
        net.lines = vec![
            Line { child_bus: 2, r: 0.02, x: 0.01 },
            Line { child_bus: 3, r: 0.03, x: 0.015 },
        ];
        net
    }

    #[test]
    fn chain_path_matrix_is_upper_triangular_ones() {
        for n in 2..=10 {
            let net = chain(n);
            assert!(validate_radial(&net).is_empty());
            let b = build_path_matrix(&net);
            for (i, row) in b.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    // Line i feeds bus i+1; it lies on the path of every
                    // deeper bus.
                    let want = if j >= i + 1 { 1.0 } else { 0.0 };
                    assert_eq!(v, want, "n={n} line {i} bus {j}");
                }
            }
        }
    }

    #[test]
    fn star_path_matrix_matches_hand_result() {
        let b = build_path_matrix(&star3());
        assert_eq!(b, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn path_matrix_column_sums_equal_bus_depth() {
        let net = chain(7);
        let b = build_path_matrix(&net);
        for j in 0..7 {
            let depth: f64 = (0..6).map(|i| b[i][j]).sum();
            assert_eq!(depth, j as f64);
        }
    }

    #[test]
    fn path_matrix_matches_bfs_enumeration_on_random_trees() {
        // Random trees: each bus's parent is drawn among earlier buses.
        let mut state = 0x1234_5678_9abc_def0_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for trial in 0..10 {
            let n = 5 + (next() % 30) as usize;
            let mut net = chain(n);
            for id in 3..=n {
                let p = 1 + (next() % (id as u64 - 1)) as usize;
                net.buses[id - 1].parent = Some(p);
            }
            net.lines = (2..=n)
                .map(|id| Line { child_bus: id, r: 0.01, x: 0.005 })
                .collect();
            assert!(validate_radial(&net).is_empty(), "trial {trial}");
            let b = build_path_matrix(&net);
            // Independent check: walk up from each bus collecting lines.
            for j in 1..n {
                let mut on_path = vec![false; n - 1];
                let mut cur = j + 1;
                while cur != 1 {
                    on_path[cur - 2] = true;
                    cur = net.buses[cur - 1].parent.unwrap();
                }
                for li in 0..n - 1 {
                    let child = net.lines[li].child_bus;
                    let want = if on_path[child - 2] { 1.0 } else { 0.0 };
                    assert_eq!(b[li][j], want, "trial {trial} line {li} bus {j}");
                }
            }
        }
    }

    #[test]
    fn validate_flags_cycles_and_dangling_references() {
        let mut net = chain(3);
        net.buses[1].parent = Some(3);
        net.buses[2].parent = Some(2);
        let problems = validate_radial(&net);
        assert!(problems.iter().any(|p| p.contains("cycle")), "{problems:?}");

        let mut net2 = chain(3);
        net2.generators.push(Generator {
            bus: 99,
            p_min: 0.0,
            p_max: 1.0,
            q_min: -1.0,
            q_max: 1.0,
            cost_pieces: vec![(0.0, 10.0)],
        });
        let problems2 = validate_radial(&net2);
        assert!(
            problems2.iter().any(|p| p.contains("missing bus 99")),
            "{problems2:?}"
        );
    }

    #[test]
    fn single_line_voltage_drop_matches_hand_arithmetic() {
        let mut net = chain(2);
        net.lines[0] = Line { child_bus: 2, r: 0.05, x: 0.02 };
        let grid = GridModel::new(net).unwrap();
        let v = grid.lindistflow_voltage(&[1.0], &[0.5], 1.0);
        assert!((v[1] - 0.94).abs() < 1e-12, "{}", v[1]);
    }

    #[test]
    fn zero_flows_leave_voltages_at_root_value() {
        let grid = GridModel::new(chain(6)).unwrap();
        let v = grid.lindistflow_voltage(&[0.0; 5], &[0.0; 5], 1.02);
        assert!(v.iter().all(|&x| (x - 1.02).abs() < 1e-15));
    }

    #[test]
    fn recursion_matches_matrix_form_on_random_flows() {
        let mut net = chain(5);
        net.buses[3].parent = Some(2);
        net.buses[4].parent = Some(2);
        net.lines = (2..=5)
            .map(|id| Line { child_bus: id, r: 0.01 * id as f64, x: 0.007 * id as f64 })
            .collect();
        let grid = GridModel::new(net).unwrap();
        let p = [0.8, -0.3, 0.5, 0.2];
        let q = [0.1, 0.4, -0.2, 0.05];
        let v = grid.lindistflow_voltage(&p, &q, 1.0);
        // Matrix form: V = v_root 1 - Bᵀ(R P + X Q)/v0.
        for k in 0..5 {
            let mut drop = 0.0;
            for (li, line) in grid.net.lines.iter().enumerate() {
                drop += grid.path[li][k] * (line.r * p[li] + line.x * q[li]);
            }
            let want = 1.0 - drop / grid.net.v0;
            assert!((v[k] - want).abs() < 1e-12, "bus {k}: {} vs {want}", v[k]);
        }
    }

    #[test]
    fn voltage_perturbation_identity_holds_under_monte_carlo() {
        // Identity: Ṽ - V = Bᵀ R B (ξ_full - α eᵀξ)/v0, where ξ_full places
        // the errors at their buses and generators absorb via α.
        let mut net = chain(6);
        net.res_units = vec![
            ResUnit { bus: 3, forecast: None, error_support: None },
            ResUnit { bus: 5, forecast: None, error_support: None },
        ];
        let grid = GridModel::new(net).unwrap();
        let n = 6;
        let mut state = 0xfeed_beef_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            // Random simplex alpha over buses 1 and 2, random errors.
            let a0 = next();
            let alpha = [a0, 1.0 - a0, 0.0, 0.0, 0.0, 0.0];
            let xi = [next() - 0.5, next() - 0.5];
            let xi_full = {
                let mut v = vec![0.0; n];
                v[2] = xi[0];
                v[4] = xi[1];
                v
            };
            let total: f64 = xi.iter().sum();
            // Direct route: withdrawals change by -(ξ_full - α total);
            // recompute flows and voltages by recursion.
            let base_w = vec![0.2; n];
            let flows = |w: &[f64]| -> (Vec<f64>, Vec<f64>) {
                let np = grid.net.lines.len();
                let mut fp = vec![0.0; np];
                for (li, _) in grid.net.lines.iter().enumerate() {
                    for j in 0..n {
                        fp[li] += grid.path[li][j] * w[j];
                    }
                }
                (fp, vec![0.0; np])
            };
            let (fp0, fq0) = flows(&base_w);
            let v_base = grid.lindistflow_voltage(&fp0, &fq0, 1.0);
            let w_pert: Vec<f64> = (0..n)
                .map(|j| base_w[j] - xi_full[j] + alpha[j] * total)
                .collect();
            let (fp1, fq1) = flows(&w_pert);
            let v_pert = grid.lindistflow_voltage(&fp1, &fq1, 1.0);
            // Matrix route via rsens.
            for k in 0..n {
                let mut want = 0.0;
                for j in 0..n {
                    want += grid.rsens[k][j] * (xi_full[j] - alpha[j] * total);
                }
                let got = v_pert[k] - v_base[k];
                assert!((got - want).abs() < 1e-9, "bus {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sensitivity_of_two_bus_net_matches_explicit_product() {
        let mut net = chain(2);
        net.lines[0] = Line { child_bus: 2, r: 0.04, x: 0.01 };
        net.res_units = vec![ResUnit { bus: 2, forecast: None, error_support: None }];
        let grid = GridModel::new(net).unwrap();
        // All reserve at bus 2: B = [0 1], BᵀRB = [[0,0],[0,0.04]].
        let mu = grid.voltage_sensitivity(&[0.0, 1.0], 1).unwrap();
        // mu[res at bus 2] = rsens[1][1] - rsens[1][:]·α = 0.04 - 0.04 = 0.
        assert!((mu[0] - 0.0).abs() < 1e-15);
        // All reserve at the root instead.
        let mu2 = grid.voltage_sensitivity(&[1.0, 0.0], 1).unwrap();
        assert!((mu2[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_resistance_kills_sensitivity() {
        let mut net = chain(4);
        for l in &mut net.lines {
            l.r = 0.0;
        }
        net.res_units = vec![ResUnit { bus: 4, forecast: None, error_support: None }];
        let grid = GridModel::new(net).unwrap();
        for k in 0..4 {
            let mu = grid.voltage_sensitivity(&[1.0, 0.0, 0.0, 0.0], k).unwrap();
            assert_eq!(mu[0], 0.0, "bus {k}");
        }
    }

    #[test]
    fn sensitivity_matches_finite_difference_on_five_bus_tree() {
        let mut net = chain(5);
        net.buses[4].parent = Some(2);
        net.lines = (2..=5)
            .map(|id| Line { child_bus: id, r: 0.012 * id as f64, x: 0.004 * id as f64 })
            .collect();
        net.res_units = vec![
            ResUnit { bus: 2, forecast: None, error_support: None },
            ResUnit { bus: 5, forecast: None, error_support: None },
        ];
        let grid = GridModel::new(net).unwrap();
        let alpha = [0.3, 0.0, 0.45, 0.25, 0.0];
        let n = 5;
        let base_w = vec![0.15; n];
        let volts = |xi: &[f64; 2]| -> Vec<f64> {
            let xi_full = {
                let mut v = vec![0.0; n];
                v[1] = xi[0];
                v[4] = xi[1];
                v
            };
            let total = xi[0] + xi[1];
            let w: Vec<f64> = (0..n)
                .map(|j| base_w[j] - xi_full[j] + alpha[j] * total)
                .collect();
            let mut fp = vec![0.0; n - 1];
            for li in 0..n - 1 {
                for j in 0..n {
                    fp[li] += grid.path[li][j] * w[j];
                }
            }
            grid.lindistflow_voltage(&fp, &vec![0.0; n - 1], 1.0)
        };
        let delta = 1e-6;
        for k in 0..n {
            let mu = grid.voltage_sensitivity(&alpha, k).unwrap();
            for dim in 0..2 {
                let mut lo = [0.0; 2];
                let mut hi = [0.0; 2];
                lo[dim] = -delta;
                hi[dim] = delta;
                let fd = (volts(&hi)[k] - volts(&lo)[k]) / (2.0 * delta);
                assert!(
                    (fd - mu[dim]).abs() < 1e-9,
                    "bus {k} dim {dim}: fd {fd} vs mu {}",
                    mu[dim]
                );
            }
        }
    }

    #[test]
    fn sensitivity_rejects_non_simplex_factors() {
        let grid = GridModel::new(chain(3)).unwrap();
        assert!(grid.voltage_sensitivity(&[0.5, 0.2, 0.0], 1).is_err());
        assert!(grid.voltage_sensitivity(&[1.5, -0.5, 0.0], 1).is_err());
    }

    #[test]
    fn balanced_two_bus_dispatch_has_zero_residual() {
        let mut net = chain(2);
        net.generators.push(Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 10.0,
            q_min: -10.0,
            q_max: 10.0,
            cost_pieces: vec![(0.0, 10.0)],
        });
        let grid = GridModel::new(net).unwrap();
        // Bus 2 needs 0.1 + j0.05; the line carries exactly that; the root
        // generator supplies its own load plus the line flow.
        let d = SlotDispatch {
            line_p: &[0.1],
            line_q: &[0.05],
            gen_p: &[0.2, 0.0],
            gen_q: &[0.1, 0.0],
            res_p: &[0.0, 0.0],
            station_p: &[0.0, 0.0],
            load_p: &[0.1, 0.1],
            load_q: &[0.05, 0.05],
        };
        let (rp, rq) = power_balance_residual(&grid, &d);
        for k in 0..2 {
            assert!(rp[k].abs() < 1e-15, "bus {k}: {}", rp[k]);
            assert!(rq[k].abs() < 1e-15, "bus {k}: {}", rq[k]);
        }
    }

    #[test]
    fn residual_is_linear_in_generator_injection() {
        let mut net = chain(2);
        net.generators.push(Generator {
            bus: 2,
            p_min: 0.0,
            p_max: 1.0,
            q_min: 0.0,
            q_max: 1.0,
            cost_pieces: vec![(0.0, 5.0)],
        });
        let grid = GridModel::new(net).unwrap();
        let base = SlotDispatch {
            line_p: &[0.1],
            line_q: &[0.05],
            gen_p: &[0.2, 0.0],
            gen_q: &[0.1, 0.0],
            res_p: &[0.0, 0.0],
            station_p: &[0.0, 0.0],
            load_p: &[0.1, 0.1],
            load_q: &[0.05, 0.05],
        };
        let (rp0, _) = power_balance_residual(&grid, &base);
        let bumped = SlotDispatch { gen_p: &[0.2, 0.1], ..base };
        let (rp1, _) = power_balance_residual(&grid, &bumped);
        assert!((rp1[1] - rp0[1] - 0.1).abs() < 1e-15);
        assert!((rp1[0] - rp0[0]).abs() < 1e-15);
    }

    #[test]
    fn residual_superposition_holds() {
        let grid = GridModel::new(chain(4)).unwrap();
        let za = [0.3, -0.1, 0.2];
        let zb = [0.05, 0.6, -0.4];
        let zs: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| a + b).collect();
        let zero4 = [0.0; 4];
        let load_p = [0.1; 4];
        let load_q = [0.05; 4];
        let eval = |lp: &[f64]| -> Vec<f64> {
            let d = SlotDispatch {
                line_p: lp,
                line_q: &[0.0; 3],
                gen_p: &zero4,
                gen_q: &zero4,
                res_p: &zero4,
                station_p: &zero4,
                load_p: &load_p,
                load_q: &load_q,
            };
            power_balance_residual(&grid, &d).0
        };
        let ra = eval(&za);
        let rb = eval(&zb);
        let rs = eval(&zs);
        let r0 = eval(&[0.0; 3]);
        for k in 0..4 {
            // Residual is affine in flows; differences superpose.
            let want = (ra[k] - r0[k]) + (rb[k] - r0[k]) + r0[k];
            assert!((rs[k] - want).abs() < 1e-12, "bus {k}");
        }
    }

    #[test]
    fn piecewise_cost_integrates_segments() {
        let g = Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 0.9,
            q_min: 0.0,
            q_max: 0.0,
            cost_pieces: vec![(0.0, 10.0), (0.3, 20.0), (0.6, 40.0)],
        };
        assert_eq!(g.cost_at(0.0), 0.0);
        assert!((g.cost_at(0.2) - 2.0).abs() < 1e-12);
        assert!((g.cost_at(0.3) - 3.0).abs() < 1e-12);
        assert!((g.cost_at(0.5) - 7.0).abs() < 1e-12);
        assert!((g.cost_at(0.9) - 21.0).abs() < 1e-12);
        // Affine pieces reproduce the curve as their max.
        let pieces = g.cost_affine_pieces();
        for &p in &[0.0, 0.1, 0.3, 0.45, 0.6, 0.75, 0.9] {
            let via_max = pieces
                .iter()
                .map(|&(s, b)| s * p + b)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((via_max - g.cost_at(p)).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn network_roundtrips_through_json() {
        let mut net = chain(3);
        net.stations.push(Station {
            bus: 2,
            soc_min: 0.0,
            soc_max: 0.3,
            p_ch_max: 0.1,
            p_dch_max: 0.1,
            demand_forecast: vec![0.05],
            battery_cost: 45000.0,
            eta_end: 0.8,
            b1: 1e-4,
            b2: 0.0,
            i_c: 1.0,
            delta_t: 1.0,
        });
        let text = serde_json::to_string_pretty(&net).unwrap();
        let back: Network = serde_json::from_str(&text).unwrap();
        assert!(validate_radial(&back).is_empty());
        assert_eq!(back.stations[0].battery_cost, 45000.0);
    }
}
