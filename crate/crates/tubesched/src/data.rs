//! Uncertainty data: empirical sample sets, ambiguity-ball supports,
//! disturbance sequences, and the CSV formats they travel in.
//!
//! Two kinds of uncertainty flow through the pipeline. Static uncertainty is
//! a set of joint samples (renewable forecast errors, one column per
//! dimension); dynamic uncertainty is a set of disturbance sequences over a
//! horizon (charging-demand deviations, one row per sequence). Both carry
//! box supports estimated from the data, inflated by a safety margin.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty sample set")]
    Empty,
    #[error("ragged data: {0}")]
    BadShape(String),
    #[error("bad split: {0}")]
    BadSplit(String),
    #[error("csv read/write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse value: {0}")]
    Parse(String),
}

/// Joint samples of a static uncertain vector, row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// Column names, e.g. `bus6_t0`.
    pub names: Vec<String>,
    /// N rows of `names.len()` values each.
    pub rows: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<SampleSet, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let dim = names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(DataError::BadShape(format!(
                    "row {i} has {} values, header has {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(DataError::BadShape(format!("row {i} has a non-finite value")));
            }
        }
        Ok(SampleSet { names, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-column means; the forecast when rows are raw observations.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for r in &self.rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// New set holding only the chosen columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> SampleSet {
        SampleSet {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// Subtract per-column values, turning observations into errors.
    pub fn centered(&self, center: &[f64]) -> SampleSet {
        SampleSet {
            names: self.names.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().zip(center).map(|(v, c)| v - c).collect())
                .collect(),
        }
    }

    /// Componentwise box support: data extremes widened by `margin` times
    /// the observed width on each side. A degenerate column gets a small
    /// absolute pad so the box keeps positive volume. With `include_zero`
    /// the box is stretched to contain the origin, which error vectors
    /// always admit.
    pub fn inflated_support(&self, margin: f64, include_zero: bool) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|j| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for r in &self.rows {
                    lo = lo.min(r[j]);
                    hi = hi.max(r[j]);
                }
                let width = hi - lo;
                let pad = if width > 0.0 {
                    margin * width
                } else {
                    margin * lo.abs().max(1.0)
                };
                let (mut lo, mut hi) = (lo - pad, hi + pad);
                if include_zero {
                    lo = lo.min(0.0);
                    hi = hi.max(0.0);
                }
                (lo, hi)
            })
            .collect()
    }

    /// Disjoint (train, test) split by shuffled indices; reproducible for a
    /// given seed. Fails when either side would be empty.
    pub fn split_train_test(&self, fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet), DataError> {
        let (a, b) = split_indices(self.len(), fraction, seed)?;
        let take = |idx: &[usize]| SampleSet {
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        };
        Ok((take(&a), take(&b)))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<SampleSet, DataError> {
        let mut r = csv::Reader::from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row: Result<Vec<f64>, _> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| DataError::Parse(s.to_string())))
                .collect();
            rows.push(row?);
        }
        SampleSet::new(names, rows)
    }
}

/// Uniform weights of an empirical distribution over `points`.
pub fn empirical_distribution(points: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, f64)>, DataError> {
    if points.is_empty() {
        return Err(DataError::Empty);
    }
    let w = 1.0 / points.len() as f64;
    Ok(points.iter().map(|p| (p.clone(), w)).collect())
}

/// Type-1 Wasserstein distance between two scalar empirical distributions,
/// by quantile coupling: sort both samples and integrate the gap between
/// the quantile functions. Handles unequal sample counts exactly.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, DataError> {
    if a.is_empty() || b.is_empty() {
        return Err(DataError::Empty);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as u128, sb.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u_num = 0u128; // current position as a fraction over na*nb
    let denom = na * nb;
    let mut total = 0.0;
    while i < sa.len() && j < sb.len() {
        // Next boundaries of the two step functions, as fractions of denom.
        let ba = (i as u128 + 1) * nb;
        let bb = (j as u128 + 1) * na;
        let next = ba.min(bb);
        total += ((next - u_num) as f64 / denom as f64) * (sa[i] - sb[j]).abs();
        u_num = next;
        if ba == next {
            i += 1;
        }
        if bb == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Ambiguity ball around an empirical distribution: radius plus the box
/// support the worst case may move mass within.
#[derive(Clone, Debug)]
pub struct WassersteinBall {
    pub epsilon: f64,
    pub support: Vec<(f64, f64)>,
}

impl WassersteinBall {
    pub fn new(epsilon: f64, support: Vec<(f64, f64)>) -> Result<WassersteinBall, DataError> {
        if epsilon < 0.0 || !epsilon.is_finite() {
            return Err(DataError::BadShape(format!("radius {epsilon} must be finite and >= 0")));
        }
        for (i, &(lo, hi)) in support.iter().enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DataError::BadShape(format!("support dim {i}: [{lo}, {hi}]")));
            }
        }
        Ok(WassersteinBall { epsilon, support })
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }
}

/// Disturbance sequences for charging stations: `n` rows, each holding
/// `horizon` values per station, stored station-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceDataset {
    /// Bus ids of the stations, in column order.
    pub station_buses: Vec<usize>,
    pub horizon: usize,
    /// n x (stations * horizon); entry (s, t) lives at s * horizon + t.
    pub rows: Vec<Vec<f64>>,
}

impl DisturbanceDataset {
    pub fn new(
        station_buses: Vec<usize>,
        horizon: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<DisturbanceDataset, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let width = station_buses.len() * horizon;
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(DataError::BadShape(format!(
                    "row {i} has {} values, expected {width}",
                    r.len()
                )));
            }
        }
        Ok(DisturbanceDataset { station_buses, horizon, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_stations(&self) -> usize {
        self.station_buses.len()
    }

    pub fn value(&self, seq: usize, station: usize, t: usize) -> f64 {
        self.rows[seq][station * self.horizon + t]
    }

    /// All sequences' values for one station and slot.
    pub fn slot_samples(&self, station: usize, t: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[station * self.horizon + t]).collect()
    }

    /// Per-(station, slot) box support from data extremes, padded like
    /// `SampleSet::inflated_support` and stretched to contain zero.
    pub fn slot_supports(&self, margin: f64) -> Vec<Vec<(f64, f64)>> {
        (0..self.num_stations())
            .map(|s| {
                (0..self.horizon)
                    .map(|t| {
                        let vals = self.slot_samples(s, t);
                        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let width = hi - lo;
                        let pad = if width > 0.0 { margin * width } else { margin * lo.abs().max(1.0) };
                        ((lo - pad).min(0.0), (hi + pad).max(0.0))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn split_train_test(
        &self,
        fraction: f64,
        seed: u64,
    ) -> Result<(DisturbanceDataset, DisturbanceDataset), DataError> {
        let (a, b) = split_indices(self.len(), fraction, seed)?;
        let take = |idx: &[usize]| DisturbanceDataset {
            station_buses: self.station_buses.clone(),
            horizon: self.horizon,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        };
        Ok((take(&a), take(&b)))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = Vec::new();
        for &bus in &self.station_buses {
            for t in 0..self.horizon {
                header.push(format!("s{bus}_t{t}"));
            }
        }
        w.write_record(&header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<DisturbanceDataset, DataError> {
        let mut r = csv::Reader::from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        // Header pattern s<bus>_t<slot>, station-major with slots 0..T-1.
        let mut station_buses = Vec::new();
        let mut horizon = 0usize;
        for name in &names {
            let (bus_part, t_part) = name
                .strip_prefix('s')
                .and_then(|rest| rest.split_once("_t"))
                .ok_or_else(|| DataError::Parse(format!("bad disturbance column name {name}")))?;
            let bus: usize = bus_part.parse().map_err(|_| DataError::Parse(name.clone()))?;
            let t: usize = t_part.parse().map_err(|_| DataError::Parse(name.clone()))?;
            if t == 0 {
                station_buses.push(bus);
            }
            if station_buses.len() == 1 {
                horizon = horizon.max(t + 1);
            }
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row: Result<Vec<f64>, _> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| DataError::Parse(s.to_string())))
                .collect();
            rows.push(row?);
        }
        DisturbanceDataset::new(station_buses, horizon, rows)
    }
}

/// `n` iid disturbance sequences: each slot draws uniformly from
/// `[-radius * forecast, +radius * forecast]` around zero. One forecast
/// series per station. Deterministic for a given seed.
pub fn generate_disturbances(
    station_buses: &[usize],
    forecasts: &[Vec<f64>],
    radius: f64,
    n: usize,
    seed: u64,
) -> Result<DisturbanceDataset, DataError> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    if station_buses.len() != forecasts.len() {
        return Err(DataError::BadShape(format!(
            "{} stations but {} forecast series",
            station_buses.len(),
            forecasts.len()
        )));
    }
    let horizon = forecasts.first().map(|f| f.len()).unwrap_or(0);
    if forecasts.iter().any(|f| f.len() != horizon) {
        return Err(DataError::BadShape("forecast series lengths differ".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            forecasts
                .iter()
                .flat_map(|f| {
                    f.iter()
                        .map(|&v| {
                            let half = radius * v.abs();
                            if half == 0.0 {
                                0.0
                            } else {
                                rng.gen_range(-half..=half)
                            }
                        })
                        .collect::<Vec<f64>>()
                })
                .collect()
        })
        .collect();
    DisturbanceDataset::new(station_buses.to_vec(), horizon, rows)
}

/// Shuffled disjoint index split; the first part gets `round(fraction * n)`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::BadSplit(format!("fraction {fraction} outside [0,1]")));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(DataError::BadSplit(format!(
            "fraction {fraction} of {n} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_5011);
    // Fisher-Yates, explicit so the order is stable across rand versions.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let tail = idx.split_off(k);
    Ok((idx, tail))
}
