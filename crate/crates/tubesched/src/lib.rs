//! Tube-based distributionally robust scheduling for radial distribution
//! feeders.
//!
//! The crate splits the scheduling problem in two stages. An offline stage
//! sizes an ambiguity tube for the slow disturbances (charging-station load
//! drift) and tightens the operating constraints accordingly. An online
//! receding-horizon stage dispatches generators, storage and reserve
//! participation factors each slot, pricing renewable forecast error through
//! conditional value-at-risk robustified over a Wasserstein ball around the
//! empirical forecast-error distribution.
//!
//! Module map:
//! - [`lp`]: sparse revised-simplex linear programming with a builder API;
//! - [`grid`]: radial network model, path matrix, linearized power flow;
//! - [`data`]: sample sets, empirical distributions, CSV interchange;
//! - [`dro`]: worst-case expectation over a Wasserstein ball (exact dual and
//!   an accelerated upper bound);
//! - [`tube`]: closed-loop error propagation and offline tube sizing;
//! - [`sched`]: the slot-level dispatch program and receding-horizon loop;
//! - [`harness`]: scenario evaluation, method comparison, result tables.

pub mod data;
pub mod dro;
pub mod grid;
pub mod harness;
pub mod lp;
pub mod sched;
pub mod tube;
