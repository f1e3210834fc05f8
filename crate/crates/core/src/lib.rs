//! Lagrangian solver for the two-component cubic peakon system
//! `mt = ((u−ux)(v+vx)m)x`, `nt = ((u−ux)(v+vx)n)x`, `m = u − uxx`, `n = v − vxx`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod charkernel;
pub mod config;
pub mod error;
pub mod evolution;
pub mod export;
pub mod fields;
pub mod initdata;
pub mod interp;
pub mod oracle;
pub mod scenario;
pub mod stencil;

pub use blowup::{
    monitor, rate_check, sufficient_condition, BlowupReport, SufficientConditionResult, Verdict,
};
pub use charkernel::{compute_uwvz, scan_j1_j2, CellRule, KernelFields};
pub use config::{RunConfig, Scenario};
pub use error::{Error, Result};
pub use evolution::{
    admissible_time, evolve, picard_solve, CharState, EvolveConfig, Termination, Trajectory,
};
pub use fields::{reconstruct_dt, reconstruct_mn, reconstruct_uv, FieldSnapshot};
pub use initdata::{build_grid, FieldSource, Grid, InitialData, ReferenceMap};
pub use scenario::{run_scenario, RunStatus};
