//! Drivers behind the command-line subcommands: full runs, the Lipschitz
//! experiment, reduction checks, blow-up scans and oracle comparisons.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup::{
    monitor_trajectory, rate_check, sufficient_condition, RateCheck, SufficientConditionResult,
    Verdict,
};
use crate::config::{build_data, DataForm, Integrator, RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::evolution::{
    admissible_time, evolve, picard_solve, picard_trajectory, AdmissibleTime, CharState,
    Termination, Trajectory,
};
use crate::export;
use crate::fields::{reconstruct_mn, reconstruct_uv, snapshot, FieldSnapshot};
use crate::initdata::{xk_norm, InitialData};
use crate::oracle::{cross_validate, eulerian_evolve, Agreement, SpectralBox};
use crate::stencil::sup_diff;

/// Overall outcome of a run, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Horizon,
    Collapse,
    Failed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Horizon => 0,
            RunStatus::Collapse => 2,
            RunStatus::Failed => 1,
        }
    }

    fn of(t: &Termination) -> Self {
        match t {
            Termination::Horizon => RunStatus::Horizon,
            Termination::JacobianCollapse { .. } => RunStatus::Collapse,
            Termination::DtUnderflow { .. } | Termination::Error { .. } => RunStatus::Failed,
        }
    }

    fn worst(self, other: Self) -> Self {
        use RunStatus::*;
        match (self, other) {
            (Failed, _) | (_, Failed) => Failed,
            (Collapse, _) | (_, Collapse) => Collapse,
            _ => Horizon,
        }
    }
}

/// Integrates one direction (`sign` = ±1) with the configured integrator.
pub fn simulate(cfg: &RunConfig, data: &InitialData, sign: f64) -> Result<Trajectory> {
    let ecfg = cfg.evolve_config(sign);
    match cfg.integrator {
        Integrator::Rk4 => evolve(data, &ecfg),
        Integrator::Picard => {
            let h = ecfg.horizon;
            let tol = &cfg.tolerances;
            let adm = admissible_time(data, tol.c, tol.l)
                .map_err(|e| Error::config("tolerances.c", e.to_string()))?;
            if h.abs() > adm.value {
                return Err(Error::config(
                    if sign < 0.0 { "time.backward_horizon" } else { "time.horizon" },
                    format!(
                        "picard horizon {} exceeds the contraction-horizon bound T = {:e} (c = {}, l = {})",
                        h.abs(),
                        adm.value,
                        tol.c,
                        tol.l
                    ),
                ));
            }
            let samples = tol
                .picard_samples
                .max((h.abs() / cfg.time.dt).ceil() as usize + 1);
            let out = picard_solve(data, h, samples, tol.picard_tol, tol.picard_max_iter)?;
            log::info!(
                "picard converged in {} iterations, last ratio {:?}",
                out.iterations(),
                out.ratios.last()
            );
            picard_trajectory(data, &out.path)
        }
    }
}

/// Uniform snapshot nodes on `[−L, L]`.
pub fn snapshot_nodes(cfg: &RunConfig) -> Vec<f64> {
    let n = if cfg.output.snapshot_points >= 2 {
        cfg.output.snapshot_points
    } else {
        cfg.grid.n_points
    };
    let l = cfg.grid.half_width;
    (0..n)
        .map(|i| l * (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64)
        .collect()
}

/// Stored state closest to `t`; exact for RK4 stop times.
fn nearest_state(states: &[CharState], t: f64) -> Option<&CharState> {
    states
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

/// Snapshots at the requested times; times not covered by `states` are skipped.
pub fn snapshots_from_states(
    cfg: &RunConfig,
    data: &InitialData,
    states: &[CharState],
    times: &[f64],
) -> Result<Vec<FieldSnapshot>> {
    let xs = snapshot_nodes(cfg);
    let mut out = Vec::new();
    for &t in times {
        let (lo, hi) = states
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
                (a.min(s.t), b.max(s.t))
            });
        if t < lo - 1e-12 || t > hi + 1e-12 {
            log::warn!(
                "snapshot time {t} lies outside the computed interval [{lo}, {hi}]; skipped"
            );
            continue;
        }
        let s = nearest_state(states, t).expect("non-empty");
        if (s.t - t).abs() > 1e-12 {
            log::warn!(
                "snapshot requested at t = {t}, using stored state at t = {}",
                s.t
            );
        }
        out.push(snapshot(
            s,
            &xs,
            data,
            cfg.tolerances.jacobian_floor,
            cfg.output.time_derivatives,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub horizon: f64,
    pub termination: Termination,
    pub final_time: f64,
    pub stored_states: usize,
    pub max_res_m: f64,
    pub max_res_n: f64,
    pub max_jacobian_discrepancy: f64,
    pub bounds_ok: bool,
}

impl DirectionSummary {
    fn of(t: &Trajectory, horizon: f64) -> Self {
        let d = &t.diagnostics;
        let max = |f: &dyn Fn(&crate::evolution::StepDiagnostics) -> f64| {
            d.iter().map(f).fold(0.0, f64::max)
        };
        DirectionSummary {
            horizon,
            termination: t.termination.clone(),
            final_time: t.final_time,
            stored_states: t.states.len(),
            max_res_m: max(&|s| s.res_m),
            max_res_n: max(&|s| s.res_n),
            max_jacobian_discrepancy: max(&|s| s.jacobian_discrepancy),
            bounds_ok: d.iter().all(|s| s.size_bound_ok && s.jacobian_bound_ok),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub scenario: Scenario,
    pub integrator: Integrator,
    pub admissible_time: Option<AdmissibleTime>,
    pub sufficient_condition: Option<SufficientConditionResult>,
    pub forward: Option<DirectionSummary>,
    pub backward: Option<DirectionSummary>,
    pub snapshots: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub data: InitialData,
    pub forward: Option<Trajectory>,
    pub backward: Option<Trajectory>,
    pub snapshots: Vec<FieldSnapshot>,
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:+.6}.tsv")
}

fn write_direction(
    dir: &Path,
    name: &str,
    cfg: &RunConfig,
    data: &InitialData,
    traj: &Trajectory,
) -> Result<()> {
    let sub = dir.join(name);
    fs::create_dir_all(&sub)?;
    export::write_diagnostics(create(sub.join("diagnostics.tsv"))?, &traj.diagnostics)?;
    export::write_reports(
        create(sub.join("reports.tsv"))?,
        &monitor_trajectory(traj, data),
    )?;
    if cfg.output.checkpoints {
        export::write_checkpoints(
            create(sub.join("checkpoints.jsonl"))?,
            &traj.states,
            &traj.diagnostics,
        )?;
    }
    Ok(())
}

/// Runs the configured scenario in both requested directions. With
/// `out_dir`, writes the resolved config, summary, per-direction tables,
/// checkpoints and snapshots there.
pub fn run_scenario(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let clock = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;
    }
    let data = cfg.initial_data()?;
    let tol = &cfg.tolerances;
    let adm = admissible_time(&data, tol.c, tol.l).ok();
    let scr = sufficient_condition(&data, cfg.blowup.probe).ok();

    let run = |sign: f64, len: f64| -> Option<Result<Trajectory>> {
        (len > 0.0).then(|| simulate(cfg, &data, sign))
    };
    let (fwd, bwd) = rayon::join(
        || run(1.0, cfg.time.horizon),
        || run(-1.0, cfg.time.backward_horizon),
    );
    let forward = fwd.transpose()?;
    let backward = bwd.transpose()?;

    let mut status = RunStatus::Horizon;
    for t in forward.iter().chain(&backward) {
        status = status.worst(RunStatus::of(&t.termination));
    }

    let mut snapshots = Vec::new();
    for (traj, sign) in [(&forward, 1.0), (&backward, -1.0)] {
        if let Some(t) = traj {
            let times: Vec<f64> = cfg
                .output
                .snapshot_times
                .iter()
                .map(|s| s.abs() * sign)
                .collect();
            snapshots.extend(snapshots_from_states(cfg, &data, &t.states, &times)?);
        }
    }

    let summary = RunSummary {
        status,
        scenario: cfg.scenario,
        integrator: cfg.integrator,
        admissible_time: adm,
        sufficient_condition: scr,
        forward: forward
            .as_ref()
            .map(|t| DirectionSummary::of(t, cfg.time.horizon)),
        backward: backward
            .as_ref()
            .map(|t| DirectionSummary::of(t, -cfg.time.backward_horizon)),
        snapshots: snapshots.iter().map(|s| s.t).collect(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        if let Some(t) = &forward {
            write_direction(dir, "forward", cfg, &data, t)?;
        }
        if let Some(t) = &backward {
            write_direction(dir, "backward", cfg, &data, t)?;
        }
        for s in &snapshots {
            export::write_snapshot(create(dir.join(snapshot_name(s.t)))?, s)?;
        }
        export::write_json(create(dir.join("summary.json"))?, &summary)?;
    }
    Ok(RunOutput {
        summary,
        data,
        forward,
        backward,
        snapshots,
    })
}

/// Rebuilds snapshots from a checkpoint file of a run made with `cfg`.
pub fn export_checkpoints(
    cfg: &RunConfig,
    checkpoint: &Path,
    times: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let data = cfg.initial_data()?;
    let states = export::read_checkpoints(std::io::BufReader::new(File::open(checkpoint)?))?;
    if let Some(s) = states.first() {
        if s.len() != data.grid().len() {
            return Err(Error::LengthMismatch {
                what: "checkpoint state",
                got: s.len(),
                expected: data.grid().len(),
            });
        }
    }
    let times: Vec<f64> = if times.is_empty() {
        states.iter().map(|s| s.t).collect()
    } else {
        times.to_vec()
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for s in snapshots_from_states(cfg, &data, &states, &times)? {
        let path = out_dir.join(snapshot_name(s.t));
        export::write_snapshot(create(path.clone())?, &s)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub eps: f64,
    /// `‖Δm0‖_{X⁰} + ‖Δn0‖_{X⁰}`
    pub data_distance: f64,
    /// Same norm of the momentum difference at the final common time.
    pub solution_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub t_final: f64,
    pub rows: Vec<LipschitzRow>,
    /// `max ratio / min ratio` over the configured scales.
    pub ratio_band: f64,
    /// `(ε, dist(2ε)/dist(ε))` for every scale `ε ≤ 1e-3`.
    pub doubling: Vec<(f64, f64)>,
}

/// Runs the base data and `ε`-bumped copies to the forward horizon and
/// compares momenta in the discrete `X⁰` norm. The bump
/// `ε·exp(−((x − c)/w)²)` is added to both components (velocities or
/// momenta, following the data form).
pub fn lipschitz_experiment(cfg: &RunConfig) -> Result<LipschitzReport> {
    cfg.validate()?;
    let lc = &cfg.lipschitz;
    if lc.scales.is_empty() {
        return Err(Error::config("lipschitz.scales", "need at least one scale"));
    }
    if !(cfg.time.horizon > 0.0) {
        return Err(Error::config(
            "time.horizon",
            "the Lipschitz experiment needs a forward horizon",
        ));
    }
    let grid = cfg.build_grid()?;
    let sources = cfg.reduced_sources()?;
    let (c, w) = (lc.bump_center, lc.bump_width);
    let bump = move |x: f64| (-((x - c) / w).powi(2)).exp();

    let mut eps_list: Vec<f64> = lc.scales.clone();
    for &e in &lc.scales {
        if e <= 1e-3 {
            eps_list.push(2.0 * e);
        }
    }
    eps_list.push(0.0);

    let finals: Vec<(f64, InitialData, Trajectory)> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut s = sources.clone();
            if eps != 0.0 {
                s.a = s.a.plus(move |x| eps * bump(x), &grid);
                s.b = s.b.plus(move |x| eps * bump(x), &grid);
            }
            let data = build_data(&s, grid.clone(), cfg.grid.cell_rule)?;
            let mut ecfg = cfg.evolve_config(1.0);
            ecfg.stop_times.clear();
            ecfg.store_every = usize::MAX;
            let traj = evolve(&data, &ecfg)?;
            if !traj.reached_horizon() {
                return Err(Error::EarlyTermination {
                    t: traj.final_time,
                    reason: format!("run with eps = {eps} stopped before the common final time"),
                });
            }
            Ok((eps, data, traj))
        })
        .collect::<Result<_>>()?;

    let t_final = cfg.time.horizon;
    let xs = grid.nodes();
    // (eps, m0, n0, m(T), n(T))
    type Momenta = (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    let momenta: Vec<Momenta> = finals
        .par_iter()
        .map(|(eps, data, traj)| {
            let (m, n) = reconstruct_mn(traj.last().expect("stored"), xs, data, 0.0)?;
            Ok((*eps, data.m0().to_vec(), data.n0().to_vec(), m, n))
        })
        .collect::<Result<_>>()?;
    let base = momenta
        .iter()
        .find(|r| r.0 == 0.0)
        .expect("base run present");
    let x0 = |a: &[f64], b: &[f64]| -> Result<f64> {
        let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        Ok(xk_norm(&d, 0, &grid)?.value)
    };
    let mut dist = Vec::new();
    for r in momenta.iter().filter(|r| r.0 != 0.0) {
        let data_distance = x0(&r.1, &base.1)? + x0(&r.2, &base.2)?;
        let solution_distance = x0(&r.3, &base.3)? + x0(&r.4, &base.4)?;
        dist.push(LipschitzRow {
            eps: r.0,
            data_distance,
            solution_distance,
            ratio: solution_distance / data_distance,
        });
    }
    let find = |e: f64| dist.iter().find(|r| r.eps == e).copied();
    let rows: Vec<LipschitzRow> = lc.scales.iter().filter_map(|&e| find(e)).collect();
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), r| {
        (a.min(r.ratio), b.max(r.ratio))
    });
    let doubling = lc
        .scales
        .iter()
        .filter(|&&e| e <= 1e-3)
        .filter_map(|&e| {
            Some((
                e,
                find(2.0 * e)?.solution_distance / find(e)?.solution_distance,
            ))
        })
        .collect();
    Ok(LipschitzReport {
        t_final,
        rows,
        ratio_band: hi / lo,
        doubling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub scenario: Scenario,
    pub rows: Vec<ReductionRow>,
    pub max_residual: f64,
}

/// Checks the reduction identity of the configured scenario:
/// `sup|u − v|` along the run for forq, and
/// `sup_x |v(t, x) − u(−t, −x)|` at the snapshot times (or the horizon) for
/// nonlocal-forq, from one forward and one backward run.
pub fn reduction_check(cfg: &RunConfig) -> Result<ReductionReport> {
    cfg.validate()?;
    let data = cfg.initial_data()?;
    let xs = data.grid().nodes().to_vec();
    let rows: Vec<ReductionRow> = match cfg.scenario {
        Scenario::TwoComponent => {
            return Err(Error::config(
                "scenario",
                "reduce-check needs forq or nonlocal-forq",
            ))
        }
        Scenario::Forq => {
            let mut c = cfg.clone();
            if c.time.horizon <= 0.0 && c.time.backward_horizon <= 0.0 {
                return Err(Error::config("time.horizon", "nothing to integrate"));
            }
            c.output.snapshot_times.clear();
            let out: Vec<Trajectory> = [1.0, -1.0]
                .into_par_iter()
                .filter(|s| {
                    if *s > 0.0 {
                        c.time.horizon > 0.0
                    } else {
                        c.time.backward_horizon > 0.0
                    }
                })
                .map(|s| simulate(&c, &data, s))
                .collect::<Result<_>>()?;
            let states: Vec<&CharState> = out.iter().flat_map(|t| &t.states).collect();
            states
                .par_iter()
                .map(|s| {
                    let uv = reconstruct_uv(s, &xs, &data)?;
                    Ok(ReductionRow {
                        t: s.t,
                        residual: sup_diff(&uv.u, &uv.v),
                    })
                })
                .collect::<Result<_>>()?
        }
        Scenario::NonlocalForq => {
            let times: Vec<f64> = if cfg.output.snapshot_times.is_empty() {
                vec![cfg.time.horizon]
            } else {
                cfg.output.snapshot_times.iter().map(|t| t.abs()).collect()
            };
            let tmax = times.iter().copied().fold(0.0, f64::max);
            if !(tmax > 0.0) {
                return Err(Error::config("time.horizon", "need a positive check time"));
            }
            let mut c = cfg.clone();
            c.time.horizon = tmax;
            c.time.backward_horizon = tmax;
            c.output.snapshot_times = times.clone();
            let (f, b) = rayon::join(|| simulate(&c, &data, 1.0), || simulate(&c, &data, -1.0));
            let (f, b) = (f?, b?);
            times
                .iter()
                .map(|&t| {
                    let sf = f
                        .state_at(t)
                        .or_else(|| nearest_state(&f.states, t))
                        .expect("non-empty");
                    let sb = b
                        .state_at(-t)
                        .or_else(|| nearest_state(&b.states, -t))
                        .expect("non-empty");
                    if (sf.t - t).abs() > 1e-12 || (sb.t + t).abs() > 1e-12 {
                        return Err(Error::TimeUnavailable {
                            t,
                            reason: "forward or backward run did not reach this time".into(),
                        });
                    }
                    let fwd = reconstruct_uv(sf, &xs, &data)?;
                    let bwd = reconstruct_uv(sb, &xs, &data)?;
                    // nodes are symmetric: x ↦ −x is index reversal
                    let mirrored: Vec<f64> = bwd.u.iter().rev().copied().collect();
                    Ok(ReductionRow {
                        t,
                        residual: sup_diff(&fwd.v, &mirrored),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(ReductionReport {
        scenario: cfg.scenario,
        rows,
        max_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupScan {
    /// Probe used for the run and the rate check.
    pub chosen: SufficientConditionResult,
    /// Seeded random probes from the joint support of `m0 + n0`.
    pub probes: Vec<SufficientConditionResult>,
    pub horizon: f64,
    pub termination: Termination,
    pub rate: Option<RateCheck>,
    /// The collapse was detected no later than the bound; `None` without a
    /// blow-up verdict or without a collapse.
    pub bound_respected: Option<bool>,
}

/// Evaluates the sufficient condition on seeded random probes and the
/// chosen probe, then integrates toward the predicted collapse (horizon
/// extended past the bound when needed) and checks the rate inequalities.
pub fn blowup_scan(cfg: &RunConfig) -> Result<BlowupScan> {
    cfg.validate()?;
    let data = cfg.initial_data()?;
    let chosen = sufficient_condition(&data, cfg.blowup.probe)?;

    let (m0, n0) = (data.m0(), data.n0());
    let peak = m0.iter().zip(n0).map(|(a, b)| a + b).fold(0.0, f64::max);
    let support: Vec<usize> = (0..m0.len())
        .filter(|&i| m0[i] + n0[i] > 1e-3 * peak)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks: Vec<usize> = support
        .choose_multiple(&mut rng, cfg.blowup.random_probes.min(support.len()))
        .copied()
        .collect();
    let y0 = data.y0();
    let probes: Vec<SufficientConditionResult> = picks
        .par_iter()
        .map(|&i| sufficient_condition(&data, Some(y0[i])))
        .collect::<Result<_>>()?;

    let sign = if chosen.verdict == Verdict::BlowUpBackward {
        -1.0
    } else {
        1.0
    };
    let mut c = cfg.clone();
    c.integrator = Integrator::Rk4;
    let mut len = if sign > 0.0 {
        c.time.horizon
    } else {
        c.time.backward_horizon
    };
    if let Some(b) = chosen.collapse_bound() {
        len = len.max(1.1 * b.abs());
    }
    if sign > 0.0 {
        c.time.horizon = len;
    } else {
        c.time.backward_horizon = len;
    }
    let traj = simulate(&c, &data, sign)?;
    let rate = match chosen.verdict {
        Verdict::Inconclusive => None,
        _ => Some(rate_check(&traj, &chosen, &data)?),
    };
    let bound_respected = match (chosen.collapse_bound(), traj.termination.bracket()) {
        (Some(b), Some((last, _))) => Some(last * sign <= b * sign),
        (Some(_), None) => Some(false),
        _ => None,
    };
    Ok(BlowupScan {
        chosen,
        probes,
        horizon: sign * len,
        termination: traj.termination,
        rate,
        bound_respected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLevel {
    pub n_lagrangian: usize,
    pub n_oracle: usize,
    pub dt: f64,
    pub agreements: Vec<Agreement>,
    pub max_du: f64,
    pub max_dm: f64,
}

/// Lagrangian vs Eulerian at the snapshot times (or the horizon) on
/// `oracle.levels` simultaneous 2× refinements of both solvers.
pub fn compare_oracle(cfg: &RunConfig) -> Result<Vec<OracleLevel>> {
    cfg.validate()?;
    let times: Vec<f64> = if cfg.output.snapshot_times.is_empty() {
        vec![cfg.time.horizon]
    } else {
        cfg.output.snapshot_times.clone()
    };
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::config(
            "output.snapshot_times",
            "oracle comparison needs positive times",
        ));
    }
    let tmax = times.iter().copied().fold(0.0, f64::max);
    let sources = cfg.reduced_sources()?;
    let window = if cfg.oracle.window > 0.0 {
        cfg.oracle.window
    } else {
        cfg.grid.half_width - cfg.grid.pad
    };
    (0..cfg.oracle.levels)
        .into_par_iter()
        .map(|k| {
            let f = 1usize << k;
            let mut c = cfg.clone();
            c.integrator = Integrator::Rk4;
            c.grid.n_points = cfg.grid.n_points * f;
            c.time.dt = cfg.time.dt / f as f64;
            c.time.horizon = tmax;
            c.output.snapshot_times = times.clone();
            let data = build_data(&sources, c.build_grid()?, c.grid.cell_rule)?;
            let traj = simulate(&c, &data, 1.0)?;
            if !traj.reached_horizon() {
                return Err(Error::EarlyTermination {
                    t: traj.final_time,
                    reason: "Lagrangian run stopped before the comparison time".into(),
                });
            }
            let sb = SpectralBox::new(
                cfg.oracle.box_factor * cfg.grid.half_width,
                cfg.oracle.n_points * f,
            )?;
            let e0 =
                sb.initial_state(&sources.a, &sources.b, sources.form == DataForm::Momentum)?;
            let es = eulerian_evolve(
                &e0,
                &times,
                cfg.oracle.dt / f as f64,
                &sb,
                cfg.oracle.halving_tol,
            )?;
            let agreements = cross_validate(&traj, &data, &es, &sb, window)?;
            Ok(OracleLevel {
                n_lagrangian: c.grid.n_points,
                n_oracle: sb.len(),
                dt: c.time.dt,
                max_du: agreements
                    .iter()
                    .map(|a| a.du.max(a.dv))
                    .fold(0.0, f64::max),
                max_dm: agreements
                    .iter()
                    .map(|a| a.dm.max(a.dn))
                    .fold(0.0, f64::max),
                agreements,
            })
        })
        .collect()
}
