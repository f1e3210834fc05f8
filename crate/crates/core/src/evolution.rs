//! Time stepping of the characteristic perturbation `ζ(t, ξ) = y(t, ξ) − ξ`,
//!
//! ```text
//! ∂t ζ = (W − U)(Z + V),   ζ(0, ξ) = y0(ξ) − ξ,
//! ```
//!
//! by classical RK4 or by fixed-point iteration of the integral operator `A`.
//! The Jacobian is never integrated as its own ODE: it follows algebraically
//! from the accumulators `∫(Z+V)` and `∫(W−U)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charkernel::{compute_uwvz, KernelFields};
use crate::error::{Error, Result};
use crate::initdata::{DataNorms, InitialData};
use crate::stencil::{d1, sup_abs};

pub const DEFAULT_JACOBIAN_FLOOR: f64 = 1e-3;
pub const DEFAULT_PICARD_SAMPLES: usize = 64;

/// Snapshot of the characteristic system at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharState {
    pub t: f64,
    pub zeta: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
    /// `∫₀ᵗ (Z + V) dτ`
    pub acc_zv: Vec<f64>,
    /// `∫₀ᵗ (W − U) dτ`
    pub acc_wu: Vec<f64>,
    /// `∫₀ᵗ (W n − U n + Z m + V m) dτ` along characteristics, for the exponential Jacobian form.
    pub acc_flux: Vec<f64>,
    pub fields: KernelFields,
}

impl CharState {
    /// State at `t = 0`.
    pub fn initial(data: &InitialData) -> Result<Self> {
        let xi = data.grid().nodes();
        let y = data.y0().to_vec();
        let dy = data.dy0().to_vec();
        let fields = compute_uwvz(&y, &dy, data)?;
        let n = xi.len();
        Ok(CharState {
            t: 0.0,
            zeta: y.iter().zip(xi).map(|(y, x)| y - x).collect(),
            y,
            dy,
            acc_zv: vec![0.0; n],
            acc_wu: vec![0.0; n],
            acc_flux: vec![0.0; n],
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    pub fn min_dy(&self) -> f64 {
        self.dy.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Momenta along characteristics, `m = m̃0/∂ξy` and `n = ñ0/∂ξy`.
    pub fn momenta(&self, data: &InitialData) -> (Vec<f64>, Vec<f64>) {
        let m = data
            .mtilde0()
            .iter()
            .zip(&self.dy)
            .map(|(a, d)| a / d)
            .collect();
        let n = data
            .ntilde0()
            .iter()
            .zip(&self.dy)
            .map(|(a, d)| a / d)
            .collect();
        (m, n)
    }
}

/// Jacobian from the accumulators: `∂ξy = ∂ξy0 − m̃0·∫(Z+V) − ñ0·∫(W−U)`.
fn algebraic_dy(data: &InitialData, acc_zv: &[f64], acc_wu: &[f64]) -> Vec<f64> {
    let (dy0, mt, nt) = (data.dy0(), data.mtilde0(), data.ntilde0());
    (0..dy0.len())
        .map(|i| dy0[i] - mt[i] * acc_zv[i] - nt[i] * acc_wu[i])
        .collect()
}

/// Time derivatives of (ζ, ∫(Z+V), ∫(W−U), ∫flux).
struct Rates {
    vel: Vec<f64>,
    zv: Vec<f64>,
    wu: Vec<f64>,
    flux: Vec<f64>,
}

fn rates(fields: &KernelFields, dy: &[f64], data: &InitialData) -> Rates {
    let n = dy.len();
    let (mt, nt) = (data.mtilde0(), data.ntilde0());
    let mut r = Rates {
        vel: vec![0.0; n],
        zv: vec![0.0; n],
        wu: vec![0.0; n],
        flux: vec![0.0; n],
    };
    for i in 0..n {
        let zv = fields.z[i] + fields.v[i];
        let wu = fields.w[i] - fields.u[i];
        r.zv[i] = zv;
        r.wu[i] = wu;
        r.vel[i] = wu * zv;
        r.flux[i] = (mt[i] * zv + nt[i] * wu) / dy[i];
    }
    r
}

/// Jacobian and fields at a stage point; breaches of the floor are errors.
fn stage_fields(
    data: &InitialData,
    t: f64,
    zeta: &[f64],
    acc_zv: &[f64],
    acc_wu: &[f64],
    floor: f64,
) -> Result<(Vec<f64>, Vec<f64>, KernelFields)> {
    let dy = algebraic_dy(data, acc_zv, acc_wu);
    let min_dy = dy.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_dy > floor) {
        return Err(Error::JacobianFloor { t, min_dy, floor });
    }
    let y: Vec<f64> = zeta
        .iter()
        .zip(data.grid().nodes())
        .map(|(z, x)| z + x)
        .collect();
    let fields = compute_uwvz(&y, &dy, data).map_err(|e| match e {
        Error::NonMonotone { .. } => Error::JacobianFloor { t, min_dy, floor },
        other => other,
    })?;
    Ok((y, dy, fields))
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(x, k)| x + a * k).collect()
}

fn rk4_combine(x: &[f64], dt: f64, k: [&[f64]; 4]) -> Vec<f64> {
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

/// One classical RK4 step of size `dt` (negative for backward time).
///
/// Every stage recomputes the Jacobian from the staged accumulators and is
/// rejected with [`Error::JacobianFloor`] if `min ∂ξy ≤ floor`.
pub fn rk4_step(state: &CharState, dt: f64, data: &InitialData, floor: f64) -> Result<CharState> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::param(
            "dt",
            format!("must be finite and non-zero, got {dt}"),
        ));
    }
    let min_dy = state.min_dy();
    if !(min_dy > floor) {
        return Err(Error::JacobianFloor {
            t: state.t,
            min_dy,
            floor,
        });
    }
    let k1 = rates(&state.fields, &state.dy, data);
    let half = 0.5 * dt;
    let stage = |k: &Rates, a: f64, t: f64| -> Result<Rates> {
        let zeta = axpy(&state.zeta, a, &k.vel);
        let azv = axpy(&state.acc_zv, a, &k.zv);
        let awu = axpy(&state.acc_wu, a, &k.wu);
        let (_, dy, fields) = stage_fields(data, t, &zeta, &azv, &awu, floor)?;
        Ok(rates(&fields, &dy, data))
    };
    let k2 = stage(&k1, half, state.t + half)?;
    let k3 = stage(&k2, half, state.t + half)?;
    let k4 = stage(&k3, dt, state.t + dt)?;

    let zeta = rk4_combine(&state.zeta, dt, [&k1.vel, &k2.vel, &k3.vel, &k4.vel]);
    let acc_zv = rk4_combine(&state.acc_zv, dt, [&k1.zv, &k2.zv, &k3.zv, &k4.zv]);
    let acc_wu = rk4_combine(&state.acc_wu, dt, [&k1.wu, &k2.wu, &k3.wu, &k4.wu]);
    let acc_flux = rk4_combine(
        &state.acc_flux,
        dt,
        [&k1.flux, &k2.flux, &k3.flux, &k4.flux],
    );
    let t = state.t + dt;
    let (y, dy, fields) = stage_fields(data, t, &zeta, &acc_zv, &acc_wu, floor)?;
    if zeta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rk4 step"));
    }
    Ok(CharState {
        t,
        zeta,
        y,
        dy,
        acc_zv,
        acc_wu,
        acc_flux,
        fields,
    })
}

/// The two Jacobian forms and their largest nodal gap.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianCheck {
    pub algebraic: Vec<f64>,
    pub exponential: Vec<f64>,
    pub discrepancy: f64,
}

pub fn update_jacobian(state: &CharState, data: &InitialData) -> JacobianCheck {
    let algebraic = algebraic_dy(data, &state.acc_zv, &state.acc_wu);
    let exponential: Vec<f64> = data
        .dy0()
        .iter()
        .zip(&state.acc_flux)
        .map(|(d, a)| d * (-a).exp())
        .collect();
    let discrepancy = algebraic
        .iter()
        .zip(&exponential)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    JacobianCheck {
        algebraic,
        exponential,
        discrepancy,
    }
}

/// Relative defect in `m(t, y)·∂ξy = m̃0`, with `m` taken as `u − ∂x(∂xu)`
/// from the scanned fields: `m·∂ξy = ∂ξy·U − ∂ξW` (finite-difference ∂ξW).
pub fn conservation_residual(state: &CharState, data: &InitialData) -> Result<(f64, f64)> {
    if !(state.min_dy() > 0.0) {
        return Err(Error::JacobianFloor {
            t: state.t,
            min_dy: state.min_dy(),
            floor: 0.0,
        });
    }
    let h = data.grid().spacing();
    let residual = |outer: &[f64], inner: &[f64], target: &[f64]| {
        let d_inner = d1(inner, h);
        (0..target.len()).fold(0.0_f64, |r, i| {
            let recon = state.dy[i] * outer[i] - d_inner[i];
            r.max((recon - target[i]).abs() / (1.0 + target[i].abs()))
        })
    };
    let f = &state.fields;
    Ok((
        residual(&f.u, &f.w, data.mtilde0()),
        residual(&f.v, &f.z, data.ntilde0()),
    ))
}

/// Branch values of the contraction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleTime {
    /// `min` of the two branches; `+∞` when neither constrains.
    pub value: f64,
    /// `1/(4‖m0‖_{L¹}‖n0‖_{L¹})`
    pub l1_branch: f64,
    /// `min{½, c − l}/(‖∂ξy0‖_C(‖m0‖_C‖n0‖_{L¹} + ‖m0‖_{L¹}‖n0‖_C))`
    pub c_branch: f64,
    /// Both denominators vanish (zero data).
    pub unconstrained: bool,
}

/// Scalar inputs of the contraction horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonInputs {
    pub m_l1: f64,
    pub n_l1: f64,
    pub m_c: f64,
    pub n_c: f64,
    pub dy0_c: f64,
}

impl From<&DataNorms> for HorizonInputs {
    fn from(n: &DataNorms) -> Self {
        HorizonInputs {
            m_l1: n.m_l1,
            n_l1: n.n_l1,
            m_c: n.m_c,
            n_c: n.n_c,
            dy0_c: n.dy0_c,
        }
    }
}

pub fn admissible_time_from(inputs: HorizonInputs, c: f64, l: f64) -> Result<AdmissibleTime> {
    if !(l > 0.0 && l < c && c.is_finite()) {
        return Err(Error::param(
            "l",
            format!("need 0 < l < c, got c = {c}, l = {l}"),
        ));
    }
    let HorizonInputs {
        m_l1,
        n_l1,
        m_c,
        n_c,
        dy0_c,
    } = inputs;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    let l1_branch = ratio(1.0, 4.0 * m_l1 * n_l1);
    let c_branch = ratio(0.5_f64.min(c - l), dy0_c * (m_c * n_l1 + m_l1 * n_c));
    let value = l1_branch.min(c_branch);
    Ok(AdmissibleTime {
        value,
        l1_branch,
        c_branch,
        unconstrained: value.is_infinite(),
    })
}

/// Contraction horizon for `data`; `c` must not exceed `min ∂ξy0`.
pub fn admissible_time(data: &InitialData, c: f64, l: f64) -> Result<AdmissibleTime> {
    let norms = data.norms();
    if c > norms.dy0_min {
        return Err(Error::param(
            "c",
            format!(
                "y0 − ξ is not in E_c: min ∂ξy0 = {} < c = {c}",
                norms.dy0_min
            ),
        ));
    }
    admissible_time_from(norms.into(), c, l)
}

/// Time-sampled candidate `ζ` on `[0, H]` (H may be negative), with `∂ξζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardPath {
    pub times: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    pub dzeta: Vec<Vec<f64>>,
}

impl PicardPath {
    /// The constant path `ζ ≡ y0 − ξ` on `samples` uniform times.
    pub fn constant(data: &InitialData, horizon: f64, samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::param("samples", "need at least two time samples"));
        }
        if !horizon.is_finite() {
            return Err(Error::param("horizon", "must be finite"));
        }
        let xi = data.grid().nodes();
        let z0: Vec<f64> = data.y0().iter().zip(xi).map(|(y, x)| y - x).collect();
        let dz0: Vec<f64> = data.dy0().iter().map(|d| d - 1.0).collect();
        let last = (samples - 1) as f64;
        Ok(PicardPath {
            times: (0..samples).map(|k| horizon * k as f64 / last).collect(),
            zeta: vec![z0; samples],
            dzeta: vec![dz0; samples],
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// `sup|Δζ| + sup|Δ∂ξζ|` over all slices.
    pub fn distance(&self, other: &PicardPath) -> f64 {
        let sup = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter()
                .zip(b)
                .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
                .fold(0.0_f64, f64::max)
        };
        sup(&self.zeta, &other.zeta) + sup(&self.dzeta, &other.dzeta)
    }
}

/// `A(ζ)(t) = y0 − ξ + ∫₀ᵗ (W−U)(Z+V) dτ` with its ξ-derivative
/// `∂ξy0 − 1 − m̃0∫(Z+V) − ñ0∫(W−U)`; composite trapezoid in time.
pub fn picard_apply(path: &PicardPath, data: &InitialData) -> Result<PicardPath> {
    let xi = data.grid().nodes();
    let slices: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = path
        .zeta
        .par_iter()
        .zip(&path.dzeta)
        .map(|(z, dz)| {
            let y: Vec<f64> = z.iter().zip(xi).map(|(z, x)| z + x).collect();
            let dy: Vec<f64> = dz.iter().map(|d| 1.0 + d).collect();
            if let Some(index) = dy.iter().position(|d| !(*d > 0.0)) {
                return Err(Error::NonMonotone { index });
            }
            let f = compute_uwvz(&y, &dy, data)?;
            let zv: Vec<f64> = f.z.iter().zip(&f.v).map(|(z, v)| z + v).collect();
            let wu: Vec<f64> = f.w.iter().zip(&f.u).map(|(w, u)| w - u).collect();
            let vel = zv.iter().zip(&wu).map(|(a, b)| a * b).collect();
            Ok((vel, zv, wu))
        })
        .collect::<Result<_>>()?;

    let n = xi.len();
    let (mt, nt) = (data.mtilde0(), data.ntilde0());
    let z0: Vec<f64> = data.y0().iter().zip(xi).map(|(y, x)| y - x).collect();
    let dz0: Vec<f64> = data.dy0().iter().map(|d| d - 1.0).collect();
    let mut acc_vel = vec![0.0; n];
    let mut acc_zv = vec![0.0; n];
    let mut acc_wu = vec![0.0; n];
    let mut zeta = Vec::with_capacity(path.times.len());
    let mut dzeta = Vec::with_capacity(path.times.len());
    for k in 0..path.times.len() {
        if k > 0 {
            let half = 0.5 * (path.times[k] - path.times[k - 1]);
            let (prev, cur) = (&slices[k - 1], &slices[k]);
            for i in 0..n {
                acc_vel[i] += half * (prev.0[i] + cur.0[i]);
                acc_zv[i] += half * (prev.1[i] + cur.1[i]);
                acc_wu[i] += half * (prev.2[i] + cur.2[i]);
            }
        }
        zeta.push((0..n).map(|i| z0[i] + acc_vel[i]).collect());
        dzeta.push(
            (0..n)
                .map(|i| dz0[i] - mt[i] * acc_zv[i] - nt[i] * acc_wu[i])
                .collect(),
        );
    }
    Ok(PicardPath {
        times: path.times.clone(),
        zeta,
        dzeta,
    })
}

/// Result of the fixed-point iteration.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub path: PicardPath,
    /// Successive distances `d_k = ‖A^{k+1}ζ − A^kζ‖`.
    pub distances: Vec<f64>,
    /// `d_{k+1}/d_k` for consecutive distances.
    pub ratios: Vec<f64>,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    /// All ratios whose preceding distance exceeds `noise` are below one.
    pub fn is_contractive(&self, noise: f64) -> bool {
        self.ratios
            .iter()
            .zip(&self.distances)
            .all(|(r, d)| *d <= noise || *r < 1.0)
    }
}

/// Iterates [`picard_apply`] from the constant path until the successive
/// distance drops below `tol`.
pub fn picard_solve(
    data: &InitialData,
    horizon: f64,
    samples: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome> {
    let mut path = PicardPath::constant(data, horizon, samples)?;
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    for _ in 0..max_iter {
        let next = picard_apply(&path, data)?;
        let d = next.distance(&path);
        if let Some(prev) = distances.last() {
            ratios.push(if *prev > 0.0 { d / prev } else { 0.0 });
        }
        distances.push(d);
        path = next;
        log::debug!("picard iteration {}: distance {d:e}", distances.len());
        if d < tol {
            return Ok(PicardOutcome {
                path,
                distances,
                ratios,
            });
        }
    }
    Err(Error::PicardNotConverged {
        iterations: max_iter,
        tol,
        last_ratio: ratios.last().copied().unwrap_or(f64::NAN),
    })
}

/// States along a converged Picard path, so that Picard runs feed the same
/// reconstruction and export code as RK4 runs. Accumulators are trapezoid
/// sums over the path samples.
pub fn picard_trajectory(data: &InitialData, path: &PicardPath) -> Result<Trajectory> {
    let xi = data.grid().nodes();
    let n = xi.len();
    let mut states: Vec<CharState> = Vec::with_capacity(path.times.len());
    let mut diagnostics = Vec::with_capacity(path.times.len());
    let mut prev_rates: Option<Rates> = None;
    for (k, t) in path.times.iter().enumerate() {
        let y: Vec<f64> = path.zeta[k].iter().zip(xi).map(|(z, x)| z + x).collect();
        let dy: Vec<f64> = path.dzeta[k].iter().map(|d| 1.0 + d).collect();
        let fields = compute_uwvz(&y, &dy, data)?;
        let r = rates(&fields, &dy, data);
        let (mut acc_zv, mut acc_wu, mut acc_flux) = match states.last() {
            Some(s) => (s.acc_zv.clone(), s.acc_wu.clone(), s.acc_flux.clone()),
            None => (vec![0.0; n], vec![0.0; n], vec![0.0; n]),
        };
        if let (Some(p), Some(s)) = (&prev_rates, states.last()) {
            let half = 0.5 * (t - s.t);
            for i in 0..n {
                acc_zv[i] += half * (p.zv[i] + r.zv[i]);
                acc_wu[i] += half * (p.wu[i] + r.wu[i]);
                acc_flux[i] += half * (p.flux[i] + r.flux[i]);
            }
        }
        let state = CharState {
            t: *t,
            zeta: path.zeta[k].clone(),
            y,
            dy,
            acc_zv,
            acc_wu,
            acc_flux,
            fields,
        };
        let dt = states.last().map_or(0.0, |s| t - s.t);
        diagnostics.push(diagnose(&state, data, dt)?);
        states.push(state);
        prev_rates = Some(r);
    }
    let final_time = path.horizon();
    Ok(Trajectory {
        states,
        diagnostics,
        termination: Termination::Horizon,
        final_time,
    })
}

/// Stepping parameters for [`evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    /// Step magnitude; the sign of `horizon` sets the direction.
    pub dt: f64,
    pub horizon: f64,
    pub jacobian_floor: f64,
    /// Keep every k-th accepted state (the first and last are always kept).
    pub store_every: usize,
    /// Times the stepper lands on exactly; their states are always kept.
    pub stop_times: Vec<f64>,
    /// Per-step conservation and Jacobian diagnostics.
    pub diagnostics: bool,
    /// Retries after a non-finite step stop below this step size.
    pub min_dt: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            dt: 1e-3,
            horizon: 0.1,
            jacobian_floor: DEFAULT_JACOBIAN_FLOOR,
            store_every: 1,
            stop_times: Vec::new(),
            diagnostics: true,
            min_dt: 1e-12,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be finite and > 0"));
        }
        if !self.horizon.is_finite() {
            return Err(Error::config("horizon", "must be finite"));
        }
        if !(self.jacobian_floor.is_finite() && self.jacobian_floor >= 0.0) {
            return Err(Error::config("jacobian_floor", "must be finite and >= 0"));
        }
        if self.store_every == 0 {
            return Err(Error::config("store_every", "must be >= 1"));
        }
        if !(self.min_dt > 0.0 && self.min_dt < self.dt) {
            return Err(Error::config("min_dt", "must satisfy 0 < min_dt < dt"));
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    /// `min ∂ξy` reached the floor between these times.
    JacobianCollapse {
        last_accepted: f64,
        first_rejected: f64,
    },
    DtUnderflow {
        t: f64,
        dt: f64,
    },
    Error {
        t: f64,
        message: String,
    },
}

impl Termination {
    pub fn bracket(&self) -> Option<(f64, f64)> {
        match self {
            Termination::JacobianCollapse {
                last_accepted,
                first_rejected,
            } => Some((*last_accepted, *first_rejected)),
            _ => None,
        }
    }
}

/// Per-state diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub min_dy: f64,
    pub res_m: f64,
    pub res_n: f64,
    pub jacobian_discrepancy: f64,
    /// `‖ζ‖_C`
    pub zeta_c: f64,
    /// `‖∂ξζ‖_C`
    pub dzeta_c: f64,
    /// `‖ζ‖_C ≤ ‖y0 − ξ‖_C + |t|‖m0‖_{L¹}‖n0‖_{L¹} + 1e-8`
    pub size_bound_ok: bool,
    /// `‖∂ξζ‖_C ≤ 1 + ‖∂ξy0‖_C + |t|C0 + 1e-8`
    pub jacobian_bound_ok: bool,
}

pub fn diagnose(state: &CharState, data: &InitialData, dt: f64) -> Result<StepDiagnostics> {
    let (res_m, res_n) = conservation_residual(state, data)?;
    let jac = update_jacobian(state, data);
    let norms = data.norms();
    let zeta_c = sup_abs(&state.zeta);
    let dzeta_c = state.dy.iter().fold(0.0_f64, |m, d| m.max((d - 1.0).abs()));
    let c0 = norms.dy0_c * (norms.m_c * norms.n_l1 + norms.m_l1 * norms.n_c);
    let at = state.t.abs();
    Ok(StepDiagnostics {
        t: state.t,
        dt,
        min_dy: state.min_dy(),
        res_m,
        res_n,
        jacobian_discrepancy: jac.discrepancy,
        zeta_c,
        dzeta_c,
        size_bound_ok: zeta_c <= norms.zeta0_c + at * norms.m_l1 * norms.n_l1 + 1e-8,
        jacobian_bound_ok: dzeta_c <= 1.0 + norms.dy0_c + at * c0 + 1e-8,
    })
}

/// Accepted states in time order, with diagnostics and the stop reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<CharState>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub termination: Termination,
    /// Last accepted time (kept even if that state was not stored).
    pub final_time: f64,
}

impl Trajectory {
    pub fn state_at(&self, t: f64) -> Option<&CharState> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.states.iter().find(|s| (s.t - t).abs() <= tol)
    }

    pub fn last(&self) -> Option<&CharState> {
        self.states.last()
    }

    pub fn reached_horizon(&self) -> bool {
        self.termination == Termination::Horizon
    }
}

pub fn evolve(data: &InitialData, config: &EvolveConfig) -> Result<Trajectory> {
    evolve_with(data, config, |_, _| {})
}

/// [`evolve`] with a callback on every accepted state (including `t = 0`).
/// The diagnostics argument is `None` when diagnostics are switched off.
pub fn evolve_with<F>(
    data: &InitialData,
    config: &EvolveConfig,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&CharState, Option<&StepDiagnostics>),
{
    config.validate()?;
    let dir = if config.horizon < 0.0 { -1.0 } else { 1.0 };
    let horizon = config.horizon;
    let floor = config.jacobian_floor;
    let mut stops: Vec<f64> = config
        .stop_times
        .iter()
        .copied()
        .filter(|s| s * dir > 0.0 && s * dir < horizon * dir)
        .collect();
    stops.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
    stops.push(horizon);
    let mut stops = stops.into_iter().peekable();

    let mut state = CharState::initial(data)?;
    let mut diagnostics = Vec::new();
    let mut record = |s: &CharState, dt: f64, diags: &mut Vec<StepDiagnostics>| -> Result<()> {
        if config.diagnostics {
            let d = diagnose(s, data, dt)?;
            observer(s, Some(&d));
            diags.push(d);
        } else {
            observer(s, None);
        }
        Ok(())
    };
    record(&state, 0.0, &mut diagnostics)?;
    let mut states = vec![state.clone()];
    let snap = 1e-9 * config.dt;
    let mut accepted = 0usize;

    let termination = loop {
        if horizon == 0.0 {
            break Termination::Horizon;
        }
        let target = *stops.peek().expect("horizon is always a stop");
        let mut step = dir * config.dt;
        let mut is_stop = false;
        if (target - (state.t + step)) * dir <= snap {
            step = target - state.t;
            is_stop = true;
        }
        match rk4_step(&state, step, data, floor) {
            Ok(next) => {
                state = next;
                if is_stop {
                    state.t = target;
                    stops.next();
                }
                accepted += 1;
                record(&state, step, &mut diagnostics)?;
                let done = is_stop && state.t == horizon;
                if is_stop || done || accepted.is_multiple_of(config.store_every) {
                    states.push(state.clone());
                }
                if done {
                    break Termination::Horizon;
                }
            }
            Err(Error::JacobianFloor { .. }) => {
                // bisect the failing step down to a bracket of width dt/16
                let width = config.dt / 16.0;
                let mut fail = step.abs();
                while fail > width {
                    let trial = 0.5 * fail;
                    match rk4_step(&state, dir * trial, data, floor) {
                        Ok(next) => {
                            state = next;
                            fail -= trial;
                            record(&state, dir * trial, &mut diagnostics)?;
                        }
                        Err(Error::JacobianFloor { .. }) => fail = trial,
                        Err(e) => {
                            let t = state.t;
                            return Ok(finish(
                                states,
                                state,
                                diagnostics,
                                Termination::Error {
                                    t,
                                    message: e.to_string(),
                                },
                            ));
                        }
                    }
                }
                let t = state.t;
                break Termination::JacobianCollapse {
                    last_accepted: t,
                    first_rejected: t + dir * fail,
                };
            }
            Err(Error::NonFinite(_)) => {
                // shrink the step until it succeeds or underflows
                let mut trial = 0.5 * step.abs();
                let mut ok = None;
                while trial >= config.min_dt {
                    if let Ok(next) = rk4_step(&state, dir * trial, data, floor) {
                        ok = Some(next);
                        break;
                    }
                    trial *= 0.5;
                }
                match ok {
                    Some(next) => {
                        state = next;
                        record(&state, dir * trial, &mut diagnostics)?;
                    }
                    None => {
                        break Termination::DtUnderflow {
                            t: state.t,
                            dt: trial,
                        }
                    }
                }
            }
            Err(e) => {
                break Termination::Error {
                    t: state.t,
                    message: e.to_string(),
                }
            }
        }
    };
    Ok(finish(states, state, diagnostics, termination))
}

fn finish(
    mut states: Vec<CharState>,
    last: CharState,
    diagnostics: Vec<StepDiagnostics>,
    termination: Termination,
) -> Trajectory {
    if states.last().map(|s| s.t) != Some(last.t) {
        states.push(last.clone());
    }
    Trajectory {
        states,
        diagnostics,
        termination,
        final_time: last.t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initdata::{build_grid, make_initial_data, FieldSource};
    use crate::stencil::sup_diff;

    fn gaussian(n: usize) -> InitialData {
        let g = build_grid(30.0, n, 5.0).unwrap();
        make_initial_data(
            FieldSource::function(|x| (-x * x).exp()),
            FieldSource::function(|x| (-(x - 1.0) * (x - 1.0)).exp()),
            None,
            g,
        )
        .unwrap()
    }

    fn zero(n: usize) -> InitialData {
        let g = build_grid(10.0, n, 1.0).unwrap();
        make_initial_data(
            FieldSource::function(|_| 0.0),
            FieldSource::function(|_| 0.0),
            None,
            g,
        )
        .unwrap()
    }

    #[test]
    fn admissible_time_unit_inputs() {
        let ones = HorizonInputs {
            m_l1: 1.0,
            n_l1: 1.0,
            m_c: 1.0,
            n_c: 1.0,
            dy0_c: 1.0,
        };
        let t = admissible_time_from(ones, 1.0, 0.5).unwrap();
        assert_eq!(t.value, 0.25);
        assert_eq!(t.l1_branch, 0.25);
        assert_eq!(t.c_branch, 0.25);
        assert!(admissible_time_from(ones, 0.5, 0.5).is_err());
        assert!(admissible_time_from(ones, 1.0, 0.0).is_err());
    }

    #[test]
    fn admissible_time_zero_data_is_unconstrained() {
        let t = admissible_time(&zero(32), 1.0, 0.5).unwrap();
        assert!(t.unconstrained && t.value == f64::INFINITY);
    }

    #[test]
    fn admissible_time_gaussian_recomputed_from_norms() {
        use crate::initdata::xk_norm;
        let d = gaussian(2048);
        let t = admissible_time(&d, 1.0, 0.5).unwrap();
        let m = xk_norm(d.m0(), 0, d.grid()).unwrap();
        let n = xk_norm(d.n0(), 0, d.grid()).unwrap();
        let b1 = 1.0 / (4.0 * m.l1_norm * n.l1_norm);
        let b2 = 0.5 / (m.c_norm * n.l1_norm + m.l1_norm * n.c_norm);
        assert!(t.value <= b1 && t.value <= b2);
        assert!((t.value - b1.min(b2)).abs() < 1e-15);
        assert!(admissible_time(&d, 1.5, 0.5).is_err());
    }

    #[test]
    fn zero_data_step_changes_only_time() {
        let d = zero(64);
        let s0 = CharState::initial(&d).unwrap();
        let s1 = rk4_step(&s0, 0.1, &d, DEFAULT_JACOBIAN_FLOOR).unwrap();
        assert_eq!(s1.t, 0.1);
        assert_eq!(s1.zeta, s0.zeta);
        assert_eq!(s1.dy, s0.dy);
        assert_eq!(s1.fields, s0.fields);
    }

    #[test]
    fn forward_then_backward_step_is_reversible() {
        let d = gaussian(1024);
        let s0 = CharState::initial(&d).unwrap();
        let dt = 1e-2;
        let s1 = rk4_step(&s0, dt, &d, DEFAULT_JACOBIAN_FLOOR).unwrap();
        let s2 = rk4_step(&s1, -dt, &d, DEFAULT_JACOBIAN_FLOOR).unwrap();
        let moved = sup_diff(&s1.zeta, &s0.zeta);
        let back = sup_diff(&s2.zeta, &s0.zeta);
        assert!(moved > 1e-3);
        assert!(back < 1e-8, "returned within {back:e}");
    }

    #[test]
    fn symmetric_data_keeps_components_equal() {
        let g = build_grid(30.0, 512, 5.0).unwrap();
        let f = FieldSource::function(|x| (-x * x).exp());
        let d = make_initial_data(f.clone(), f, None, g).unwrap();
        let s = rk4_step(&CharState::initial(&d).unwrap(), 1e-2, &d, 1e-3).unwrap();
        assert_eq!(s.fields.u, s.fields.v);
        assert_eq!(s.fields.w, s.fields.z);
    }

    #[test]
    fn jacobian_forms_agree() {
        let d = zero(32);
        let s = CharState::initial(&d).unwrap();
        let j = update_jacobian(&s, &d);
        assert_eq!(j.algebraic, d.dy0());
        assert_eq!(j.discrepancy, 0.0);

        let d = gaussian(1024);
        let cfg = EvolveConfig {
            dt: 1e-2,
            horizon: 0.1,
            ..Default::default()
        };
        let traj = evolve(&d, &cfg).unwrap();
        assert!(traj.reached_horizon());
        let s = traj.last().unwrap();
        let j = update_jacobian(s, &d);
        assert_eq!(j.algebraic, s.dy);
        assert!(j.discrepancy < 1e-7, "{:e}", j.discrepancy);
    }

    #[test]
    fn conservation_residual_examples() {
        let d = zero(32);
        let s = CharState::initial(&d).unwrap();
        assert_eq!(conservation_residual(&s, &d).unwrap(), (0.0, 0.0));

        let d = gaussian(2048);
        let s = CharState::initial(&d).unwrap();
        let (rm, rn) = conservation_residual(&s, &d).unwrap();
        assert!(rm < 1e-5 && rn < 1e-5, "{rm:e} {rn:e}");
    }

    #[test]
    fn picard_zero_data_converges_at_once() {
        let d = zero(32);
        let out = picard_solve(&d, 1.0, 8, 1e-12, 5).unwrap();
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.distances[0], 0.0);
        let z0: Vec<f64> = d
            .y0()
            .iter()
            .zip(d.grid().nodes())
            .map(|(y, x)| y - x)
            .collect();
        assert!(out.path.zeta.iter().all(|z| *z == z0));
    }

    #[test]
    fn picard_apply_first_slice_is_initial_map() {
        let d = gaussian(512);
        let mut p = PicardPath::constant(&d, 0.01, 4).unwrap();
        for (k, z) in p.zeta.iter_mut().enumerate() {
            z.iter_mut().for_each(|v| *v += 1e-3 * k as f64);
        }
        let a = picard_apply(&p, &d).unwrap();
        assert_eq!(
            a.zeta[0],
            PicardPath::constant(&d, 0.01, 4).unwrap().zeta[0]
        );
    }

    #[test]
    fn picard_apply_single_step_is_euler() {
        let d = gaussian(512);
        let dt = 1e-3;
        let p = PicardPath::constant(&d, dt, 2).unwrap();
        let a = picard_apply(&p, &d).unwrap();
        // hand integrator: ζ0 + dt·(W−U)(Z+V) at t = 0
        let f = compute_uwvz(d.y0(), d.dy0(), &d).unwrap();
        for i in 0..d.grid().len() {
            let expect = (f.w[i] - f.u[i]) * (f.z[i] + f.v[i]) * dt;
            assert!((a.zeta[1][i] - expect).abs() < 1e-16);
        }
    }

    #[test]
    fn picard_contracts_and_matches_rk4() {
        let d = gaussian(1024);
        let h = 0.5 * admissible_time(&d, 1.0, 0.5).unwrap().value;
        let out = picard_solve(&d, h, DEFAULT_PICARD_SAMPLES, 1e-10, 50).unwrap();
        assert!(out.is_contractive(1e-13), "{:?}", out.ratios);
        let cfg = EvolveConfig {
            dt: h / 16.0,
            horizon: h,
            ..Default::default()
        };
        let traj = evolve(&d, &cfg).unwrap();
        let diff = sup_diff(out.path.zeta.last().unwrap(), &traj.last().unwrap().zeta);
        assert!(diff < 1e-6, "{diff:e}");
    }

    #[test]
    fn zero_data_reaches_long_horizon() {
        let d = zero(32);
        let cfg = EvolveConfig {
            dt: 0.5,
            horizon: 10.0,
            store_every: 4,
            ..Default::default()
        };
        let traj = evolve(&d, &cfg).unwrap();
        assert!(traj.reached_horizon());
        assert_eq!(traj.final_time, 10.0);
        assert!(traj.states.iter().all(|s| s.zeta == traj.states[0].zeta));
    }

    #[test]
    fn stop_times_and_backward_runs() {
        let d = gaussian(512);
        let cfg = EvolveConfig {
            dt: 1e-2,
            horizon: -0.05,
            stop_times: vec![-0.025, 0.3],
            store_every: 100,
            ..Default::default()
        };
        let traj = evolve(&d, &cfg).unwrap();
        assert!(traj.reached_horizon());
        assert!(traj.state_at(-0.025).is_some());
        assert_eq!(traj.last().unwrap().t, -0.05);
        assert!(traj.states.windows(2).all(|w| w[1].t < w[0].t));
        assert!(traj
            .diagnostics
            .iter()
            .all(|d| d.size_bound_ok && d.jacobian_bound_ok));
    }
}
