//! Eulerian reference solver for
//!
//! ```text
//! ∂t u = (1 − ∂x²)⁻¹ ∂x [m (u − ux)(v + vx)],   ∂t v = (1 − ∂x²)⁻¹ ∂x [n (u − ux)(v + vx)]
//! ```
//!
//! Fourier pseudospectral in space on a periodic box, classical RK4 in time.
//! It shares no code with the Lagrangian pipeline beyond the input closures.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::fields;
use crate::initdata::{FieldSource, InitialData};

/// Boundary magnitude above which the periodic box is considered too small.
pub const ORACLE_TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerianState {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Spectral operators on `[−L, L)` with `n` equispaced nodes.
pub struct SpectralBox {
    half_width: f64,
    x: Vec<f64>,
    k: Vec<f64>,
    /// `ik` with the Nyquist mode zeroed
    ik: Vec<Complex<f64>>,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralBox")
            .field("half_width", &self.half_width)
            .field("n", &self.x.len())
            .finish()
    }
}

impl SpectralBox {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::param("oracle.half_width", "must be finite and > 0"));
        }
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::param("oracle.n_points", "must be even and >= 16"));
        }
        let h = 2.0 * half_width / n as f64;
        let x: Vec<f64> = (0..n).map(|j| -half_width + j as f64 * h).collect();
        let scale = std::f64::consts::PI / half_width;
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let j = if j <= n / 2 {
                    j as f64
                } else {
                    j as f64 - n as f64
                };
                j * scale
            })
            .collect();
        let ik = k
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                if j == n / 2 {
                    Complex::new(0.0, 0.0)
                } else {
                    Complex::new(0.0, k)
                }
            })
            .collect();
        // cosine roll-off over the outer quarter of the box
        let inner = 0.75 * half_width;
        let taper = x
            .iter()
            .map(|&x: &f64| {
                let a = x.abs();
                if a <= inner {
                    1.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (a - inner) / (half_width - inner)).cos())
                }
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(SpectralBox {
            half_width,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            x,
            k,
            ik,
            taper,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn forward(&self, f: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    fn inverse(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.ifft.process(&mut buf);
        let s = 1.0 / buf.len() as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    fn apply(&self, hat: &[Complex<f64>], mult: impl Fn(usize) -> Complex<f64>) -> Vec<f64> {
        self.inverse(hat.iter().enumerate().map(|(j, c)| c * mult(j)).collect())
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let hat = self.forward(f);
        self.apply(&hat, |j| self.ik[j])
    }

    /// `(1 − ∂x²) f`
    pub fn helmholtz(&self, f: &[f64]) -> Vec<f64> {
        let hat = self.forward(f);
        self.apply(&hat, |j| Complex::new(1.0 + self.k[j] * self.k[j], 0.0))
    }

    /// `(1 − ∂x²)⁻¹ f`
    pub fn helmholtz_inverse(&self, f: &[f64]) -> Vec<f64> {
        let hat = self.forward(f);
        self.apply(&hat, |j| {
            Complex::new(1.0 / (1.0 + self.k[j] * self.k[j]), 0.0)
        })
    }

    /// `(1 − ∂x²)⁻¹ ∂x f`
    pub fn smoothed_derivative(&self, f: &[f64]) -> Vec<f64> {
        let hat = self.forward(f);
        self.apply(&hat, |j| self.ik[j] / (1.0 + self.k[j] * self.k[j]))
    }

    /// `ux` and `m = u − uxx` from one transform.
    fn velocity_parts(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hat = self.forward(u);
        let ux = self.apply(&hat, |j| self.ik[j]);
        let m = self.apply(&hat, |j| Complex::new(1.0 + self.k[j] * self.k[j], 0.0));
        (ux, m)
    }

    pub fn state(&self, t: f64, u: Vec<f64>, v: Vec<f64>) -> Result<EulerianState> {
        for (what, f) in [("oracle u", &u), ("oracle v", &v)] {
            if f.len() != self.len() {
                return Err(Error::LengthMismatch {
                    what,
                    got: f.len(),
                    expected: self.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(what));
            }
            let edge = f[0].abs().max(f[f.len() - 1].abs());
            if edge > ORACLE_TAIL_TOLERANCE {
                log::warn!("{what} is {edge:e} at the periodic boundary; enlarge the oracle box");
            }
        }
        Ok(EulerianState {
            t,
            x: self.x.clone(),
            u,
            v,
        })
    }

    /// Initial state from velocity closures or, when `momentum` is set, from
    /// momentum closures through the spectral Helmholtz inverse.
    pub fn initial_state(
        &self,
        a: &FieldSource,
        b: &FieldSource,
        momentum: bool,
    ) -> Result<EulerianState> {
        let pts = &self.x;
        let grid_for = |src: &FieldSource| -> Result<Vec<f64>> {
            match src {
                FieldSource::Samples(_) => Err(Error::param(
                    "oracle initial data",
                    "grid samples cannot be moved to the oracle box; use a function or table",
                )),
                FieldSource::Function(f) => Ok(pts.iter().map(|&x| f(x)).collect()),
                FieldSource::Table { x, values } => {
                    Ok(crate::interp::resample_pchip(x, values, pts, 0.0))
                }
            }
        };
        let (mut u, mut v) = (grid_for(a)?, grid_for(b)?);
        if momentum {
            u = self.helmholtz_inverse(&u);
            v = self.helmholtz_inverse(&v);
        }
        self.state(0.0, u, v)
    }
}

/// `(∂t u, ∂t v)` for the state.
pub fn eulerian_rhs(state: &EulerianState, sb: &SpectralBox) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ux, m) = sb.velocity_parts(&state.u);
    let (vx, n) = sb.velocity_parts(&state.v);
    let len = state.u.len();
    let mut fm = vec![0.0; len];
    let mut fn_ = vec![0.0; len];
    for j in 0..len {
        let g = (state.u[j] - ux[j]) * (state.v[j] + vx[j]) * sb.taper[j];
        fm[j] = m[j] * g;
        fn_[j] = n[j] * g;
    }
    let du = sb.smoothed_derivative(&fm);
    let dv = sb.smoothed_derivative(&fn_);
    if du.iter().chain(&dv).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle right-hand side"));
    }
    Ok((du, dv))
}

fn rk4(state: &EulerianState, dt: f64, sb: &SpectralBox) -> Result<EulerianState> {
    let shift = |s: &EulerianState, a: f64, k: &(Vec<f64>, Vec<f64>)| EulerianState {
        t: s.t + a,
        x: Vec::new(),
        u: s.u.iter().zip(&k.0).map(|(u, d)| u + a * d).collect(),
        v: s.v.iter().zip(&k.1).map(|(v, d)| v + a * d).collect(),
    };
    let k1 = eulerian_rhs(state, sb)?;
    let k2 = eulerian_rhs(&shift(state, 0.5 * dt, &k1), sb)?;
    let k3 = eulerian_rhs(&shift(state, 0.5 * dt, &k2), sb)?;
    let k4 = eulerian_rhs(&shift(state, dt, &k3), sb)?;
    let comb = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|j| x[j] + dt / 6.0 * (a[j] + 2.0 * b[j] + 2.0 * c[j] + d[j]))
            .collect()
    };
    Ok(EulerianState {
        t: state.t + dt,
        x: state.x.clone(),
        u: comb(&state.u, &k1.0, &k2.0, &k3.0, &k4.0),
        v: comb(&state.v, &k1.1, &k2.1, &k3.1, &k4.1),
    })
}

/// Integrates to each of `times` (all of one sign, any order) with steps of
/// magnitude at most `dt`, landing on every output time exactly.
fn integrate(
    initial: &EulerianState,
    times: &[f64],
    dt: f64,
    sb: &SpectralBox,
) -> Result<Vec<EulerianState>> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].abs().total_cmp(&times[b].abs()));
    let mut out = vec![None; times.len()];
    let mut s = initial.clone();
    for idx in order {
        let target = times[idx];
        let span = target - s.t;
        let steps = (span.abs() / dt - 1e-9).ceil().max(0.0) as usize;
        let start = s.t;
        for k in 1..=steps {
            let next_t = start + span * k as f64 / steps as f64;
            s = rk4(&s, next_t - s.t, sb)?;
            s.t = next_t;
        }
        out[idx] = Some(s.clone());
    }
    Ok(out
        .into_iter()
        .map(|s| s.expect("every time visited"))
        .collect())
}

/// RK4 states at `times` (one sign). With `halving_tol`, the run is repeated
/// with `dt/2` and aborted if the two disagree by more than the tolerance.
pub fn eulerian_evolve(
    initial: &EulerianState,
    times: &[f64],
    dt: f64,
    sb: &SpectralBox,
    halving_tol: Option<f64>,
) -> Result<Vec<EulerianState>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("oracle.dt", "must be finite and > 0"));
    }
    if times.iter().any(|t| t * times[0] < 0.0) {
        return Err(Error::param(
            "oracle times",
            "must all lie on one side of t = 0",
        ));
    }
    let coarse = integrate(initial, times, dt, sb)?;
    if let Some(threshold) = halving_tol {
        let fine = integrate(initial, times, 0.5 * dt, sb)?;
        let disagreement = coarse
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| {
                a.u.iter()
                    .zip(&b.u)
                    .chain(a.v.iter().zip(&b.v))
                    .map(|(p, q)| (p - q).abs())
            })
            .fold(0.0_f64, f64::max);
        if disagreement > threshold {
            return Err(Error::UnderResolved {
                disagreement,
                threshold,
            });
        }
    }
    Ok(coarse)
}

/// Sup differences between the Lagrangian and Eulerian fields at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub t: f64,
    pub du: f64,
    pub dv: f64,
    pub dm: f64,
    pub dn: f64,
}

/// Compares `traj` with `oracle` states at their common times on the oracle
/// nodes within `window` of the origin.
pub fn cross_validate(
    traj: &Trajectory,
    data: &InitialData,
    oracle: &[EulerianState],
    sb: &SpectralBox,
    window: f64,
) -> Result<Vec<Agreement>> {
    oracle
        .iter()
        .map(|e| {
            let s = traj.state_at(e.t).ok_or_else(|| Error::TimeUnavailable {
                t: e.t,
                reason: "no Lagrangian state stored at this time".into(),
            })?;
            let idx: Vec<usize> = (0..e.x.len()).filter(|&j| e.x[j].abs() <= window).collect();
            let xs: Vec<f64> = idx.iter().map(|&j| e.x[j]).collect();
            let uv = fields::reconstruct_uv(s, &xs, data)?;
            let (m, n) = fields::reconstruct_mn(s, &xs, data, 0.0)?;
            let me = sb.helmholtz(&e.u);
            let ne = sb.helmholtz(&e.v);
            let sup = |a: &[f64], b: &dyn Fn(usize) -> f64| {
                a.iter()
                    .enumerate()
                    .fold(0.0_f64, |r, (i, v)| r.max((v - b(idx[i])).abs()))
            };
            Ok(Agreement {
                t: e.t,
                du: sup(&uv.u, &|j| e.u[j]),
                dv: sup(&uv.v, &|j| e.v[j]),
                dm: sup(&m, &|j| me[j]),
                dn: sup(&n, &|j| ne[j]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charkernel::{scan_naive, CellRule};
    use crate::stencil::{d1, sup_diff};

    fn gauss(x: f64) -> f64 {
        (-x * x).exp()
    }

    #[test]
    fn spectral_helmholtz_pair_is_identity() {
        let sb = SpectralBox::new(20.0, 256).unwrap();
        let f: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x / 2.0)).collect();
        let back = sb.helmholtz_inverse(&sb.helmholtz(&f));
        assert!(sup_diff(&back, &f) < 1e-13);
    }

    #[test]
    fn zero_state_has_zero_rhs_and_stays_zero() {
        let sb = SpectralBox::new(20.0, 64).unwrap();
        let s = sb.state(0.0, vec![0.0; 64], vec![0.0; 64]).unwrap();
        let (du, dv) = eulerian_rhs(&s, &sb).unwrap();
        assert!(du.iter().chain(&dv).all(|v| *v == 0.0));
        let out = eulerian_evolve(&s, &[0.5, 1.0], 0.1, &sb, None).unwrap();
        assert!(out
            .iter()
            .all(|e| e.u.iter().chain(&e.v).all(|v| *v == 0.0)));
    }

    #[test]
    fn equal_components_have_equal_rhs_and_trajectories() {
        let sb = SpectralBox::new(30.0, 512).unwrap();
        let u: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x)).collect();
        let s = sb.state(0.0, u.clone(), u).unwrap();
        let (du, dv) = eulerian_rhs(&s, &sb).unwrap();
        assert_eq!(du, dv);
        let out = eulerian_evolve(&s, &[0.05], 1e-2, &sb, None).unwrap();
        assert_eq!(out[0].u, out[0].v);
    }

    #[test]
    fn rhs_matches_real_space_convolution() {
        let sb = SpectralBox::new(60.0, 4096).unwrap();
        let u: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x)).collect();
        let v: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x - 1.0)).collect();
        let s = sb.state(0.0, u.clone(), v.clone()).unwrap();
        let (du, _) = eulerian_rhs(&s, &sb).unwrap();

        // flux from closed-form derivatives, then ½∫sign(x−z)e^{−|x−z|}·flux dz
        // by the O(N²) end-corrected sum on the central window
        let w: Vec<usize> = (0..sb.len())
            .filter(|&j| sb.nodes()[j].abs() <= 15.0)
            .collect();
        let xs: Vec<f64> = w.iter().map(|&j| sb.nodes()[j]).collect();
        let flux: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let (u, ux, m) = (
                    gauss(x),
                    -2.0 * x * gauss(x),
                    (3.0 - 4.0 * x * x) * gauss(x),
                );
                let s = x - 1.0;
                let (v, vx) = (gauss(s), -2.0 * s * gauss(s));
                m * (u - ux) * (v + vx)
            })
            .collect();
        let h = xs[1] - xs[0];
        let dflux = d1(&flux, h);
        let one = vec![1.0; xs.len()];
        let p = scan_naive(&xs, &one, &flux, &dflux, h, CellRule::EndCorrected).unwrap();
        let conv: Vec<f64> = p
            .left
            .iter()
            .zip(&p.right)
            .map(|(l, r)| 0.5 * (r - l))
            .collect();
        let spectral: Vec<f64> = w.iter().map(|&j| du[j]).collect();
        let diff = sup_diff(&spectral[50..xs.len() - 50], &conv[50..xs.len() - 50]);
        assert!(diff < 1e-6, "{diff:e}");
    }

    #[test]
    fn forward_then_backward_returns() {
        let sb = SpectralBox::new(30.0, 512).unwrap();
        let u: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x)).collect();
        let v: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x - 1.0)).collect();
        let s = sb.state(0.0, u, v).unwrap();
        let fwd = eulerian_evolve(&s, &[0.05], 5e-3, &sb, None).unwrap();
        let mut back_start = fwd[0].clone();
        back_start.t = 0.0;
        let back = eulerian_evolve(&back_start, &[-0.05], 5e-3, &sb, None).unwrap();
        assert!(sup_diff(&back[0].u, &s.u) < 1e-8);
    }

    #[test]
    fn step_halving_detects_large_steps() {
        let sb = SpectralBox::new(30.0, 512).unwrap();
        let u: Vec<f64> = sb.nodes().iter().map(|&x| gauss(x)).collect();
        let s = sb.state(0.0, u.clone(), u).unwrap();
        assert!(eulerian_evolve(&s, &[0.2], 1e-3, &sb, Some(1e-10)).is_ok());
        let r = eulerian_evolve(&s, &[0.2], 0.1, &sb, Some(1e-10));
        assert!(matches!(r, Err(Error::UnderResolved { .. })));
    }
}
