//! Eulerian fields on arbitrary x-nodes from a characteristic state.
//!
//! Inside the image of the flow map, values come from cubic Hermite
//! interpolation in the `(y, value)` plane. The slopes are exact there:
//! `∂x u = W`, `∂x W = U − m`, so `u` and `∂xu` stay fourth order. Momenta
//! use `∂x m = ∂ξm/∂ξy` with fourth-order differences in ξ. Outside the image the fields are the pure
//! exponential tails of the kernel representation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charkernel::scan_j1_j2;
use crate::error::{Error, Result};
use crate::evolution::CharState;
use crate::initdata::{Grid, InitialData};
use crate::interp::{hermite, hermite_slope, locate};
use crate::stencil::d1;

/// Fields at time `t` on the nodes `x`; `ut`, `vt` only when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub ux: Vec<f64>,
    pub vx: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub ut: Option<Vec<f64>>,
    pub vt: Option<Vec<f64>>,
}

/// Velocity-type fields and their x-derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct UvFields {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub ux: Vec<f64>,
    pub vx: Vec<f64>,
}

/// Solves `y(ξ) = x` for a strictly increasing `y` sampled with slopes `dy`.
pub fn invert_monotone(xi: &[f64], y: &[f64], dy: &[f64], x: f64) -> Result<f64> {
    let n = y.len();
    let (lo, hi) = (y[0], y[n - 1]);
    let Some(i) = locate(y, x) else {
        return Err(Error::OutsideImage { x, lo, hi });
    };
    let (a, b) = (xi[i], xi[i + 1]);
    if x == y[i] {
        return Ok(a);
    }
    if x == y[i + 1] {
        return Ok(b);
    }
    let f = |s: f64| hermite(a, b, y[i], y[i + 1], dy[i], dy[i + 1], s) - x;
    // linear guess, then Newton safeguarded by bisection on [a, b]
    let mut s = a + (b - a) * (x - y[i]) / (y[i + 1] - y[i]);
    let (mut left, mut right) = (a, b);
    let tol = 1e-13 * (1.0 + x.abs());
    for _ in 0..60 {
        let r = f(s);
        if r.abs() <= tol {
            break;
        }
        if r < 0.0 {
            left = s;
        } else {
            right = s;
        }
        let slope = hermite_slope(a, b, y[i], y[i + 1], dy[i], dy[i + 1], s);
        let newton = s - r / slope;
        s = if slope > 0.0 && newton > left && newton < right {
            newton
        } else {
            0.5 * (left + right)
        };
    }
    Ok(s)
}

/// `ξ*` with `y(t, ξ*) = x`.
pub fn inverse_characteristic(state: &CharState, grid: &Grid, x: f64) -> Result<f64> {
    invert_monotone(grid.nodes(), &state.y, &state.dy, x)
}

/// Kernel representation of one velocity pair on sorted characteristics.
struct Branch<'a> {
    y: &'a [f64],
    u: &'a [f64],
    w: &'a [f64],
    /// momentum per unit x at the nodes
    m: Vec<f64>,
}

impl Branch<'_> {
    fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.y.len();
        let (y0, y1) = (self.y[0], self.y[n - 1]);
        if x < y0 {
            let u = 0.5 * (x - y0).exp() * (self.u[0] + self.w[0]);
            return (u, u);
        }
        if x > y1 {
            let u = 0.5 * (y1 - x).exp() * (self.u[n - 1] - self.w[n - 1]);
            return (u, -u);
        }
        let i = locate(self.y, x).expect("inside the image");
        let (a, b) = (self.y[i], self.y[i + 1]);
        let u = hermite(a, b, self.u[i], self.u[i + 1], self.w[i], self.w[i + 1], x);
        let sw0 = self.u[i] - self.m[i];
        let sw1 = self.u[i + 1] - self.m[i + 1];
        let w = hermite(a, b, self.w[i], self.w[i + 1], sw0, sw1, x);
        (u, w)
    }
}

fn eval_all(branch: &Branch<'_>, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    xs.par_iter().map(|&x| branch.eval(x)).unzip()
}

fn check_state(state: &CharState, data: &InitialData) -> Result<()> {
    if state.len() != data.grid().len() {
        return Err(Error::LengthMismatch {
            what: "state",
            got: state.len(),
            expected: data.grid().len(),
        });
    }
    let min_dy = state.min_dy();
    if !(min_dy > 0.0) {
        return Err(Error::JacobianFloor {
            t: state.t,
            min_dy,
            floor: 0.0,
        });
    }
    Ok(())
}

/// `u, v, ∂xu, ∂xv` at every `x`.
pub fn reconstruct_uv(state: &CharState, xs: &[f64], data: &InitialData) -> Result<UvFields> {
    check_state(state, data)?;
    let (m, n) = state.momenta(data);
    let f = &state.fields;
    let bu = Branch {
        y: &state.y,
        u: &f.u,
        w: &f.w,
        m,
    };
    let bv = Branch {
        y: &state.y,
        u: &f.v,
        w: &f.z,
        m: n,
    };
    let ((u, ux), (v, vx)) = rayon::join(|| eval_all(&bu, xs), || eval_all(&bv, xs));
    Ok(UvFields { u, v, ux, vx })
}

/// `m = m̃0/∂ξy` and `n = ñ0/∂ξy` carried to `x`; zero outside the image.
/// Refuses with [`Error::JacobianFloor`] when a cell it needs has `∂ξy < floor`.
pub fn reconstruct_mn(
    state: &CharState,
    xs: &[f64],
    data: &InitialData,
    floor: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(state, data)?;
    let (m, n) = state.momenta(data);
    let h = data.grid().spacing();
    let x_slopes =
        |f: &[f64]| -> Vec<f64> { d1(f, h).iter().zip(&state.dy).map(|(d, j)| d / j).collect() };
    let (sm, sn) = (x_slopes(&m), x_slopes(&n));
    xs.par_iter()
        .map(|&x| match locate(&state.y, x) {
            None => Ok((0.0, 0.0)),
            Some(i) => {
                let min_dy = state.dy[i].min(state.dy[i + 1]);
                if min_dy < floor {
                    return Err(Error::JacobianFloor {
                        t: state.t,
                        min_dy,
                        floor,
                    });
                }
                let (a, b) = (state.y[i], state.y[i + 1]);
                Ok((
                    hermite(a, b, m[i], m[i + 1], sm[i], sm[i + 1], x),
                    hermite(a, b, n[i], n[i + 1], sn[i], sn[i + 1], x),
                ))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

/// `∂tu = ½(J̌1 − J̌2)` where the J̌ scans carry the weight `∂ty·m̃0`.
fn time_derivative(
    state: &CharState,
    weight0: &[f64],
    data: &InitialData,
    xs: &[f64],
) -> Result<Vec<f64>> {
    let vel = state.fields.velocity();
    let h = data.grid().spacing();
    let weight: Vec<f64> = weight0.iter().zip(&vel).map(|(w, v)| w * v).collect();
    let dweight = d1(&weight, h);
    let scans = scan_j1_j2(&state.y, &state.dy, &weight, &dweight, h, data.cell_rule())?;
    let (j1, j2) = (&scans.left, &scans.right);
    let k = state.len();
    let val: Vec<f64> = (0..k).map(|i| 0.5 * (j1[i] - j2[i])).collect();
    // ∂x(∂tu) = ∂ty·m − ½(J̌1 + J̌2)
    let slope: Vec<f64> = (0..k)
        .map(|i| weight[i] / state.dy[i] - 0.5 * (j1[i] + j2[i]))
        .collect();
    let y = &state.y;
    let (y0, y1) = (y[0], y[k - 1]);
    Ok(xs
        .par_iter()
        .map(|&x| {
            if x < y0 {
                -0.5 * (x - y0).exp() * j2[0]
            } else if x > y1 {
                0.5 * (y1 - x).exp() * j1[k - 1]
            } else {
                let i = locate(y, x).expect("inside the image");
                hermite(
                    y[i],
                    y[i + 1],
                    val[i],
                    val[i + 1],
                    slope[i],
                    slope[i + 1],
                    x,
                )
            }
        })
        .collect())
}

/// `∂tu`, `∂tv` at every `x`.
pub fn reconstruct_dt(
    state: &CharState,
    xs: &[f64],
    data: &InitialData,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(state, data)?;
    let (ut, vt) = rayon::join(
        || time_derivative(state, data.mtilde0(), data, xs),
        || time_derivative(state, data.ntilde0(), data, xs),
    );
    Ok((ut?, vt?))
}

/// Full snapshot on `xs`.
pub fn snapshot(
    state: &CharState,
    xs: &[f64],
    data: &InitialData,
    floor: f64,
    with_dt: bool,
) -> Result<FieldSnapshot> {
    let uv = reconstruct_uv(state, xs, data)?;
    let (m, n) = reconstruct_mn(state, xs, data, floor)?;
    let (ut, vt) = if with_dt {
        let (a, b) = reconstruct_dt(state, xs, data)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(FieldSnapshot {
        t: state.t,
        x: xs.to_vec(),
        u: uv.u,
        v: uv.v,
        ux: uv.ux,
        vx: uv.vx,
        m,
        n,
        ut,
        vt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charkernel::KernelFields;
    use crate::evolution::{evolve, rk4_step, EvolveConfig};
    use crate::initdata::{
        build_grid, helmholtz_apply, helmholtz_invert, make_initial_data, FieldSource,
    };
    use crate::stencil::{sup_abs, sup_diff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn state_from_map(xi: &[f64], y: Vec<f64>, dy: Vec<f64>) -> CharState {
        let n = xi.len();
        CharState {
            t: 0.0,
            zeta: y.iter().zip(xi).map(|(y, x)| y - x).collect(),
            y,
            dy,
            acc_zv: vec![0.0; n],
            acc_wu: vec![0.0; n],
            acc_flux: vec![0.0; n],
            fields: KernelFields::zeros(n),
        }
    }

    #[test]
    fn inverse_of_identity_and_linear_maps() {
        let g = build_grid(2.0, 21, 0.0).unwrap();
        let id = state_from_map(g.nodes(), g.nodes().to_vec(), vec![1.0; 21]);
        for x in [-1.93, -0.2, 0.0, 0.77, 2.0] {
            assert!((inverse_characteristic(&id, &g, x).unwrap() - x).abs() < 1e-14);
        }
        let twice = state_from_map(
            g.nodes(),
            g.nodes().iter().map(|x| 2.0 * x).collect(),
            vec![2.0; 21],
        );
        assert!((inverse_characteristic(&twice, &g, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(
            inverse_characteristic(&twice, &g, 4.5),
            Err(Error::OutsideImage { .. })
        ));
    }

    #[test]
    fn inverse_composes_with_forward_map() {
        let d = gaussian(1024);
        let traj = evolve(
            &d,
            &EvolveConfig {
                dt: 1e-2,
                horizon: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let s = traj.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xi = d.grid().nodes();
        for _ in 0..100 {
            let x = rng.gen_range(-25.0..25.0);
            let q = inverse_characteristic(s, d.grid(), x).unwrap();
            let i = locate(xi, q).unwrap();
            let back = hermite(
                xi[i],
                xi[i + 1],
                s.y[i],
                s.y[i + 1],
                s.dy[i],
                s.dy[i + 1],
                q,
            );
            assert!((back - x).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_data_reconstructs_zero() {
        let g = build_grid(10.0, 64, 1.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(|_| 0.0),
            FieldSource::function(|_| 0.0),
            None,
            g,
        )
        .unwrap();
        let s = CharState::initial(&d).unwrap();
        let xs: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.5).collect();
        let snap = snapshot(&s, &xs, &d, 1e-3, true).unwrap();
        for f in [&snap.u, &snap.v, &snap.ux, &snap.vx, &snap.m, &snap.n] {
            assert!(f.iter().all(|v| *v == 0.0));
        }
        assert!(snap
            .ut
            .unwrap()
            .iter()
            .chain(&snap.vt.unwrap())
            .all(|v| *v == 0.0));
    }

    #[test]
    fn initial_snapshot_is_initial_data() {
        let d = gaussian(2048);
        let s = CharState::initial(&d).unwrap();
        let xs: Vec<f64> = (0..801).map(|k| -20.0 + 0.05 * k as f64 + 0.013).collect();
        let uv = reconstruct_uv(&s, &xs, &d).unwrap();
        let exact: Vec<f64> = xs.iter().map(|x| (-x * x).exp()).collect();
        assert!(sup_diff(&uv.u, &exact) < 1e-6);
        let dexact: Vec<f64> = xs.iter().map(|x| -2.0 * x * (-x * x).exp()).collect();
        assert!(sup_diff(&uv.ux, &dexact) < 1e-5);

        let (m, _) = reconstruct_mn(&s, &xs, &d, 1e-3).unwrap();
        let m_exact: Vec<f64> = xs
            .iter()
            .map(|x| (3.0 - 4.0 * x * x) * (-x * x).exp())
            .collect();
        assert!(sup_diff(&m, &m_exact) < 1e-5);

        // on the grid itself u is the Helmholtz inverse of m0
        let u_nodes = reconstruct_uv(&s, d.grid().nodes(), &d).unwrap().u;
        let inv = helmholtz_invert(d.m0(), d.grid()).unwrap();
        assert!(sup_diff(&u_nodes, &inv) < 1e-10);
    }

    #[test]
    fn tails_decay_exponentially() {
        let d = gaussian(512);
        let s = CharState::initial(&d).unwrap();
        let uv = reconstruct_uv(&s, &[-40.0, -35.0, 35.0, 40.0], &d).unwrap();
        assert!((uv.u[0] / uv.u[1] - (-5.0_f64).exp()).abs() < 1e-12);
        assert_eq!(uv.u[0], uv.ux[0]);
        assert_eq!(uv.u[3], -uv.ux[3]);
    }

    #[test]
    fn helmholtz_consistency_after_evolution() {
        let d = gaussian(4096);
        let traj = evolve(
            &d,
            &EvolveConfig {
                dt: 1e-2,
                horizon: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let s = traj.last().unwrap();
        let xg = build_grid(20.0, 4001, 1.0).unwrap();
        let uv = reconstruct_uv(s, xg.nodes(), &d).unwrap();
        let (m, _) = reconstruct_mn(s, xg.nodes(), &d, 1e-3).unwrap();
        let hu = helmholtz_apply(&uv.u, &xg).unwrap();
        let interior = 10..xg.len() - 10;
        let diff = sup_diff(&hu[interior.clone()], &m[interior]);
        assert!(diff < 1e-4, "{diff:e}");
        // sup bounds of the kernel representation
        let half = 0.5 * d.norms().m_l1 + 1e-8;
        assert!(sup_abs(&uv.u) <= half && sup_abs(&uv.ux) <= half);
    }

    #[test]
    fn time_derivative_matches_centered_difference() {
        let d = gaussian(2048);
        let s0 = CharState::initial(&d).unwrap();
        let xs: Vec<f64> = (0..401).map(|k| -10.0 + 0.05 * k as f64).collect();
        let (ut, _) = reconstruct_dt(&s0, &xs, &d).unwrap();
        let err = |dt: f64| {
            let p = rk4_step(&s0, dt, &d, 1e-3).unwrap();
            let q = rk4_step(&s0, -dt, &d, 1e-3).unwrap();
            let up = reconstruct_uv(&p, &xs, &d).unwrap().u;
            let uq = reconstruct_uv(&q, &xs, &d).unwrap().u;
            let fd: Vec<f64> = up
                .iter()
                .zip(&uq)
                .map(|(a, b)| (a - b) / (2.0 * dt))
                .collect();
            sup_diff(&fd, &ut)
        };
        let (e1, e2) = (err(5e-3), err(2.5e-3));
        assert!(e1 < 5e-4, "{e1:e}");
        let ratio = e1 / e2;
        assert!(ratio > 3.5, "centered-difference error ratio {ratio}");
    }

    #[test]
    fn symmetric_data_gives_equal_time_derivatives() {
        let g = build_grid(30.0, 512, 5.0).unwrap();
        let f = FieldSource::function(|x| (-x * x).exp());
        let d = make_initial_data(f.clone(), f, None, g).unwrap();
        let s = CharState::initial(&d).unwrap();
        let (ut, vt) = reconstruct_dt(&s, d.grid().nodes(), &d).unwrap();
        assert_eq!(ut, vt);
    }

    #[test]
    fn momentum_refuses_collapsed_cells() {
        let g = build_grid(2.0, 21, 0.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(|x| (-x * x).exp()),
            FieldSource::function(|x| (-x * x).exp()),
            None,
            build_grid(2.0, 21, 0.0).unwrap(),
        )
        .unwrap();
        let mut dy = vec![1.0; 21];
        dy[10] = 1e-5;
        let s = state_from_map(g.nodes(), g.nodes().to_vec(), dy);
        assert!(matches!(
            reconstruct_mn(&s, &[0.01], &d, 1e-3),
            Err(Error::JacobianFloor { .. })
        ));
        assert!(reconstruct_mn(&s, &[1.5], &d, 1e-3).is_ok());
    }
}
