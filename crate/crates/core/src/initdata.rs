//! ξ-grids, initial data, the Helmholtz pair `1 − ∂x²` / `½e^{−|x|}∗`, and
//! the discrete `X^k` norms.

use std::fmt;
use std::sync::Arc;

use crate::charkernel::{scan_j1_j2, CellRule};
use crate::error::{Error, Result};
use crate::interp;
use crate::stencil::{d1, d2, derivative, sup_abs, trapezoid_abs};

/// Boundary magnitude above which truncation of ℝ to `[−L, L]` is reported.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-8;

/// Smallest grid the fourth-order stencils are used on.
pub const MIN_STENCIL_POINTS: usize = 16;

/// Uniform nodes on `[−L, L]`, symmetric to the last bit about the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    half_width: f64,
    spacing: f64,
    pad: f64,
}

impl Grid {
    pub fn new(half_width: f64, n_points: usize, pad: f64) -> Result<Self> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(Error::param(
                "half_width",
                format!("must be finite and > 0, got {half_width}"),
            ));
        }
        if n_points < 3 {
            return Err(Error::param(
                "n_points",
                format!("need at least 3 nodes, got {n_points}"),
            ));
        }
        if !pad.is_finite() || pad < 0.0 || pad >= half_width {
            return Err(Error::param(
                "pad",
                format!("must satisfy 0 <= pad < L, got {pad}"),
            ));
        }
        let last = (n_points - 1) as f64;
        let nodes = (0..n_points)
            .map(|i| half_width * (2.0 * i as f64 - last) / last)
            .collect();
        Ok(Grid {
            nodes,
            half_width,
            spacing: 2.0 * half_width / last,
            pad,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn pad(&self) -> f64 {
        self.pad
    }

    /// Index of the node closest to `x`, or `None` outside the grid.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        if !(x >= -self.half_width && x <= self.half_width) {
            return None;
        }
        let i = ((x + self.half_width) / self.spacing).round() as usize;
        Some(i.min(self.len() - 1))
    }

    fn check_samples(&self, what: &'static str, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch {
                what,
                got: f.len(),
                expected: self.len(),
            });
        }
        if self.len() < MIN_STENCIL_POINTS {
            return Err(Error::param(
                "n_points",
                format!("stencil operations need at least {MIN_STENCIL_POINTS} nodes"),
            ));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }
}

/// Builds the uniform ξ-grid on `[−L, L]`.
pub fn build_grid(half_width: f64, n_points: usize, pad: f64) -> Result<Grid> {
    Grid::new(half_width, n_points, pad)
}

/// `u − u''` with fourth-order differences.
pub fn helmholtz_apply(u: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_samples("u", u)?;
    let upp = d2(u, grid.spacing());
    Ok(u.iter().zip(&upp).map(|(a, b)| a - b).collect())
}

/// `½∫e^{−|x−z|} m(z) dz` by the two-sided exponential scan.
pub fn helmholtz_invert(m: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_samples("m", m)?;
    let tails = tail_report(m, grid);
    if tails.boundary_max > DEFAULT_TAIL_TOLERANCE {
        log::warn!(
            "momentum not decayed at the boundary (max {:e}, tail mass {:e}); truncation bias expected",
            tails.boundary_max,
            tails.tail_l1
        );
    }
    let h = grid.spacing();
    let dm = d1(m, h);
    let one = vec![1.0; m.len()];
    let scans = scan_j1_j2(grid.nodes(), &one, m, &dm, h, CellRule::EndCorrected)?;
    Ok(scans
        .left
        .iter()
        .zip(&scans.right)
        .map(|(l, r)| 0.5 * (l + r))
        .collect())
}

/// Boundary diagnostics for truncating ℝ to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TailReport {
    /// Largest magnitude on nodes within `pad` of either end (at least the end nodes).
    pub boundary_max: f64,
    /// L¹ mass in the same guard region.
    pub tail_l1: f64,
}

pub fn tail_report(f: &[f64], grid: &Grid) -> TailReport {
    let n = f.len();
    if n == 0 {
        return TailReport::default();
    }
    let cut = grid.half_width() - grid.pad();
    let mut report = TailReport {
        boundary_max: f[0].abs().max(f[n - 1].abs()),
        tail_l1: 0.0,
    };
    for (x, v) in grid.nodes().iter().zip(f) {
        if x.abs() >= cut {
            report.boundary_max = report.boundary_max.max(v.abs());
            report.tail_l1 += v.abs() * grid.spacing();
        }
    }
    report
}

/// Discrete `X^k = C^k ∩ W^{k,1}` norm components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XkNorm {
    /// `Σ_{i≤k} max|∂ⁱf|`
    pub c_norm: f64,
    /// `Σ_{i≤k} ∫|∂ⁱf|` by the trapezoid rule
    pub l1_norm: f64,
    /// `c_norm + l1_norm`
    pub value: f64,
}

pub fn xk_norm(f: &[f64], k: usize, grid: &Grid) -> Result<XkNorm> {
    if k > 0 {
        grid.check_samples("f", f)?;
    } else if f.len() != grid.len() {
        return Err(Error::LengthMismatch {
            what: "f",
            got: f.len(),
            expected: grid.len(),
        });
    }
    let h = grid.spacing();
    let (mut c_norm, mut l1_norm) = (0.0, 0.0);
    for order in 0..=k {
        let g = derivative(f, h, order);
        c_norm += sup_abs(&g);
        l1_norm += trapezoid_abs(&g, h);
    }
    Ok(XkNorm {
        c_norm,
        l1_norm,
        value: c_norm + l1_norm,
    })
}

type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Where a field comes from: a closure, samples on the working grid, or a
/// tabulated `(x, value)` list resampled by monotone cubic interpolation.
#[derive(Clone)]
pub enum FieldSource {
    Function(Profile),
    Samples(Vec<f64>),
    Table { x: Vec<f64>, values: Vec<f64> },
}

impl fmt::Debug for FieldSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSource::Function(_) => f.write_str("Function(..)"),
            FieldSource::Samples(s) => write!(f, "Samples(len = {})", s.len()),
            FieldSource::Table { x, .. } => write!(f, "Table(len = {})", x.len()),
        }
    }
}

impl FieldSource {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FieldSource::Function(Arc::new(f))
    }

    pub fn table(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if x.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "table values",
                got: values.len(),
                expected: x.len(),
            });
        }
        if x.len() < 2 {
            return Err(Error::param("table", "need at least two rows"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param(
                "table",
                "x column must be strictly increasing",
            ));
        }
        Ok(FieldSource::Table { x, values })
    }

    /// Samples on the grid nodes.
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            FieldSource::Samples(s) if s.len() != grid.len() => Err(Error::LengthMismatch {
                what: "samples",
                got: s.len(),
                expected: grid.len(),
            }),
            FieldSource::Samples(s) => Ok(s.clone()),
            _ => Ok(self.eval_with(grid, grid.nodes())),
        }
    }

    /// Values at arbitrary points; grid samples are interpolated on `grid`.
    /// Points outside tabulated data evaluate to zero (decayed data).
    pub fn eval_with(&self, grid: &Grid, xs: &[f64]) -> Vec<f64> {
        match self {
            FieldSource::Function(f) => xs.iter().map(|&x| f(x)).collect(),
            FieldSource::Samples(s) => interp::resample_pchip(grid.nodes(), s, xs, 0.0),
            FieldSource::Table { x, values } => interp::resample_pchip(x, values, xs, 0.0),
        }
    }

    /// The reflected profile `x ↦ f(−x)`.
    pub fn reflected(&self) -> Self {
        match self {
            FieldSource::Function(f) => {
                let f = Arc::clone(f);
                FieldSource::Function(Arc::new(move |x| f(-x)))
            }
            // symmetric grid: reversal is exact reflection
            FieldSource::Samples(s) => FieldSource::Samples(s.iter().rev().copied().collect()),
            FieldSource::Table { x, values } => FieldSource::Table {
                x: x.iter().rev().map(|v| -v).collect(),
                values: values.iter().rev().copied().collect(),
            },
        }
    }

    /// `x ↦ f(x) + g(x)`; grid samples get `g` at the nodes of `grid`.
    pub fn plus(&self, g: impl Fn(f64) -> f64 + Send + Sync + 'static, grid: &Grid) -> Self {
        match self {
            FieldSource::Function(f) => {
                let f = Arc::clone(f);
                FieldSource::Function(Arc::new(move |x| f(x) + g(x)))
            }
            FieldSource::Samples(s) => {
                FieldSource::Samples(s.iter().zip(grid.nodes()).map(|(v, &x)| v + g(x)).collect())
            }
            FieldSource::Table { x, values } => {
                let (x, values) = (x.clone(), values.clone());
                FieldSource::Function(Arc::new(move |p| {
                    interp::resample_pchip(&x, &values, &[p], 0.0)[0] + g(p)
                }))
            }
        }
    }

    /// `x ↦ λ·f(x)`.
    pub fn scaled(&self, lambda: f64) -> Self {
        match self {
            FieldSource::Function(f) => {
                let f = Arc::clone(f);
                FieldSource::Function(Arc::new(move |x| lambda * f(x)))
            }
            FieldSource::Samples(s) => FieldSource::Samples(s.iter().map(|v| lambda * v).collect()),
            FieldSource::Table { x, values } => FieldSource::Table {
                x: x.clone(),
                values: values.iter().map(|v| lambda * v).collect(),
            },
        }
    }
}

/// Reference map `y0` with its derivative.
#[derive(Clone)]
pub struct ReferenceMap {
    pub y: Profile,
    pub dy: Profile,
}

impl fmt::Debug for ReferenceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ReferenceMap(..)")
    }
}

impl ReferenceMap {
    pub fn new(
        y: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dy: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ReferenceMap {
            y: Arc::new(y),
            dy: Arc::new(dy),
        }
    }
}

/// Cached norms of the initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataNorms {
    pub m_c: f64,
    pub m_l1: f64,
    pub n_c: f64,
    pub n_l1: f64,
    /// `‖∂ξy0‖_C`
    pub dy0_c: f64,
    /// `min ∂ξy0`, the constant `c` with `y0 − ξ ∈ E_c`
    pub dy0_min: f64,
    /// `‖y0(·) − (·)‖_C`
    pub zeta0_c: f64,
    pub tail_m: TailReport,
    pub tail_n: TailReport,
}

impl DataNorms {
    pub fn is_zero(&self) -> bool {
        self.m_l1 == 0.0 && self.n_l1 == 0.0 && self.m_c == 0.0 && self.n_c == 0.0
    }
}

/// Initial data sampled on the ξ-grid, with the weighted momenta
/// `m̃0 = m0(y0(ξ))∂ξy0(ξ)`, `ñ0 = n0(y0(ξ))∂ξy0(ξ)` that drive every scan.
#[derive(Debug, Clone)]
pub struct InitialData {
    grid: Grid,
    rule: CellRule,
    u0: Vec<f64>,
    v0: Vec<f64>,
    m0: Vec<f64>,
    n0: Vec<f64>,
    y0: Vec<f64>,
    dy0: Vec<f64>,
    mtilde0: Vec<f64>,
    ntilde0: Vec<f64>,
    dmtilde0: Vec<f64>,
    dntilde0: Vec<f64>,
    identity_map: bool,
    norms: DataNorms,
}

enum Form {
    Velocity,
    Momentum,
}

impl InitialData {
    /// Data given by velocities; momenta are `m0 = u0 − u0''`, `n0 = v0 − v0''`.
    pub fn from_velocity(
        u0: FieldSource,
        v0: FieldSource,
        y0: Option<ReferenceMap>,
        grid: Grid,
        rule: CellRule,
    ) -> Result<Self> {
        Self::build(Form::Velocity, u0, v0, y0, grid, rule)
    }

    /// Data given by momenta; velocities are recovered by the Helmholtz inverse.
    pub fn from_momentum(
        m0: FieldSource,
        n0: FieldSource,
        y0: Option<ReferenceMap>,
        grid: Grid,
        rule: CellRule,
    ) -> Result<Self> {
        Self::build(Form::Momentum, m0, n0, y0, grid, rule)
    }

    fn build(
        form: Form,
        a: FieldSource,
        b: FieldSource,
        y0: Option<ReferenceMap>,
        grid: Grid,
        rule: CellRule,
    ) -> Result<Self> {
        if grid.len() < MIN_STENCIL_POINTS {
            return Err(Error::param(
                "n_points",
                format!("initial data needs at least {MIN_STENCIL_POINTS} nodes"),
            ));
        }
        let h = grid.spacing();
        let (u0, v0, m0, n0) = match form {
            Form::Velocity => {
                let u0 = a.sample(&grid)?;
                let v0 = b.sample(&grid)?;
                let m0 = helmholtz_apply(&u0, &grid)?;
                let n0 = helmholtz_apply(&v0, &grid)?;
                (u0, v0, m0, n0)
            }
            Form::Momentum => {
                let m0 = a.sample(&grid)?;
                let n0 = b.sample(&grid)?;
                let u0 = helmholtz_invert(&m0, &grid)?;
                let v0 = helmholtz_invert(&n0, &grid)?;
                (u0, v0, m0, n0)
            }
        };

        let identity_map = y0.is_none();
        let (y0s, dy0s) = match &y0 {
            None => (grid.nodes().to_vec(), vec![1.0; grid.len()]),
            Some(map) => (
                grid.nodes().iter().map(|&x| (map.y)(x)).collect::<Vec<_>>(),
                grid.nodes()
                    .iter()
                    .map(|&x| (map.dy)(x))
                    .collect::<Vec<_>>(),
            ),
        };
        if let Some((index, &value)) = dy0s
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NotIncreasing { index, value });
        }

        let (mtilde0, ntilde0) = if identity_map {
            (m0.clone(), n0.clone())
        } else {
            let along = |field: &[f64], src: &FieldSource| -> Vec<f64> {
                let at_y0 = match (&form, src) {
                    (Form::Momentum, FieldSource::Function(_)) => src.eval_with(&grid, &y0s),
                    _ => {
                        let slopes = d1(field, h);
                        y0s.iter()
                            .map(|&y| {
                                interp::eval_hermite(grid.nodes(), field, &slopes, y).unwrap_or(0.0)
                            })
                            .collect()
                    }
                };
                at_y0.iter().zip(&dy0s).map(|(m, d)| m * d).collect()
            };
            (along(&m0, &a), along(&n0, &b))
        };
        let dmtilde0 = d1(&mtilde0, h);
        let dntilde0 = d1(&ntilde0, h);

        let tail_m = tail_report(&m0, &grid);
        let tail_n = tail_report(&n0, &grid);
        for (name, t) in [("m0", tail_m), ("n0", tail_n)] {
            if t.boundary_max > DEFAULT_TAIL_TOLERANCE {
                log::warn!(
                    "{name} is not decayed at the grid boundary (max {:e}, tail mass {:e})",
                    t.boundary_max,
                    t.tail_l1
                );
            }
        }
        let norms = DataNorms {
            m_c: sup_abs(&m0),
            m_l1: trapezoid_abs(&m0, h),
            n_c: sup_abs(&n0),
            n_l1: trapezoid_abs(&n0, h),
            dy0_c: sup_abs(&dy0s),
            dy0_min: dy0s.iter().copied().fold(f64::INFINITY, f64::min),
            zeta0_c: y0s
                .iter()
                .zip(grid.nodes())
                .fold(0.0_f64, |m, (y, x)| m.max((y - x).abs())),
            tail_m,
            tail_n,
        };
        Ok(InitialData {
            grid,
            rule,
            u0,
            v0,
            m0,
            n0,
            y0: y0s,
            dy0: dy0s,
            mtilde0,
            ntilde0,
            dmtilde0,
            dntilde0,
            identity_map,
            norms,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn cell_rule(&self) -> CellRule {
        self.rule
    }
    pub fn u0(&self) -> &[f64] {
        &self.u0
    }
    pub fn v0(&self) -> &[f64] {
        &self.v0
    }
    pub fn m0(&self) -> &[f64] {
        &self.m0
    }
    pub fn n0(&self) -> &[f64] {
        &self.n0
    }
    pub fn y0(&self) -> &[f64] {
        &self.y0
    }
    pub fn dy0(&self) -> &[f64] {
        &self.dy0
    }
    pub fn mtilde0(&self) -> &[f64] {
        &self.mtilde0
    }
    pub fn ntilde0(&self) -> &[f64] {
        &self.ntilde0
    }
    pub fn dmtilde0(&self) -> &[f64] {
        &self.dmtilde0
    }
    pub fn dntilde0(&self) -> &[f64] {
        &self.dntilde0
    }
    pub fn norms(&self) -> &DataNorms {
        &self.norms
    }
    pub fn has_identity_map(&self) -> bool {
        self.identity_map
    }

    /// Same data with a different cell quadrature.
    pub fn with_cell_rule(mut self, rule: CellRule) -> Self {
        self.rule = rule;
        self
    }
}

/// Velocity-form constructor under its operation name.
pub fn make_initial_data(
    u0: FieldSource,
    v0: FieldSource,
    y0: Option<ReferenceMap>,
    grid: Grid,
) -> Result<InitialData> {
    InitialData::from_velocity(u0, v0, y0, grid, CellRule::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::sup_diff;

    fn gauss(x: f64) -> f64 {
        (-x * x).exp()
    }

    /// Brute-force composite Simpson of `g` on `[−l, l]` with `pts` (odd) nodes.
    fn dense(g: impl Fn(f64) -> f64, l: f64, pts: usize) -> f64 {
        let h = 2.0 * l / (pts - 1) as f64;
        let f = |i: usize| g(-l + i as f64 * h);
        let inner: f64 = (1..pts - 1)
            .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(i))
            .sum();
        h / 3.0 * (inner + f(0) + f(pts - 1))
    }

    #[test]
    fn grid_examples() {
        let g = build_grid(1.0, 3, 0.0).unwrap();
        assert_eq!(g.nodes(), &[-1.0, 0.0, 1.0]);
        let g = build_grid(30.0, 2048, 5.0).unwrap();
        assert_eq!(g.spacing(), 60.0 / 2047.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(build_grid(0.0, 3, 0.0).is_err());
        assert!(build_grid(f64::NAN, 16, 0.0).is_err());
        assert!(build_grid(1.0, 2, 0.0).is_err());
        assert!(build_grid(1.0, 16, 1.0).is_err());
        assert!(build_grid(1.0, 16, -0.1).is_err());
    }

    #[test]
    fn grid_is_mirror_symmetric() {
        let g = build_grid(30.0, 2048, 5.0).unwrap();
        let n = g.len();
        for i in 0..n {
            assert_eq!(g.nodes()[i], -g.nodes()[n - 1 - i]);
        }
    }

    #[test]
    fn helmholtz_apply_on_gaussian_and_cosine() {
        let g = build_grid(30.0, 4096, 0.0).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|&x| gauss(x)).collect();
        let m = helmholtz_apply(&u, &g).unwrap();
        let exact: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&x| (3.0 - 4.0 * x * x) * gauss(x))
            .collect();
        assert!(sup_diff(&m, &exact) < 1e-6);

        let c: Vec<f64> = g.nodes().iter().map(|x| x.cos()).collect();
        let mc = helmholtz_apply(&c, &g).unwrap();
        let twice: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        assert!(sup_diff(&mc, &twice) < 1e-6);

        let zero = helmholtz_apply(&vec![0.0; g.len()], &g).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn helmholtz_apply_converges_at_fourth_order() {
        let err = |n: usize| {
            let g = build_grid(30.0, n, 0.0).unwrap();
            let u: Vec<f64> = g.nodes().iter().map(|&x| gauss(x)).collect();
            let m = helmholtz_apply(&u, &g).unwrap();
            g.nodes().iter().zip(&m).fold(0.0_f64, |e, (&x, v)| {
                e.max((v - (3.0 - 4.0 * x * x) * gauss(x)).abs())
            })
        };
        // halve the spacing: (n − 1) doubles
        let (e1, e2) = (err(1025), err(2049));
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn helmholtz_invert_examples() {
        let g = build_grid(30.0, 4096, 5.0).unwrap();
        let zero = helmholtz_invert(&vec![0.0; g.len()], &g).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        let m: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&x| (3.0 - 4.0 * x * x) * gauss(x))
            .collect();
        let u = helmholtz_invert(&m, &g).unwrap();
        let exact: Vec<f64> = g.nodes().iter().map(|&x| gauss(x)).collect();
        assert!(sup_diff(&u, &exact) < 1e-7);
    }

    #[test]
    fn helmholtz_invert_matches_dense_quadrature_at_origin() {
        let g = build_grid(30.0, 2049, 5.0).unwrap();
        let m: Vec<f64> = g.nodes().iter().map(|&x| gauss(x)).collect();
        let u = helmholtz_invert(&m, &g).unwrap();
        let reference = 0.5 * dense(|z| (-z.abs()).exp() * gauss(z), 30.0, 20481);
        assert!(
            (u[1024] - reference).abs() < 1e-6,
            "{} vs {reference}",
            u[1024]
        );
    }

    #[test]
    fn inverse_pair_is_identity_on_decayed_data() {
        let g = build_grid(30.0, 4096, 5.0).unwrap();
        let u: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&x| (-(x - 0.5) * (x - 0.5)).exp())
            .collect();
        let m = helmholtz_apply(&u, &g).unwrap();
        let m2 = helmholtz_apply(&helmholtz_invert(&m, &g).unwrap(), &g).unwrap();
        let rel = sup_diff(&m, &m2) / sup_abs(&m);
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn xk_norm_examples() {
        let g = build_grid(30.0, 4096, 5.0).unwrap();
        let z = xk_norm(&vec![0.0; g.len()], 2, &g).unwrap();
        assert_eq!((z.c_norm, z.l1_norm, z.value), (0.0, 0.0, 0.0));

        let g = build_grid(30.0, 4097, 5.0).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| (-x.abs()).exp()).collect();
        let n0 = xk_norm(&f, 0, &g).unwrap();
        assert!((n0.c_norm - 1.0).abs() < 1e-12);
        assert!((n0.l1_norm - 2.0).abs() < 1e-4);

        // k = 1 on a gaussian against 10x-resolution brute force
        let f: Vec<f64> = g.nodes().iter().map(|&x| gauss(x)).collect();
        let n1 = xk_norm(&f, 1, &g).unwrap();
        let pts = 40951;
        let hf = 60.0 / (pts - 1) as f64;
        let dg = |x: f64| -2.0 * x * gauss(x);
        let sup_d = (0..pts)
            .map(|i| dg(-30.0 + i as f64 * hf).abs())
            .fold(0.0, f64::max);
        let l1 = dense(|x| gauss(x).abs(), 30.0, pts) + dense(|x| dg(x).abs(), 30.0, pts);
        // node sampling misses the maximiser of |g'| by O(h²)
        assert!((n1.c_norm - (1.0 + sup_d)).abs() < 2e-4);
        assert!((n1.l1_norm - l1).abs() < 5e-4);
    }

    #[test]
    fn xk_norm_is_monotone_in_k() {
        let g = build_grid(20.0, 1024, 2.0).unwrap();
        let f: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&x| x.sin() * gauss(x / 2.0))
            .collect();
        let mut prev = xk_norm(&f, 0, &g).unwrap();
        for k in 1..4 {
            let cur = xk_norm(&f, k, &g).unwrap();
            assert!(cur.c_norm >= prev.c_norm && cur.l1_norm >= prev.l1_norm);
            prev = cur;
        }
    }

    #[test]
    fn zero_data_has_zero_norms() {
        let g = build_grid(10.0, 64, 1.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(|_| 0.0),
            FieldSource::function(|_| 0.0),
            None,
            g,
        )
        .unwrap();
        assert!(d.m0().iter().chain(d.n0()).all(|v| *v == 0.0));
        assert!(d.norms().is_zero());
    }

    #[test]
    fn identity_map_by_default() {
        let g = build_grid(30.0, 512, 5.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(gauss),
            FieldSource::function(gauss),
            None,
            g.clone(),
        )
        .unwrap();
        assert_eq!(d.y0(), g.nodes());
        assert!(d.dy0().iter().all(|v| *v == 1.0));
        assert_eq!(d.mtilde0(), d.m0());
        assert_eq!(d.norms().dy0_min, 1.0);
        assert_eq!(d.norms().zeta0_c, 0.0);
    }

    #[test]
    fn m0_l1_norm_matches_brute_force() {
        let g = build_grid(30.0, 4096, 5.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(gauss),
            FieldSource::function(|x| gauss(x - 1.0)),
            None,
            g,
        )
        .unwrap();
        let reference = dense(|x| ((3.0 - 4.0 * x * x) * gauss(x)).abs(), 30.0, 40951);
        // trapezoid of |m0| is second order across the sign changes of m0
        assert!(
            (d.norms().m_l1 - reference).abs() < 5e-4,
            "{} vs {reference}",
            d.norms().m_l1
        );
        assert!((d.norms().n_l1 - reference).abs() < 5e-4);
    }

    #[test]
    fn non_increasing_reference_map_is_rejected() {
        let g = build_grid(10.0, 64, 1.0).unwrap();
        let map = ReferenceMap::new(|x| -x, |_| -1.0);
        let err = make_initial_data(
            FieldSource::function(gauss),
            FieldSource::function(gauss),
            Some(map),
            g,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotIncreasing { index: 0, .. }));
    }

    #[test]
    fn scaled_reference_map_weights_momentum() {
        let g = build_grid(20.0, 2048, 2.0).unwrap();
        let c = 0.8;
        let map = ReferenceMap::new(move |x| c * x, move |_| c);
        let d = InitialData::from_momentum(
            FieldSource::function(gauss),
            FieldSource::function(gauss),
            Some(map),
            g.clone(),
            CellRule::EndCorrected,
        )
        .unwrap();
        for (i, &x) in g.nodes().iter().enumerate() {
            assert!((d.mtilde0()[i] - c * gauss(c * x)).abs() < 1e-14);
        }
        assert_eq!(d.norms().dy0_min, c);
    }

    #[test]
    fn reflected_sources() {
        let g = build_grid(5.0, 33, 1.0).unwrap();
        let f = FieldSource::function(|x| x + 2.0);
        let r = f.reflected().sample(&g).unwrap();
        for (x, v) in g.nodes().iter().zip(&r) {
            assert_eq!(*v, -x + 2.0);
        }
        let s = FieldSource::Samples(f.sample(&g).unwrap());
        assert_eq!(s.reflected().sample(&g).unwrap(), r);
    }
}
