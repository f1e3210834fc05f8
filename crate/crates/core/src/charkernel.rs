//! Exponential-kernel integrals along characteristics.
//!
//! For a strictly increasing map `y` and weight `w` on uniform ξ-nodes,
//!
//! ```text
//! J1(ξ) = ∫_{-∞}^{ξ} e^{y(η) - y(ξ)} w(η) dη,   J2(ξ) = ∫_{ξ}^{∞} e^{y(ξ) - y(η)} w(η) dη
//! ```
//!
//! are evaluated by one left-to-right and one right-to-left recurrence. The
//! propagation factor between neighbouring nodes is the exact exponential, so
//! only the cell integrals are approximated. Weight outside the grid is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initdata::InitialData;

/// Quadrature used for a single cell `[ξ_i, ξ_{i+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellRule {
    /// Plain trapezoid, second order.
    Trapezoid,
    /// Trapezoid with the endpoint-derivative (Euler–Maclaurin) correction,
    /// fourth order. Needs `dy` and the weight derivative.
    #[default]
    EndCorrected,
}

/// Left (`J1`) and right (`J2`) kernel integrals at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPair {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

fn check_inputs(y: &[f64], dy: &[f64], weight: &[f64], dweight: &[f64]) -> Result<()> {
    let n = y.len();
    for (what, len) in [
        ("dy", dy.len()),
        ("weight", weight.len()),
        ("dweight", dweight.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                got: len,
                expected: n,
            });
        }
    }
    if n < 2 {
        return Err(Error::param("y", "at least two nodes are required"));
    }
    if weight
        .iter()
        .chain(dweight)
        .chain(y)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("kernel scan input"));
    }
    if let Some(i) = y.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotone { index: i + 1 });
    }
    Ok(())
}

/// Cell contributions `(left_i, right_i)` for the cell between nodes `i` and `i+1`.
///
/// `left_i` is expressed in the frame of node `i+1` (it feeds `J1_{i+1}`),
/// `right_i` in the frame of node `i` (it feeds `J2_i`).
#[inline]
fn cell_terms(
    i: usize,
    a: f64,
    dy: &[f64],
    w: &[f64],
    dw: &[f64],
    h: f64,
    rule: CellRule,
) -> (f64, f64) {
    let mut left = 0.5 * h * (a * w[i] + w[i + 1]);
    let mut right = 0.5 * h * (a * w[i + 1] + w[i]);
    if rule == CellRule::EndCorrected {
        let k = h * h / 12.0;
        left -= k * ((dy[i + 1] * w[i + 1] + dw[i + 1]) - a * (dy[i] * w[i] + dw[i]));
        right -= k * (a * (dw[i + 1] - dy[i + 1] * w[i + 1]) - (dw[i] - dy[i] * w[i]));
    }
    (left, right)
}

/// O(N) evaluation of `J1`, `J2` by two monotone prefix scans.
///
/// `dy` and `dweight` are the ξ-derivatives of `y` and `weight`; they only
/// enter the [`CellRule::EndCorrected`] cells.
pub fn scan_j1_j2(
    y: &[f64],
    dy: &[f64],
    weight: &[f64],
    dweight: &[f64],
    spacing: f64,
    rule: CellRule,
) -> Result<ScanPair> {
    check_inputs(y, dy, weight, dweight)?;
    let n = y.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut cells = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let a = (y[i] - y[i + 1]).exp();
        let (l, r) = cell_terms(i, a, dy, weight, dweight, spacing, rule);
        cells.push((a, l, r));
    }
    for i in 0..n - 1 {
        let (a, l, _) = cells[i];
        left[i + 1] = a * left[i] + l;
    }
    for i in (0..n - 1).rev() {
        let (a, _, r) = cells[i];
        right[i] = a * right[i + 1] + r;
    }
    Ok(ScanPair { left, right })
}

/// Direct O(N²) evaluation of the same composite rule, cell by cell, with
/// every kernel factor taken relative to the evaluation node.
pub fn scan_naive(
    y: &[f64],
    dy: &[f64],
    weight: &[f64],
    dweight: &[f64],
    spacing: f64,
    rule: CellRule,
) -> Result<ScanPair> {
    check_inputs(y, dy, weight, dweight)?;
    let n = y.len();
    let h = spacing;
    let k = h * h / 12.0;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..i {
            let g0 = (y[j] - y[i]).exp();
            let g1 = (y[j + 1] - y[i]).exp();
            let mut c = 0.5 * h * (g0 * weight[j] + g1 * weight[j + 1]);
            if rule == CellRule::EndCorrected {
                let s1 = g1 * (dy[j + 1] * weight[j + 1] + dweight[j + 1]);
                let s0 = g0 * (dy[j] * weight[j] + dweight[j]);
                c -= k * (s1 - s0);
            }
            acc += c;
        }
        left[i] = acc;
        let mut acc = 0.0;
        for j in i..n - 1 {
            let g0 = (y[i] - y[j]).exp();
            let g1 = (y[i] - y[j + 1]).exp();
            let mut c = 0.5 * h * (g0 * weight[j] + g1 * weight[j + 1]);
            if rule == CellRule::EndCorrected {
                let s1 = g1 * (dweight[j + 1] - dy[j + 1] * weight[j + 1]);
                let s0 = g0 * (dweight[j] - dy[j] * weight[j]);
                c -= k * (s1 - s0);
            }
            acc += c;
        }
        right[i] = acc;
    }
    Ok(ScanPair { left, right })
}

/// Values of u, ∂xu, v, ∂xv along the characteristics `y(t, ξ_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFields {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
}

impl KernelFields {
    pub fn zeros(n: usize) -> Self {
        KernelFields {
            u: vec![0.0; n],
            w: vec![0.0; n],
            v: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    fn from_scans(m: ScanPair, n: ScanPair) -> Self {
        let combine = |p: &ScanPair| -> (Vec<f64>, Vec<f64>) {
            p.left
                .iter()
                .zip(&p.right)
                .map(|(l, r)| (0.5 * (l + r), -0.5 * (l - r)))
                .unzip()
        };
        let (u, w) = combine(&m);
        let (v, z) = combine(&n);
        KernelFields { u, w, v, z }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `J1` of the m-weight, recovered as `U - W`.
    pub fn j1m(&self) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| u - w).collect()
    }

    /// `J2` of the m-weight, recovered as `U + W`.
    pub fn j2m(&self) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| u + w).collect()
    }

    pub fn j1n(&self) -> Vec<f64> {
        self.v.iter().zip(&self.z).map(|(v, z)| v - z).collect()
    }

    pub fn j2n(&self) -> Vec<f64> {
        self.v.iter().zip(&self.z).map(|(v, z)| v + z).collect()
    }

    /// Characteristic velocity `(W - U)(Z + V)` at every node.
    pub fn velocity(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| (self.w[i] - self.u[i]) * (self.z[i] + self.v[i]))
            .collect()
    }
}

/// Assembles U, W, V, Z from the four scans with the weighted momenta of `data`.
pub fn compute_uwvz(y: &[f64], dy: &[f64], data: &InitialData) -> Result<KernelFields> {
    let h = data.grid().spacing();
    let rule = data.cell_rule();
    let (m, n) = rayon::join(
        || scan_j1_j2(y, dy, data.mtilde0(), data.dmtilde0(), h, rule),
        || scan_j1_j2(y, dy, data.ntilde0(), data.dntilde0(), h, rule),
    );
    Ok(KernelFields::from_scans(m?, n?))
}

/// ξ-derivatives of U, W, V, Z.
#[derive(Debug, Clone, PartialEq)]
pub struct XiDerivatives {
    pub du: Vec<f64>,
    pub dw: Vec<f64>,
    pub dv: Vec<f64>,
    pub dz: Vec<f64>,
}

/// ∂ξU = ∂ξy·W, ∂ξW = ∂ξy·U − m̃0, and the same for (V, Z) with ñ0.
pub fn uwvz_xi_derivatives(dy: &[f64], fields: &KernelFields, data: &InitialData) -> XiDerivatives {
    let mt = data.mtilde0();
    let nt = data.ntilde0();
    let n = dy.len();
    let mut out = XiDerivatives {
        du: vec![0.0; n],
        dw: vec![0.0; n],
        dv: vec![0.0; n],
        dz: vec![0.0; n],
    };
    for i in 0..n {
        out.du[i] = dy[i] * fields.w[i];
        out.dw[i] = dy[i] * fields.u[i] - mt[i];
        out.dv[i] = dy[i] * fields.z[i];
        out.dz[i] = dy[i] * fields.v[i] - nt[i];
    }
    out
}
