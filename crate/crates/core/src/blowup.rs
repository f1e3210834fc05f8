//! Blow-up diagnostics: the maximal-interval criteria along a run, the
//! sufficient condition at a probe point, and the rate inequalities.
//!
//! Along the characteristic through the probe,
//! `M = −(ux·n − u·n + vx·m + v·m)` and `N = m + n`.

use serde::{Deserialize, Serialize};

use crate::charkernel::compute_uwvz;
use crate::error::{Error, Result};
use crate::evolution::{update_jacobian, CharState, Trajectory};
use crate::initdata::InitialData;
use crate::stencil::sup_abs;

/// Criteria quantities at one accepted state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub t: f64,
    pub min_dy: f64,
    /// `sup (ux·n − u·n + vx·m + v·m)` along characteristics
    pub crit3: f64,
    /// `∫₀ᵗ (‖m‖_C + ‖n‖_C) dτ`, trapezoid between monitored times
    pub crit4_acc: f64,
    /// `‖m‖_C + ‖n‖_C`
    pub sup_mn: f64,
    pub jacobian_exp_discrepancy: f64,
}

/// `(ux·n − u·n + vx·m + v·m)` at node `i`.
fn flux_gradient(w: f64, u: f64, z: f64, v: f64, m: f64, n: f64) -> f64 {
    w * n - u * n + z * m + v * m
}

pub fn monitor(state: &CharState, data: &InitialData, prev: Option<&BlowupReport>) -> BlowupReport {
    let (m, n) = state.momenta(data);
    let f = &state.fields;
    let crit3 = (0..state.len())
        .map(|i| flux_gradient(f.w[i], f.u[i], f.z[i], f.v[i], m[i], n[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    let sup_mn = sup_abs(&m) + sup_abs(&n);
    let crit4_acc = match prev {
        Some(p) => p.crit4_acc + 0.5 * (p.sup_mn + sup_mn) * (state.t - p.t).abs(),
        None => 0.0,
    };
    BlowupReport {
        t: state.t,
        min_dy: state.min_dy(),
        crit3,
        crit4_acc,
        sup_mn,
        jacobian_exp_discrepancy: update_jacobian(state, data).discrepancy,
    }
}

/// Reports for every stored state of a trajectory.
pub fn monitor_trajectory(traj: &Trajectory, data: &InitialData) -> Vec<BlowupReport> {
    let mut out: Vec<BlowupReport> = Vec::with_capacity(traj.states.len());
    for s in &traj.states {
        let r = monitor(s, data, out.last());
        out.push(r);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    BlowUpForward,
    BlowUpBackward,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SufficientConditionResult {
    /// Probe position (snapped to a characteristic foot point).
    pub x0: f64,
    /// ξ-node of the probe, when evaluated on data.
    pub node: Option<usize>,
    pub M0: f64,
    pub N0: f64,
    pub L0: f64,
    /// `M0² − 2L0N0`
    pub discriminant: f64,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub verdict: Verdict,
}

#[allow(non_snake_case)]
impl SufficientConditionResult {
    /// Roots `t_j = (−M0 + (−1)^j √(M0² − 2L0N0))/(L0N0)` and the verdict.
    pub fn from_scalars(x0: f64, M0: f64, N0: f64, L0: f64) -> Self {
        let discriminant = M0 * M0 - 2.0 * L0 * N0;
        let (t1, t2) = if discriminant >= 0.0 && L0 * N0 > 0.0 {
            let s = discriminant.sqrt();
            (Some((-M0 - s) / (L0 * N0)), Some((-M0 + s) / (L0 * N0)))
        } else {
            (None, None)
        };
        let edge = (2.0 * L0 * N0).sqrt();
        let verdict = if M0 < -edge {
            Verdict::BlowUpForward
        } else if M0 > edge {
            Verdict::BlowUpBackward
        } else {
            Verdict::Inconclusive
        };
        SufficientConditionResult {
            x0,
            node: None,
            M0,
            N0,
            L0,
            discriminant,
            t1,
            t2,
            verdict,
        }
    }

    /// Signed bound on the collapse time: `t1` forward, `t2` backward.
    pub fn collapse_bound(&self) -> Option<f64> {
        match self.verdict {
            Verdict::BlowUpForward => self.t1,
            Verdict::BlowUpBackward => self.t2,
            Verdict::Inconclusive => None,
        }
    }
}

/// Evaluates the sufficient condition at `x0` (default: argmax of `m0 + n0`).
pub fn sufficient_condition(
    data: &InitialData,
    x0: Option<f64>,
) -> Result<SufficientConditionResult> {
    if let Some(i) = data.m0().iter().position(|v| *v < 0.0) {
        return Err(Error::Hypothesis(format!(
            "m0 must be nonnegative; m0 = {:e} at node {i}",
            data.m0()[i]
        )));
    }
    if let Some(i) = data.n0().iter().position(|v| *v < 0.0) {
        return Err(Error::Hypothesis(format!(
            "n0 must be nonnegative; n0 = {:e} at node {i}",
            data.n0()[i]
        )));
    }
    let y0 = data.y0();
    let (mt, nt, dy0) = (data.mtilde0(), data.ntilde0(), data.dy0());
    let node = match x0 {
        Some(x) => {
            let (lo, hi) = (y0[0], y0[y0.len() - 1]);
            if !(x >= lo && x <= hi) {
                return Err(Error::OutsideImage { x, lo, hi });
            }
            (0..y0.len())
                .min_by(|&a, &b| (y0[a] - x).abs().total_cmp(&(y0[b] - x).abs()))
                .expect("non-empty grid")
        }
        None => (0..y0.len())
            .max_by(|&a, &b| ((mt[a] + nt[a]) / dy0[a]).total_cmp(&((mt[b] + nt[b]) / dy0[b])))
            .expect("non-empty grid"),
    };
    let m = mt[node] / dy0[node];
    let n = nt[node] / dy0[node];
    if !(m > 0.0 && n > 0.0) {
        return Err(Error::Hypothesis(format!(
            "m0 and n0 must be positive at the probe; got {m:e}, {n:e} at x0 = {}",
            y0[node]
        )));
    }
    let f = compute_uwvz(y0, dy0, data)?;
    let i = node;
    #[allow(non_snake_case)]
    let M0 = -flux_gradient(f.w[i], f.u[i], f.z[i], f.v[i], m, n);
    let norms = data.norms();
    let l0 = 1.5 * (norms.m_l1 + norms.n_l1).powi(3);
    let mut r = SufficientConditionResult::from_scalars(y0[node], M0, m + n, l0);
    r.node = Some(node);
    Ok(r)
}

/// Values of the rate inequalities at one time; residuals are `≤ 0` when the
/// inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub t: f64,
    pub n_inv: f64,
    pub n_inv_bound: f64,
    pub res_n_inv: f64,
    pub m: f64,
    pub m_bound: f64,
    pub res_m: f64,
    pub res_blupr: Option<f64>,
    pub res_blupy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub samples: Vec<RateSample>,
    pub worst_n_inv: f64,
    pub worst_m: f64,
    /// Present only when the collapse bracket contains the bound.
    pub worst_blupr: Option<f64>,
    pub worst_blupy: Option<f64>,
}

impl RateCheck {
    /// Every residual is `≤ tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_n_inv <= tol
            && self.worst_m <= tol
            && self.worst_blupr.is_none_or(|r| r <= tol)
            && self.worst_blupy.is_none_or(|r| r <= tol)
    }
}

/// Evaluates the rate inequalities on every stored state of `traj` lying on
/// the blow-up side of `t = 0`.
pub fn rate_check(
    traj: &Trajectory,
    scr: &SufficientConditionResult,
    data: &InitialData,
) -> Result<RateCheck> {
    let (t1, t2) = match (scr.verdict, scr.t1, scr.t2) {
        (Verdict::Inconclusive, _, _) | (_, None, _) | (_, _, None) => {
            return Err(Error::Hypothesis(
                "rate inequalities need a blow-up verdict".into(),
            ))
        }
        (_, Some(a), Some(b)) => (a, b),
    };
    let node = scr
        .node
        .ok_or_else(|| Error::Hypothesis("probe node unknown; use sufficient_condition".into()))?;
    let forward = scr.verdict == Verdict::BlowUpForward;
    let dir = if forward { 1.0 } else { -1.0 };
    // the rate estimates apply when the collapse time is the bound itself
    let bound = if forward { t1 } else { t2 };
    let near = if forward { t2 } else { t1 };
    let with_rates = traj
        .termination
        .bracket()
        .is_some_and(|(a, b)| (a - bound) * (b - bound) <= 0.0);
    let (mt, nt) = (data.mtilde0(), data.ntilde0());
    let ratio0 = scr.M0 / scr.N0;

    let mut samples = Vec::new();
    for s in traj.states.iter().filter(|s| s.t * dir >= 0.0) {
        let t = s.t;
        let (dy, f) = (s.dy[node], &s.fields);
        let (m, n) = (mt[node] / dy, nt[node] / dy);
        let big_n = m + n;
        let big_m = -flux_gradient(f.w[node], f.u[node], f.z[node], f.v[node], m, n);
        let n_inv = dy / (mt[node] + nt[node]);
        let n_inv_bound = 0.5 * scr.L0 * (t - t1) * (t - t2);
        let m_bound = (ratio0 + scr.L0 * t) * big_n;
        let res_m = if forward {
            big_m - m_bound
        } else {
            m_bound - big_m
        };
        let (res_blupr, res_blupy) = if with_rates && (bound - t) * dir > 0.0 {
            let (ms, ns) = s.momenta(data);
            let sup_mn = sup_abs(&ms) + sup_abs(&ns);
            let gap = (bound - t).abs();
            let rate = 2.0 / (near.abs() * scr.L0 * gap);
            let dy_bound = near.abs() * 0.5 * scr.L0 * scr.N0 * gap;
            (Some(rate - sup_mn), Some(s.min_dy() - dy_bound))
        } else {
            (None, None)
        };
        samples.push(RateSample {
            t,
            n_inv,
            n_inv_bound,
            res_n_inv: n_inv - n_inv_bound,
            m: big_m,
            m_bound,
            res_m,
            res_blupr,
            res_blupy,
        });
    }
    let worst =
        |f: &dyn Fn(&RateSample) -> f64| samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let worst_opt =
        |f: &dyn Fn(&RateSample) -> Option<f64>| samples.iter().filter_map(f).reduce(f64::max);
    Ok(RateCheck {
        worst_n_inv: worst(&|s| s.res_n_inv),
        worst_m: worst(&|s| s.res_m),
        worst_blupr: worst_opt(&|s| s.res_blupr),
        worst_blupy: worst_opt(&|s| s.res_blupy),
        samples,
    })
}
