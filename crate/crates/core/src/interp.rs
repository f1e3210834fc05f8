//! Piecewise cubic Hermite interpolation on non-uniform, strictly increasing
//! abscissae. Slopes are either supplied by the caller or chosen by the
//! monotone (Fritsch–Butland) rule.

/// Index `i` with `xs[i] <= x <= xs[i + 1]`, or `None` outside `[xs[0], xs[n-1]]`.
pub fn locate(xs: &[f64], x: f64) -> Option<usize> {
    let n = xs.len();
    if n < 2 || !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let p = xs.partition_point(|&v| v <= x);
    Some(p.saturating_sub(1).min(n - 2))
}

#[inline]
pub fn hermite(x0: f64, x1: f64, f0: f64, f1: f64, s0: f64, s1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * f0 + h10 * h * s0 + h01 * f1 + h11 * h * s1
}

#[inline]
pub fn hermite_slope(x0: f64, x1: f64, f0: f64, f1: f64, s0: f64, s1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let d00 = (6.0 * t2 - 6.0 * t) / h;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = (-6.0 * t2 + 6.0 * t) / h;
    let d11 = 3.0 * t2 - 2.0 * t;
    d00 * f0 + d10 * s0 + d01 * f1 + d11 * s1
}

/// Monotonicity-preserving slopes (the PCHIP rule).
pub fn pchip_slopes(xs: &[f64], fs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert_eq!(n, fs.len());
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (fs[i + 1] - fs[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut s = vec![0.0; n];
    for i in 1..n - 1 {
        let (d0, d1) = (delta[i - 1], delta[i]);
        if d0 * d1 > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            s[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    s[0] = pchip_end(h[0], h[1], delta[0], delta[1]);
    s[n - 1] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    s
}

fn pchip_end(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// Evaluates a cubic Hermite interpolant through `(xs, fs)` with slopes `ss`.
/// Returns `None` outside the data range.
pub fn eval_hermite(xs: &[f64], fs: &[f64], ss: &[f64], x: f64) -> Option<f64> {
    locate(xs, x).map(|i| hermite(xs[i], xs[i + 1], fs[i], fs[i + 1], ss[i], ss[i + 1], x))
}

/// Monotone cubic resampling; targets outside the data range map to `outside`.
pub fn resample_pchip(xs: &[f64], fs: &[f64], targets: &[f64], outside: f64) -> Vec<f64> {
    let ss = pchip_slopes(xs, fs);
    targets
        .iter()
        .map(|&x| eval_hermite(xs, fs, &ss, x).unwrap_or(outside))
        .collect()
}
