//! Fourth-order finite differences on uniform grids and discrete norms.
//!
//! Interior nodes use centered five-point stencils; the two outermost nodes on
//! each side use one-sided stencils of the same order. Stencils are written so
//! that mirrored inputs produce exactly mirrored outputs.

/// First derivative, fourth order. Requires at least 5 samples.
pub fn d1(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "d1 needs at least 5 samples");
    let c = 1.0 / (12.0 * h);
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = ((f[i - 2] - f[i + 2]) + 8.0 * (f[i + 1] - f[i - 1])) * c;
    }
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
    let (a, b, cc, d, e) = (f[n - 1], f[n - 2], f[n - 3], f[n - 4], f[n - 5]);
    out[n - 1] = (25.0 * a - 48.0 * b + 36.0 * cc - 16.0 * d + 3.0 * e) * c;
    out[n - 2] = (3.0 * a + 10.0 * b - 18.0 * cc + 6.0 * d - e) * c;
    out
}

/// Second derivative, fourth order. Requires at least 6 samples.
pub fn d2(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 6, "d2 needs at least 6 samples");
    let c = 1.0 / (12.0 * h * h);
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (-(f[i - 2] + f[i + 2]) + 16.0 * (f[i - 1] + f[i + 1]) - 30.0 * f[i]) * c;
    }
    let edge0 = |g: [f64; 6]| {
        (45.0 * g[0] - 154.0 * g[1] + 214.0 * g[2] - 156.0 * g[3] + 61.0 * g[4] - 10.0 * g[5]) * c
    };
    let edge1 = |g: [f64; 6]| {
        (10.0 * g[0] - 15.0 * g[1] - 4.0 * g[2] + 14.0 * g[3] - 6.0 * g[4] + g[5]) * c
    };
    let head = [f[0], f[1], f[2], f[3], f[4], f[5]];
    let tail = [f[n - 1], f[n - 2], f[n - 3], f[n - 4], f[n - 5], f[n - 6]];
    out[0] = edge0(head);
    out[1] = edge1(head);
    out[n - 1] = edge0(tail);
    out[n - 2] = edge1(tail);
    out
}

/// Derivative of arbitrary order by repeated application; order 0 copies.
pub fn derivative(f: &[f64], h: f64, order: usize) -> Vec<f64> {
    let mut g = f.to_vec();
    let mut k = order;
    while k >= 2 {
        g = d2(&g, h);
        k -= 2;
    }
    if k == 1 {
        g = d1(&g, h);
    }
    g
}

pub fn trapezoid(f: &[f64], h: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => h * (f[1..n - 1].iter().sum::<f64>() + 0.5 * (f[0] + f[n - 1])),
    }
}

pub fn trapezoid_abs(f: &[f64], h: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => {
            h * (f[1..n - 1].iter().map(|v| v.abs()).sum::<f64>()
                + 0.5 * (f[0].abs() + f[n - 1].abs()))
        }
    }
}

pub fn sup_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: usize, l: f64) -> (Vec<f64>, f64) {
        let x: Vec<f64> = (0..n)
            .map(|i| l * (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect();
        (x, 2.0 * l / (n - 1) as f64)
    }

    #[test]
    fn stencils_are_exact_on_quartics() {
        let (x, h) = nodes(11, 1.0);
        let f: Vec<f64> = x.iter().map(|x| x.powi(4) - 2.0 * x.powi(3) + x).collect();
        let df = d1(&f, h);
        let ddf = d2(&f, h);
        for (i, x) in x.iter().enumerate() {
            assert!(
                (df[i] - (4.0 * x.powi(3) - 6.0 * x * x + 1.0)).abs() < 1e-11,
                "d1 at {i}"
            );
            assert!(
                (ddf[i] - (12.0 * x * x - 12.0 * x)).abs() < 1e-9,
                "d2 at {i}"
            );
        }
    }

    #[test]
    fn d1_is_exactly_antisymmetric_for_even_input() {
        let (x, h) = nodes(33, 3.0);
        let f: Vec<f64> = x.iter().map(|x| (-x * x).exp() * (1.0 + x * x)).collect();
        let df = d1(&f, h);
        let n = f.len();
        for i in 0..n {
            assert_eq!(df[i], -df[n - 1 - i]);
        }
    }

    #[test]
    fn trapezoid_integrates_gaussian() {
        let (x, h) = nodes(2001, 10.0);
        let f: Vec<f64> = x.iter().map(|x| (-x * x).exp()).collect();
        assert!((trapezoid(&f, h) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }
}
