//! Quadrature on sampled data.

/// Trapezoid weights for an increasing abscissa.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let h = 0.5 * (x[k] - x[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Exact integral over `[lo, hi]` of the piecewise-linear interpolant of
/// `(x, y)`. The interval is clipped to the sampled range.
pub fn integrate_linear(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let lo = lo.max(x[0]);
    let hi = hi.min(x[x.len() - 1]);
    if !(hi > lo) {
        return 0.0;
    }
    let interp = |k: usize, t: f64| y[k] + (y[k + 1] - y[k]) * (t - x[k]) / (x[k + 1] - x[k]);
    let mut total = 0.0;
    for k in 0..x.len() - 1 {
        let a = x[k].max(lo);
        let b = x[k + 1].min(hi);
        if b > a {
            total += 0.5 * (b - a) * (interp(k, a) + interp(k, b));
        }
    }
    total
}

/// Linear interpolation with constant extension beyond the ends.
pub fn interpolate(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t <= x[0] {
        return y[0];
    }
    if t >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let k = x.partition_point(|&v| v <= t) - 1;
    y[k] + (y[k + 1] - y[k]) * (t - x[k]) / (x[k + 1] - x[k])
}
