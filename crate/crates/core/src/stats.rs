//! Small regression helpers for order-of-convergence fits.

/// Least-squares slope of `ys` against `xs`.
///
/// Returns `None` when fewer than two points are given or the abscissae are
/// all equal.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 || !sxy.is_finite() {
        return None;
    }
    Some(sxy / sxx)
}

/// Slope of `log(ys)` against `log(xs)`.
///
/// Returns `None` if any value is non-positive or non-finite, since the
/// logarithm is then undefined (for instance when every residual is exactly
/// zero).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let ok = |v: &f64| v.is_finite() && *v > 0.0;
    if !xs.iter().all(ok) || !ys.iter().all(ok) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_slope(&lx, &ly)
}
