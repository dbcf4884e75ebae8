//! Straight-line least squares and Pearson correlation.

/// Result of fitting `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of the (weighted) data.
    pub corr: f64,
}

/// Weighted least squares line. `weights = None` is ordinary least squares.
///
/// Sums are taken about the weighted means, which keeps abscissae such as
/// `f²` (up to ~1e16 Hz²) from swamping the arithmetic.
///
/// Returns `None` for fewer than two points, mismatched lengths, or when
/// every abscissa is equal.
pub fn fit_line(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Option<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if let Some(w) = weights {
        if w.len() != xs.len() {
            return None;
        }
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..xs.len()).map(w).sum();
    let mx = (0..xs.len()).map(|i| w(i) * xs[i]).sum::<f64>() / total;
    let my = (0..xs.len()).map(|i| w(i) * ys[i]).sum::<f64>() / total;

    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += w(i) * dx * dx;
        syy += w(i) * dy * dy;
        sxy += w(i) * dx * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let corr = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        corr,
    })
}

/// Pearson correlation coefficient; `None` when either side has zero spread.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let fit = fit_line(xs, ys, None)?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    if ys.iter().all(|&y| y == my) {
        return None;
    }
    Some(fit.corr)
}
