//! Log-log slope fits of running-minimum gradient norms.

use crate::error::{Error, Result};
use crate::solvers::Trace;

pub const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Inclusive range of `k` the fit used.
    pub window: (f64, f64),
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log g` against `log k` over the points with `k` in
/// `window`.
pub fn fit_rate(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let selected: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, _)| *k >= window.0 && *k <= window.1)
        .copied()
        .collect();
    if selected.len() < MIN_FIT_POINTS {
        return Err(Error::RateFit(format!(
            "window [{}, {}] holds {} points, need at least {MIN_FIT_POINTS}",
            window.0,
            window.1,
            selected.len()
        )));
    }
    if let Some((k, g)) = selected.iter().find(|(k, g)| !(*k > 0.0 && *g > 0.0 && g.is_finite())) {
        return Err(Error::RateFit(format!("cannot take logs of k={k}, g={g}")));
    }
    let n = selected.len() as f64;
    let xs: Vec<f64> = selected.iter().map(|(k, _)| k.ln()).collect();
    let ys: Vec<f64> = selected.iter().map(|(_, g)| g.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RateFit("all points share one k".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy <= f64::EPSILON * n * my.abs().max(1.0) { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(RateFit { window, points: selected.len(), slope, intercept, r_squared })
}

/// `(k, min_{t<k} ‖∇φ(θ_t)‖²)` pairs from a trace, with `k` the number of
/// iterates seen.
pub fn running_min_points(trace: &Trace) -> Vec<(f64, f64)> {
    trace
        .records
        .iter()
        .zip(&trace.running_min)
        .filter_map(|(r, m)| m.map(|g| ((r.iter + 1) as f64, g)))
        .collect()
}

/// Pointwise mean of several `(k, g)` series sharing the same `k` grid.
pub fn average_series(series: &[Vec<(f64, f64)>]) -> Result<Vec<(f64, f64)>> {
    let first = series.first().ok_or_else(|| Error::RateFit("no series to average".into()))?;
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::RateFit("series lengths differ".into()));
    }
    Ok((0..first.len())
        .map(|i| {
            let k = first[i].0;
            let mean = series.iter().map(|s| s[i].1).sum::<f64>() / series.len() as f64;
            (k, mean)
        })
        .collect())
}

/// `n` log-spaced integer points in `[lo, hi]`, deduplicated.
pub fn log_grid(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    let (a, b) = ((lo.max(1) as f64).ln(), (hi.max(1) as f64).ln());
    let mut out: Vec<usize> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}
