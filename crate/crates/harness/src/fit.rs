//! Least-squares rate fits.

use anyhow::bail;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points used after dropping nonpositive or non-finite errors.
    pub used: usize,
    pub dropped: usize,
}

fn ordinary_least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

fn fit_with(points: &[(f64, f64)], log_x: bool) -> anyhow::Result<RateFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, e)| e > 0.0 && e.is_finite() && x.is_finite() && (!log_x || x > 0.0))
        .collect();
    if kept.len() < 3 {
        bail!(
            "rate fit needs at least 3 positive points, got {}",
            kept.len()
        );
    }
    let xs: Vec<f64> = kept
        .iter()
        .map(|p| if log_x { p.0.ln() } else { p.0 })
        .collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    if xs.iter().all(|&x| x == xs[0]) {
        bail!("rate fit needs at least two distinct parameter values");
    }
    let (slope, intercept, r_squared) = ordinary_least_squares(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        used: kept.len(),
        dropped: points.len() - kept.len(),
    })
}

/// Least squares on `(ln parameter, ln error)`.
pub fn fit_rate(points: &[(f64, f64)]) -> anyhow::Result<RateFit> {
    fit_with(points, true)
}

/// Least squares on `(t, ln z)`; the decay rate is `−slope`.
pub fn fit_exponential(points: &[(f64, f64)]) -> anyhow::Result<RateFit> {
    fit_with(points, false)
}
