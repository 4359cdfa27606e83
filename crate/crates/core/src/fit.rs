//! Ordinary least squares on log-log data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} positive points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("abscissae span {span:.3} decades, need at least {needed}")]
    NarrowSpan { span: f64, needed: f64 },
}

/// Fitted line `log y = slope log x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// Standard error of the slope (0 for two points).
    pub slope_stderr: f64,
    pub points: usize,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.slope * x.ln() + self.intercept).exp()
    }
}

/// Least-squares slope of `ln y` against `ln x`. Non-positive or non-finite
/// pairs are skipped.
pub fn loglog(x: &[f64], y: &[f64], min_points: usize, min_decades: f64) -> Result<PowerFit, FitError> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < min_points.max(2) {
        return Err(FitError::TooFewPoints { needed: min_points.max(2), got: n });
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    let span = (hi - lo) / std::f64::consts::LN_10;
    if span + 1e-12 < min_decades {
        return Err(FitError::NarrowSpan { span, needed: min_decades });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let slope_stderr = if n > 2 { (ss / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(PowerFit { slope, intercept, residual: (ss / nf).sqrt(), slope_stderr, points: n })
}

/// Logarithmically spaced values from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = logspace(0.01, 0.1, 6);
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        let f = loglog(&x, &y, 5, 1.0).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn rejects_short_or_narrow_data() {
        assert!(matches!(loglog(&[1.0, 2.0], &[1.0, 2.0], 5, 1.0), Err(FitError::TooFewPoints { .. })));
        let x = logspace(1.0, 2.0, 6);
        assert!(matches!(loglog(&x, &x, 5, 1.0), Err(FitError::NarrowSpan { .. })));
    }
}
