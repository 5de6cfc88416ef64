//! Straight-line regression helpers shared by the rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub correlation: f64,
    pub samples: usize,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("line fit needs at least two paired samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InvalidInput("line fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - intercept - slope * xi).powi(2)).sum();
    let slope_se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let correlation = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 1.0 };
    Ok(LineFit { slope, intercept, slope_se, correlation, samples: x.len() })
}

/// Slope of `log|y|` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| !(v.abs() > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("log-log fit needs finite nonzero samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    line_fit(&lx, &ly)
}

/// `count` points spaced evenly in `log10` between `10^lo` and `10^hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..count).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_has_exact_slope() {
        let t = log_space(2.0, 4.0, 9);
        let y: Vec<f64> = t.iter().map(|t| 3.0 * t.powf(-0.75)).collect();
        let f = loglog_fit(&t, &y).unwrap();
        assert!((f.slope + 0.75).abs() < 1e-12);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn log_space_hits_endpoints() {
        let t = log_space(2.0, 5.0, 7);
        assert!((t[0] - 100.0).abs() < 1e-10);
        assert!((t[6] - 1e5).abs() < 1e-6);
        assert!((t[1] - 10f64.powf(2.5)).abs() < 1e-9);
    }
}
