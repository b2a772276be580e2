//! Small statistics helpers shared by the estimators.

use serde::Serialize;

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Two-pass mean and standard error of the mean.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, stderr, n })
    }

    /// Builds an estimate from accumulated `sum` and centred sum of squares.
    pub fn from_moments(sum: f64, centred_ss: f64, n: usize) -> Self {
        let mean = sum / n as f64;
        let stderr = if n > 1 {
            (centred_ss.max(0.0) / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

/// Weighted least-squares line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Reduced chi-square of the weighted residuals.
    pub reduced_chi2: f64,
}

/// Weighted fit with per-point standard deviations `sd`. The slope standard
/// error is inflated by the reduced chi-square when the scatter exceeds the
/// stated errors.
pub fn weighted_line_fit(x: &[f64], y: &[f64], sd: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 3 || y.len() != n || sd.len() != n {
        return Err(Error::DegenerateRegression(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let w: Vec<f64> = sd
        .iter()
        .map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1e12 })
        .collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateRegression("abscissae are all equal".into()));
    }
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .sum();
    let reduced_chi2 = chi2 / (n - 2) as f64;
    let slope_stderr = (reduced_chi2.max(1.0) / sxx).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        ci_low: slope - Z95 * slope_stderr,
        ci_high: slope + Z95 * slope_stderr,
        reduced_chi2,
    })
}

/// `log(mean(exp(v)))` computed with a max shift.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}
