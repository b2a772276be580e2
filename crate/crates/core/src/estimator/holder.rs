//! Hölder regression of `x ↦ p(0,x;t,y)` with common random numbers: every
//! probe start is driven by the same Brownian increments, so the differences
//! are paired per path.

use serde::Serialize;

use super::{default_bandwidth, kernel_terms, shifted_weights};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::sde::{sample_endpoints_crn, EndpointSample, RngStream, TimeGrid};
use crate::stats::{weighted_line_fit, MeanEstimate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub x0: Vec<f64>,
    pub direction: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub deltas: Vec<f64>,
    /// `|p̂(0,x0;t,y) − p̂(0,x0+δ·dir;t,y)|`
    pub diffs: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub exponent: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `1 − exponent`.
    pub epsilon_margin: f64,
    pub bandwidth: f64,
    pub n_paths: usize,
}

/// Per-path weighted kernel values at `y`, on the common scale `exp(shift)`.
fn scaled_terms(sample: &EndpointSample, y: &[f64], h: f64, shift: f64) -> Vec<f64> {
    let w: Vec<f64> = sample.log_weights.iter().map(|l| (l - shift).exp()).collect();
    let mut out = Vec::with_capacity(sample.len());
    kernel_terms(sample, Some(&w), y, h, &mut out);
    out
}

/// Paired differences `p̂(first) − p̂(other)` for each other start.
fn paired_differences(
    samples: &[EndpointSample],
    y: &[f64],
    h: f64,
) -> Result<Vec<MeanEstimate>> {
    let all_logs: Vec<f64> = samples.iter().flat_map(|s| s.log_weights.iter().copied()).collect();
    let (_, scale) = shifted_weights(&all_logs)?;
    let shift = scale.ln();
    let base = scaled_terms(&samples[0], y, h, shift);
    samples[1..]
        .iter()
        .map(|s| {
            let other = scaled_terms(s, y, h, shift);
            let d: Vec<f64> = base.iter().zip(&other).map(|(a, b)| a - b).collect();
            let e = MeanEstimate::from_values(&d)?;
            Ok(MeanEstimate {
                mean: e.mean * scale,
                stderr: e.stderr * scale,
                n: e.n,
            })
        })
        .collect()
}

/// `p̂(0,x;t,y) − p̂(0,z;t,y)` from common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn holder_difference(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    y: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
    bandwidth: f64,
) -> Result<MeanEstimate> {
    let samples = sample_endpoints_crn(field, &[x.to_vec(), z.to_vec()], grid, n_paths, rng)?;
    Ok(paired_differences(&samples, y, bandwidth)?[0])
}

/// Fits the slope of `log |Δp̂|` against `log δ` over probes
/// `x0 + δ·direction`. The bandwidth defaults to the rule applied to the
/// endpoints from `x0` and is shared by every probe.
#[allow(clippy::too_many_arguments)]
pub fn estimate_holder_exponent(
    field: &CoefficientField,
    x0: &[f64],
    direction: &[f64],
    deltas: &[f64],
    y: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
    bandwidth: Option<f64>,
) -> Result<HolderReport> {
    let d = field.dim();
    if x0.len() != d || direction.len() != d || y.len() != d {
        return Err(Error::Validation("x0, direction and y must have the field dimension".into()));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Validation("direction must be nonzero".into()));
    }
    if deltas.len() < 3 {
        return Err(Error::DegenerateRegression(format!(
            "need at least 3 separations, got {}",
            deltas.len()
        )));
    }
    if deltas.iter().any(|v| !(*v > 0.0)) || deltas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("separations must be positive and increasing".into()));
    }
    let dir: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let mut starts = vec![x0.to_vec()];
    for delta in deltas {
        starts.push(x0.iter().zip(&dir).map(|(a, u)| a + delta * u).collect());
    }
    let samples = sample_endpoints_crn(field, &starts, grid, n_paths, rng)?;
    let h = match bandwidth {
        Some(h) => h,
        None => default_bandwidth(&samples[0])?,
    };
    let diffs = paired_differences(&samples, y, h)?;
    let resolved = diffs.iter().any(|e| e.mean.abs() > 2.0 * e.stderr);
    if !resolved {
        // stderr shrinks like n^{-1/2}; aim for the largest difference at 4 se
        let best = diffs
            .iter()
            .map(|e| if e.mean.abs() > 0.0 { e.stderr / e.mean.abs() } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min);
        let factor = if best.is_finite() { (4.0 * best).powi(2).max(4.0) } else { 100.0 };
        return Err(Error::Underpowered {
            recommended: (n_paths as f64 * factor).ceil() as usize,
        });
    }
    let lx: Vec<f64> = deltas.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = diffs.iter().map(|e| e.mean.abs().max(f64::MIN_POSITIVE).ln()).collect();
    let sd: Vec<f64> = diffs
        .iter()
        .map(|e| if e.mean != 0.0 { e.stderr / e.mean.abs() } else { f64::INFINITY })
        .collect();
    let fit = weighted_line_fit(&lx, &ly, &sd)?;
    Ok(HolderReport {
        x0: x0.to_vec(),
        direction: dir,
        y: y.to_vec(),
        t: grid.t_end - grid.t_start,
        deltas: deltas.to_vec(),
        diffs: diffs.iter().map(|e| e.mean.abs()).collect(),
        stderrs: diffs.iter().map(|e| e.stderr).collect(),
        exponent: fit.slope,
        intercept: fit.intercept,
        ci_low: fit.ci_low,
        ci_high: fit.ci_high,
        epsilon_margin: 1.0 - fit.slope,
        bandwidth: h,
        n_paths,
    })
}
