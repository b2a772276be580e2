//! Two-sided Gaussian envelopes
//! `C₁ e^{−κ₁t} t^{-d/2} e^{−γ₁r²/t} ≤ p ≤ C₂ e^{κ₂t} t^{-d/2} e^{−γ₂r²/t}`
//! fitted by grid search over `(γ, κ)` with the amplitude in closed form.

use serde::Serialize;

use super::DensityEstimate;
use crate::error::{Error, Result};

/// Tolerance band, in standard errors, around each estimate.
const BAND: f64 = 3.0;
const GAMMA_STEP: f64 = 1e-3;
const GAMMA_MAX: f64 = 5.0;
const KAPPA_STEP: f64 = 1e-2;
const KAPPA_MAX: f64 = 2.0;

/// One density estimate at time `t` and squared distance `r2 = |x − y|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub t: f64,
    pub r2: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Flattens density estimates from the start `x` at time `t` into envelope
/// points.
pub fn envelope_points(estimate: &DensityEstimate, x: &[f64], t: f64) -> Vec<EnvelopePoint> {
    estimate
        .queries
        .iter()
        .zip(estimate.values.iter().zip(&estimate.stderrs))
        .map(|(y, (v, s))| EnvelopePoint {
            t,
            r2: y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(),
            value: *v,
            stderr: *s,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianEnvelope {
    pub c_lower: f64,
    pub gamma_lower: f64,
    pub kappa_lower: f64,
    pub c_upper: f64,
    pub gamma_upper: f64,
    pub kappa_upper: f64,
    /// Largest excursion outside `[lower − 3 se, upper + 3 se]`, in units
    /// of the point's standard error (0 when every point is inside).
    pub max_violation_sigma: f64,
    /// Lower envelope ≤ upper envelope at every grid point.
    pub ordered: bool,
    pub pass: bool,
}

impl GaussianEnvelope {
    pub fn lower(&self, d: usize, t: f64, r2: f64) -> f64 {
        self.c_lower * shape(d, t, r2, self.gamma_lower, -self.kappa_lower).exp()
    }

    pub fn upper(&self, d: usize, t: f64, r2: f64) -> f64 {
        self.c_upper * shape(d, t, r2, self.gamma_upper, self.kappa_upper).exp()
    }
}

/// `log(e^{κt} t^{-d/2} e^{−γ r²/t})`.
fn shape(d: usize, t: f64, r2: f64, gamma: f64, kappa: f64) -> f64 {
    kappa * t - 0.5 * d as f64 * t.ln() - gamma * r2 / t
}

struct Side {
    log_c: f64,
    gamma: f64,
    kappa: f64,
}

/// Tightest one-sided envelope: for every `(γ, κ)` the amplitude is the
/// smallest (upper) or largest (lower) that keeps every point's band edge
/// on the right side; the pair minimising the squared log gap to the point
/// estimates wins, ties going to the smaller `κ` and then the smaller `γ`.
/// A lower fit also stays below `cap` (the upper envelope) at every point.
fn fit_side(points: &[EnvelopePoint], d: usize, upper: bool, cap: Option<&[f64]>) -> Result<Side> {
    let edges: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if upper {
                p.value - BAND * p.stderr
            } else {
                let e = p.value + BAND * p.stderr;
                cap.map_or(e, |c| e.min(c[i]))
            }
        })
        .collect();
    let active: Vec<usize> = (0..points.len()).filter(|&i| edges[i] > 0.0).collect();
    if upper && active.is_empty() {
        return Err(Error::InfeasibleFit("no estimate is significantly positive".into()));
    }
    if !upper && active.len() != points.len() {
        return Err(Error::InfeasibleFit(
            "a density estimate lies more than 3 standard errors below zero".into(),
        ));
    }
    let log_edges: Vec<f64> = edges.iter().map(|e| if *e > 0.0 { e.ln() } else { f64::NAN }).collect();
    let log_values: Vec<Option<f64>> =
        points.iter().map(|p| (p.value > 0.0).then(|| p.value.ln())).collect();
    let sign = if upper { 1.0 } else { -1.0 };
    let n_gamma = (GAMMA_MAX / GAMMA_STEP).round() as usize;
    let n_kappa = (KAPPA_MAX / KAPPA_STEP).round() as usize;
    let mut best: Option<(f64, Side)> = None;
    let mut shapes = vec![0.0; points.len()];
    for ik in 0..=n_kappa {
        let kappa = ik as f64 / 100.0;
        for ig in 1..=n_gamma {
            let gamma = ig as f64 / 1000.0;
            for (s, p) in shapes.iter_mut().zip(points) {
                *s = shape(d, p.t, p.r2, gamma, sign * kappa);
            }
            let mut log_c = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
            for &i in &active {
                let v = log_edges[i] - shapes[i];
                log_c = if upper { log_c.max(v) } else { log_c.min(v) };
            }
            let gap: f64 = log_values
                .iter()
                .zip(&shapes)
                .filter_map(|(lv, s)| lv.map(|lv| (log_c + s - lv).powi(2)))
                .sum();
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, Side { log_c, gamma, kappa }));
            }
        }
    }
    Ok(best.expect("nonempty search").1)
}

/// Fits both envelopes and reports compliance of every point.
pub fn fit_gaussian_envelope(points: &[EnvelopePoint], d: usize) -> Result<GaussianEnvelope> {
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    if points.iter().any(|p| !(p.t > 0.0) || !p.value.is_finite() || !(p.stderr >= 0.0)) {
        return Err(Error::Validation("envelope points need t > 0 and finite estimates".into()));
    }
    let up = fit_side(points, d, true, None)?;
    let caps: Vec<f64> = points
        .iter()
        .map(|p| (up.log_c + shape(d, p.t, p.r2, up.gamma, up.kappa)).exp())
        .collect();
    let lo = fit_side(points, d, false, Some(&caps))?;
    let env = GaussianEnvelope {
        c_lower: lo.log_c.exp(),
        gamma_lower: lo.gamma,
        kappa_lower: lo.kappa,
        c_upper: up.log_c.exp(),
        gamma_upper: up.gamma,
        kappa_upper: up.kappa,
        max_violation_sigma: 0.0,
        ordered: true,
        pass: true,
    };
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    for p in points {
        let l = env.lower(d, p.t, p.r2);
        let u = env.upper(d, p.t, p.r2);
        ordered &= l <= u * (1.0 + 1e-12);
        let excess = (l - p.value).max(p.value - u).max(0.0);
        if excess > 0.0 {
            let sigma = if p.stderr > 0.0 { excess / p.stderr } else { f64::INFINITY };
            // a zero-error point sitting on the envelope up to rounding
            let sigma = if p.stderr == 0.0 && excess <= 1e-12 * p.value.abs() { 0.0 } else { sigma };
            worst = worst.max(sigma);
        }
    }
    Ok(GaussianEnvelope {
        max_violation_sigma: worst,
        ordered,
        pass: ordered && worst <= BAND * (1.0 + 1e-9),
        ..env
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn heat_points(scale: f64) -> Vec<EnvelopePoint> {
        let mut v = Vec::new();
        for t in [0.5f64, 1.0] {
            for i in 0..13 {
                let r = 3.0 * t.sqrt() * i as f64 / 12.0;
                v.push(EnvelopePoint {
                    t,
                    r2: r * r,
                    value: scale * (2.0 * std::f64::consts::PI * t).powf(-0.5) * (-r * r / (2.0 * t)).exp(),
                    stderr: 0.0,
                });
            }
        }
        v
    }

    #[test]
    fn exact_heat_kernel_is_its_own_envelope() {
        let e = fit_gaussian_envelope(&heat_points(1.0), 1).unwrap();
        let c = (2.0 * std::f64::consts::PI).powf(-0.5);
        assert_eq!((e.gamma_lower, e.gamma_upper), (0.5, 0.5));
        assert_eq!((e.kappa_lower, e.kappa_upper), (0.0, 0.0));
        assert!((e.c_lower - c).abs() < 1e-12 && (e.c_upper - c).abs() < 1e-12);
        assert_eq!(e.max_violation_sigma, 0.0);
        assert!(e.pass && e.ordered);
    }

    #[test]
    fn scaling_scales_amplitudes_only() {
        let a = fit_gaussian_envelope(&heat_points(1.0), 1).unwrap();
        let b = fit_gaussian_envelope(&heat_points(2.0), 1).unwrap();
        assert_eq!((a.gamma_lower, a.gamma_upper), (b.gamma_lower, b.gamma_upper));
        assert!((b.c_lower / a.c_lower - 2.0).abs() < 1e-12);
        assert!((b.c_upper / a.c_upper - 2.0).abs() < 1e-12);
    }

    #[test]
    fn significantly_negative_estimate_is_infeasible() {
        let mut p = heat_points(1.0);
        p[3].value = -1.0;
        p[3].stderr = 0.01;
        assert!(matches!(fit_gaussian_envelope(&p, 1), Err(Error::InfeasibleFit(_))));
    }

    #[test]
    fn lower_envelope_never_crosses_upper() {
        // heavy tail relative to the core: unconstrained fits would cross
        let mut p = heat_points(1.0);
        for pt in p.iter_mut() {
            pt.value *= (0.1 * pt.r2 / pt.t).exp();
            pt.stderr = 0.01 * pt.value;
        }
        let last = p.len() - 1;
        p[last].value *= 1.2;
        let env = fit_gaussian_envelope(&p, 1).unwrap();
        assert!(env.ordered);
        for pt in &p {
            assert!(env.lower(1, pt.t, pt.r2) <= env.upper(1, pt.t, pt.r2) * (1.0 + 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn noisy_points_stay_within_band(
            noise in prop::collection::vec(-0.05f64..0.05, 26),
            gamma in 0.3f64..0.9,
        ) {
            let mut p = heat_points(1.0);
            for (pt, e) in p.iter_mut().zip(&noise) {
                pt.value = (2.0 * std::f64::consts::PI * pt.t).powf(-0.5)
                    * (-gamma * pt.r2 / pt.t).exp() * (1.0 + e);
                pt.stderr = 0.02 * pt.value;
            }
            let env = fit_gaussian_envelope(&p, 1).unwrap();
            prop_assert!(env.max_violation_sigma <= 3.0 + 1e-9);
            prop_assert!(env.c_lower > 0.0 && env.c_upper > 0.0);
            prop_assert!(env.ordered);
            for pt in &p {
                prop_assert!(env.lower(1, pt.t, pt.r2) <= env.upper(1, pt.t, pt.r2) * (1.0 + 1e-12));
            }
        }
    }
}
