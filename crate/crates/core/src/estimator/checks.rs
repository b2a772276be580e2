//! Self-consistency checks: the Chapman–Kolmogorov identity for estimated
//! kernels and the exponential moment bound `E[ℰ^q] ≤ e^{C(1+q²)t}`.

use serde::Serialize;

use super::{default_bandwidth, kernel_terms, shifted_weights, weighted_density};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::sde::{sample_endpoints, RngStream, TimeGrid};
use crate::stats::MeanEstimate;

/// Sample sizes and resolution of a Chapman–Kolmogorov check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CkSettings {
    /// Paths for the direct estimate `p̂(0,x;t,y)`.
    pub n_direct: usize,
    /// Paths for `p̂(0,x;s,ξ)`.
    pub n_outer: usize,
    /// Paths per quadrature node for `p̂(s,ξ;t,y)`.
    pub n_inner: usize,
    pub xi_nodes: usize,
    /// Euler–Maruyama step.
    pub step: f64,
    /// Bandwidth of the direct estimate; both factors of the composition
    /// use `bandwidth/√2` so that the two sides carry the same smoothing.
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CkRow {
    pub y: Vec<f64>,
    pub direct: f64,
    pub direct_stderr: f64,
    pub composed: f64,
    pub composed_stderr: f64,
    /// `|direct − composed|` over the joint standard error.
    pub residual_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CkReport {
    pub s: f64,
    pub t: f64,
    pub bandwidth: f64,
    pub rows: Vec<CkRow>,
    pub max_residual_sigma: f64,
}

fn grid_for(t_start: f64, t_end: f64, step: f64) -> Result<TimeGrid> {
    TimeGrid::new(t_start, t_end, ((t_end - t_start) / step).ceil().max(1.0) as usize)
}

/// Compares `p̂(0,x;t,y)` with the trapezoid quadrature of
/// `∫ p̂(0,x;s,ξ) p̂(s,ξ;t,y) dξ`. The second factor is estimated on the
/// field shifted in time by `s`. One-dimensional fields only.
pub fn chapman_kolmogorov_check(
    field: &CoefficientField,
    x: f64,
    s: f64,
    t: f64,
    queries: &[f64],
    settings: &CkSettings,
    rng: &RngStream,
) -> Result<CkReport> {
    if field.dim() != 1 {
        return Err(Error::Validation("the Chapman-Kolmogorov check is one-dimensional".into()));
    }
    if !(s > 0.0 && s < t) {
        return Err(Error::Validation(format!("need 0 < s < t, got s={s}, t={t}")));
    }
    if settings.xi_nodes < 3 || !(settings.step > 0.0) {
        return Err(Error::Validation("need at least 3 nodes and a positive step".into()));
    }
    let ys: Vec<Vec<f64>> = queries.iter().map(|y| vec![*y]).collect();

    let direct_sample = sample_endpoints(field, &[x], grid_for(0.0, t, settings.step)?, settings.n_direct, &rng.substream(0))?;
    let h = match settings.bandwidth {
        Some(h) => h,
        None => default_bandwidth(&direct_sample)?,
    };
    let direct = weighted_density(&direct_sample, &ys, h)?;
    let h_half = h / 2f64.sqrt();

    let outer = sample_endpoints(field, &[x], grid_for(0.0, s, settings.step)?, settings.n_outer, &rng.substream(1))?;
    let half = 6.0 * (field.lambda() * s).sqrt() + field.b_sup() * s;
    let m = settings.xi_nodes;
    let dxi = 2.0 * half / (m - 1) as f64;
    let nodes: Vec<f64> = (0..m).map(|k| x - half + dxi * k as f64).collect();
    let omega: Vec<f64> = (0..m)
        .map(|k| if k == 0 || k == m - 1 { 0.5 * dxi } else { dxi })
        .collect();

    let (w_outer, scale_outer) = shifted_weights(&outer.log_weights)?;
    let mut a_terms: Vec<Vec<f64>> = Vec::with_capacity(m);
    for xi in &nodes {
        let mut terms = Vec::with_capacity(outer.len());
        kernel_terms(&outer, Some(&w_outer), &[*xi], h_half, &mut terms);
        a_terms.push(terms);
    }
    let a_means: Vec<f64> = a_terms
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64 * scale_outer)
        .collect();

    let shifted = field.time_shifted(s);
    let inner_grid = grid_for(0.0, t - s, settings.step)?;
    let inner: Vec<_> = nodes
        .iter()
        .enumerate()
        .map(|(k, xi)| {
            let sample = sample_endpoints(&shifted, &[*xi], inner_grid, settings.n_inner, &rng.substream(2 + k as u64))?;
            weighted_density(&sample, &ys, h_half)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(queries.len());
    let mut worst: f64 = 0.0;
    for (j, y) in queries.iter().enumerate() {
        // composed = mean_i Σ_k ω_k B_kj a_ik; the outer variance comes from
        // the per-path sums, the inner one from the independent node samples
        let per_path: Vec<f64> = (0..outer.len())
            .map(|i| (0..m).map(|k| omega[k] * inner[k].values[j] * a_terms[k][i]).sum::<f64>())
            .collect();
        let outer_est = MeanEstimate::from_values(&per_path)?;
        let composed = outer_est.mean * scale_outer;
        let inner_var: f64 = (0..m)
            .map(|k| (omega[k] * a_means[k] * inner[k].stderrs[j]).powi(2))
            .sum();
        let composed_stderr = ((outer_est.stderr * scale_outer).powi(2) + inner_var).sqrt();
        let joint = (direct.stderrs[j].powi(2) + composed_stderr.powi(2)).sqrt();
        let diff = (direct.values[j] - composed).abs();
        let residual_sigma = if joint > 0.0 {
            diff / joint
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(residual_sigma);
        rows.push(CkRow {
            y: vec![*y],
            direct: direct.values[j],
            direct_stderr: direct.stderrs[j],
            composed,
            composed_stderr,
            residual_sigma,
        });
    }
    Ok(CkReport {
        s,
        t,
        bandwidth: h,
        rows,
        max_residual_sigma: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub q: f64,
    pub t: f64,
    /// `log Ê[ℰ^q]`
    pub log_moment: f64,
    pub stderr: f64,
    /// `Ĉ (1 + q²) t`
    pub bound: f64,
    /// `log_moment − bound − 2·stderr`; nonpositive when the bound holds.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBoundReport {
    /// Smallest `Ĉ ≥ 0` with `log Ê[ℰ^q] ≤ Ĉ(1+q²)t + 2 se` on the grid.
    pub c_hat: f64,
    pub rows: Vec<MomentRow>,
    pub pass: bool,
}

/// Estimates `log E[ℰ(0,t)^q]` from `x0` for every `(q, t)` and the minimal
/// constant of the bound `e^{Ĉ(1+q²)t}`. Each horizon uses its own substream.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_check(
    field: &CoefficientField,
    x0: &[f64],
    q_list: &[f64],
    t_list: &[f64],
    n_paths: usize,
    step: f64,
    rng: &RngStream,
) -> Result<MomentBoundReport> {
    if q_list.is_empty() || t_list.is_empty() {
        return Err(Error::Validation("q_list and t_list must be nonempty".into()));
    }
    if q_list.iter().any(|q| !(q.abs() <= 4.0)) {
        return Err(Error::Validation("moment orders must lie in [-4, 4]".into()));
    }
    let mut raw = Vec::new();
    for (j, &t) in t_list.iter().enumerate() {
        let sample = sample_endpoints(field, x0, grid_for(0.0, t, step)?, n_paths, &rng.substream(j as u64))?;
        for &q in q_list {
            let scaled: Vec<f64> = sample.log_weights.iter().map(|l| q * l).collect();
            let (w, scale) = shifted_weights(&scaled)?;
            let est = MeanEstimate::from_values(&w)?;
            let log_moment = est.mean.ln() + scale.ln();
            let stderr = est.stderr / est.mean;
            raw.push((q, t, log_moment, stderr));
        }
    }
    let c_hat = raw
        .iter()
        .map(|(q, t, lm, se)| (lm - 2.0 * se) / ((1.0 + q * q) * t))
        .fold(0.0f64, f64::max);
    let rows: Vec<MomentRow> = raw
        .into_iter()
        .map(|(q, t, log_moment, stderr)| {
            let bound = c_hat * (1.0 + q * q) * t;
            MomentRow {
                q,
                t,
                log_moment,
                stderr,
                bound,
                residual: log_moment - bound - 2.0 * stderr,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.residual <= 1e-12 * (1.0 + r.bound.abs()));
    Ok(MomentBoundReport { c_hat, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::presets;

    #[test]
    fn moments_without_weight_are_one() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let r = moment_bound_check(&f, &[0.0], &[-2.0, 1.0, 3.0], &[0.5, 1.0], 500, 0.05, &RngStream::new(1, 0)).unwrap();
        assert_eq!(r.c_hat, 0.0);
        assert!(r.rows.iter().all(|row| row.log_moment == 0.0 && row.stderr == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn deterministic_potential_bound() {
        let gamma = -0.4;
        let f = presets::constant(&[1.0], &[0.0], gamma).unwrap();
        let qs = [-2.0, -1.0, 1.0, 2.0];
        let r = moment_bound_check(&f, &[0.0], &qs, &[0.5, 1.0, 2.0], 200, 0.01, &RngStream::new(2, 0)).unwrap();
        for row in &r.rows {
            assert!((row.log_moment - row.q * gamma * row.t).abs() < 1e-12);
            // Ĉ = |γ| is feasible
            assert!(row.log_moment <= gamma.abs() * (1.0 + row.q * row.q) * row.t);
        }
        assert!(r.c_hat <= gamma.abs() + 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn moment_orders_are_bounded() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        assert!(moment_bound_check(&f, &[0.0], &[5.0], &[1.0], 10, 0.1, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn ck_on_constant_field() {
        let f = presets::constant(&[1.0], &[0.2], 0.1).unwrap();
        let settings = CkSettings {
            n_direct: 40_000,
            n_outer: 40_000,
            n_inner: 4_000,
            xi_nodes: 31,
            step: 0.05,
            bandwidth: None,
        };
        let r = chapman_kolmogorov_check(&f, 0.0, 0.4, 1.0, &[-1.0, 0.2, 1.0], &settings, &RngStream::new(3, 0)).unwrap();
        assert!(r.max_residual_sigma <= 4.0, "{r:?}");
        assert!(r.rows.iter().all(|row| row.composed > 0.0));
    }

    #[test]
    fn ck_rejects_bad_split() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let settings = CkSettings {
            n_direct: 10,
            n_outer: 10,
            n_inner: 10,
            xi_nodes: 5,
            step: 0.1,
            bandwidth: Some(0.1),
        };
        assert!(chapman_kolmogorov_check(&f, 0.0, 1.0, 1.0, &[0.0], &settings, &RngStream::new(0, 0)).is_err());
    }
}
