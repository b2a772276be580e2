//! Density estimates of the fundamental solution from weighted endpoint
//! samples, pinned expectations, Gaussian envelopes and Hölder regressions.
//!
//! The weighted estimator is `p̂(y) = (1/n) Σ ℰ_i K_h(X_i − y)` with a
//! Gaussian kernel `K_h`; setting every weight to one gives the plain KDE of
//! the driftless transition density `p^X`.

mod checks;
mod envelope;
mod holder;

pub use checks::{
    chapman_kolmogorov_check, moment_bound_check, CkReport, CkRow, CkSettings, MomentBoundReport,
    MomentRow,
};
pub use envelope::{envelope_points, fit_gaussian_envelope, EnvelopePoint, GaussianEnvelope};
pub use holder::{estimate_holder_exponent, holder_difference, HolderReport};

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::reference::ConstantCoefficientKernel;
use crate::sde::{sample_endpoints, EndpointSample, RngStream, TimeGrid};
use crate::stats::MeanEstimate;

/// Below this many effective samples a local (kernel-weighted) average is
/// refused.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    /// Plain KDE of the driftless transition density `p^X`.
    Unweighted,
    /// Weighted KDE of the fundamental solution `p`.
    Weighted,
    /// Histogram with fixed bins.
    Histogram,
    /// Finite-difference or closed-form reference values.
    Oracle,
}

/// Point estimates at a list of query points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub dim: usize,
    pub queries: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub bandwidth: f64,
    pub n_paths: usize,
    pub kind: DensityKind,
}

impl DensityEstimate {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(2πh²)^{-d/2} exp(−|u|²/(2h²))`.
#[inline]
pub fn gaussian_kde_kernel(u: &[f64], h: f64) -> f64 {
    let d = u.len() as f64;
    let q: f64 = u.iter().map(|v| v * v).sum();
    (2.0 * std::f64::consts::PI * h * h).powf(-d / 2.0) * (-q / (2.0 * h * h)).exp()
}

/// Scott-type rule `1.06 σ̄ n^{-1/(d+4)}`, with `σ̄` the mean over
/// coordinates of the endpoint standard deviations.
pub fn default_bandwidth(sample: &EndpointSample) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::EmptySample);
    }
    let d = sample.dim;
    let mut sd_sum = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| sample.point(i)[j]).collect();
        let est = MeanEstimate::from_values(&col)?;
        sd_sum += est.stderr * (n as f64).sqrt();
    }
    let sigma = sd_sum / d as f64;
    if !(sigma > 0.0) {
        return Err(Error::Validation("endpoint sample has zero spread; give a bandwidth".into()));
    }
    Ok(1.06 * sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0)))
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Validation(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// Weight factors `exp(l_i − max l)` and the scale `exp(max l)`.
pub(crate) fn shifted_weights(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = m.exp();
    if !m.is_finite() || !scale.is_finite() {
        let path = log_weights.iter().position(|l| !l.is_finite() || *l == m).unwrap_or(0);
        return Err(Error::WeightOverflow { path });
    }
    Ok((log_weights.iter().map(|l| (l - m).exp()).collect(), scale))
}

/// Per-path contributions `w_i K_h(X_i − y)` for one query.
pub(crate) fn kernel_terms(
    sample: &EndpointSample,
    weights: Option<&[f64]>,
    y: &[f64],
    h: f64,
    out: &mut Vec<f64>,
) {
    let d = sample.dim;
    out.clear();
    let mut u = vec![0.0; d];
    for i in 0..sample.len() {
        let p = sample.point(i);
        for j in 0..d {
            u[j] = p[j] - y[j];
        }
        let k = gaussian_kde_kernel(&u, h);
        out.push(match weights {
            Some(w) => w[i] * k,
            None => k,
        });
    }
}

fn kde(
    sample: &EndpointSample,
    queries: &[Vec<f64>],
    bandwidth: f64,
    weighted: bool,
) -> Result<DensityEstimate> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    check_bandwidth(bandwidth)?;
    if queries.iter().any(|q| q.len() != sample.dim) {
        return Err(Error::Validation("query dimension does not match sample".into()));
    }
    let (weights, scale) = if weighted {
        let (w, s) = shifted_weights(&sample.log_weights)?;
        (Some(w), s)
    } else {
        (None, 1.0)
    };
    let per_query: Vec<MeanEstimate> = queries
        .par_iter()
        .map(|y| {
            let mut terms = Vec::with_capacity(sample.len());
            kernel_terms(sample, weights.as_deref(), y, bandwidth, &mut terms);
            MeanEstimate::from_values(&terms)
        })
        .collect::<Result<_>>()?;
    Ok(DensityEstimate {
        dim: sample.dim,
        queries: queries.to_vec(),
        values: per_query.iter().map(|e| e.mean * scale).collect(),
        stderrs: per_query.iter().map(|e| e.stderr * scale).collect(),
        bandwidth,
        n_paths: sample.len(),
        kind: if weighted { DensityKind::Weighted } else { DensityKind::Unweighted },
    })
}

/// Kernel density estimate of `p^X` from endpoints; weights are ignored.
pub fn estimate_px_density(
    sample: &EndpointSample,
    queries: &[Vec<f64>],
    bandwidth: f64,
) -> Result<DensityEstimate> {
    kde(sample, queries, bandwidth, false)
}

/// Weighted kernel estimate `(1/n) Σ ℰ_i K_h(X_i − y)` from a given sample.
/// With all log-weights zero the result equals [`estimate_px_density`]
/// bit for bit.
pub fn weighted_density(
    sample: &EndpointSample,
    queries: &[Vec<f64>],
    bandwidth: f64,
) -> Result<DensityEstimate> {
    kde(sample, queries, bandwidth, true)
}

/// Simulates `n_paths` weighted paths from `x` over `grid` and returns the
/// weighted KDE of `p(t_start,x;t_end,·)`. Without a bandwidth the default
/// rule is applied to the endpoints.
pub fn estimate_fundamental(
    field: &CoefficientField,
    x: &[f64],
    queries: &[Vec<f64>],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
    bandwidth: Option<f64>,
) -> Result<DensityEstimate> {
    let sample = sample_endpoints(field, x, grid, n_paths, rng)?;
    let h = match bandwidth {
        Some(h) => h,
        None => default_bandwidth(&sample)?,
    };
    weighted_density(&sample, queries, h)
}

/// Leading KDE bias `½ h² |Δp(y)|` for a density known pointwise. The
/// Laplacian is taken by central differences with step `h`.
pub fn kde_bias_budget(density: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> f64 {
    let p0 = density(y);
    let mut lap = 0.0;
    let mut z = y.to_vec();
    for j in 0..y.len() {
        z[j] = y[j] + h;
        let up = density(&z);
        z[j] = y[j] - h;
        let down = density(&z);
        z[j] = y[j];
        lap += (up - 2.0 * p0 + down) / (h * h);
    }
    0.5 * h * h * lap.abs()
}

/// [`kde_bias_budget`] on the closed-form kernel `p(0,x;t,·)`.
pub fn analytic_bias_budget(k: &ConstantCoefficientKernel, t: f64, x: &[f64], y: &[f64], h: f64) -> f64 {
    kde_bias_budget(&|z| k.density(t, x, z), y, h)
}

/// Ratio estimate of `E^{X_t=y}[ℰ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinnedEstimate {
    pub value: f64,
    pub stderr: f64,
    /// `(Σ K_i)² / Σ K_i²`.
    pub effective_samples: f64,
}

/// `Σ ℰ_i K_h(X_i − y) / Σ K_h(X_i − y)` with a delta-method standard error.
pub fn pinned_expectation(sample: &EndpointSample, y: &[f64], bandwidth: f64) -> Result<PinnedEstimate> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    check_bandwidth(bandwidth)?;
    if y.len() != sample.dim {
        return Err(Error::Validation("query dimension does not match sample".into()));
    }
    let (w, scale) = shifted_weights(&sample.log_weights)?;
    let mut den = Vec::with_capacity(sample.len());
    kernel_terms(sample, None, y, bandwidth, &mut den);
    let num: Vec<f64> = den.iter().zip(&w).map(|(k, w)| w * k).collect();
    let sum_den: f64 = den.iter().sum();
    let sum_sq: f64 = den.iter().map(|k| k * k).sum();
    let effective = if sum_sq > 0.0 { sum_den * sum_den / sum_sq } else { 0.0 };
    if !(effective >= MIN_EFFECTIVE_SAMPLES) {
        return Err(Error::InsufficientLocalSample {
            y: y.to_vec(),
            effective,
        });
    }
    let sum_num: f64 = num.iter().sum();
    let ratio = sum_num / sum_den;
    let n = sample.len() as f64;
    let mean_den = sum_den / n;
    // linearisation: R̂ − R ≈ mean(num − R den) / mean(den)
    let resid: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a - ratio * b).collect();
    let se = MeanEstimate::from_values(&resid)?.stderr / mean_den;
    Ok(PinnedEstimate {
        value: ratio * scale,
        stderr: se * scale,
        effective_samples: effective,
    })
}

/// Nodes of a tensor grid over the box `[lower, upper]` with `per_dim`
/// points per coordinate, and the trapezoid weight of each node.
pub fn box_grid(lower: &[f64], upper: &[f64], per_dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = lower.len();
    if d == 0 || upper.len() != d || per_dim < 2 || lower.iter().zip(upper).any(|(a, b)| !(b > a)) {
        return Err(Error::Validation("invalid quadrature box".into()));
    }
    let steps: Vec<f64> = (0..d).map(|j| (upper[j] - lower[j]) / (per_dim - 1) as f64).collect();
    let total = per_dim.pow(d as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut node = vec![0.0; d];
        let mut w = 1.0;
        for j in (0..d).rev() {
            let i = rem % per_dim;
            rem /= per_dim;
            node[j] = lower[j] + steps[j] * i as f64;
            w *= steps[j] * if i == 0 || i == per_dim - 1 { 0.5 } else { 1.0 };
        }
        nodes.push(node);
        weights.push(w);
    }
    Ok((nodes, weights))
}

/// Trapezoid mass of an estimate evaluated on [`box_grid`] nodes.
pub fn estimate_mass(estimate: &DensityEstimate, quadrature_weights: &[f64]) -> f64 {
    estimate
        .values
        .iter()
        .zip(quadrature_weights)
        .map(|(v, w)| v * w)
        .sum()
}

/// Histogram estimate on the box `[lower, upper]` with cubic bins of width
/// `bin_width` (the box is extended to a whole number of bins). Weighted
/// samples contribute `ℰ_i`. Values are reported at bin centres.
pub fn histogram_density(
    sample: &EndpointSample,
    lower: &[f64],
    upper: &[f64],
    bin_width: f64,
    weighted: bool,
) -> Result<DensityEstimate> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    check_bandwidth(bin_width)?;
    let d = sample.dim;
    if lower.len() != d || upper.len() != d || lower.iter().zip(upper).any(|(a, b)| !(b > a)) {
        return Err(Error::Validation("invalid histogram box".into()));
    }
    let bins: Vec<usize> = (0..d)
        .map(|j| ((upper[j] - lower[j]) / bin_width).ceil() as usize)
        .collect();
    let total: usize = bins.iter().product();
    let (w, scale) = if weighted {
        shifted_weights(&sample.log_weights)?
    } else {
        (vec![1.0; sample.len()], 1.0)
    };
    let mut sum = vec![0.0; total];
    let mut sum_sq = vec![0.0; total];
    'paths: for i in 0..sample.len() {
        let p = sample.point(i);
        let mut flat = 0;
        for j in 0..d {
            let pos = (p[j] - lower[j]) / bin_width;
            if !(pos >= 0.0) || pos >= bins[j] as f64 {
                continue 'paths;
            }
            flat = flat * bins[j] + pos as usize;
        }
        sum[flat] += w[i];
        sum_sq[flat] += w[i] * w[i];
    }
    let n = sample.len() as f64;
    let vol = bin_width.powi(d as i32);
    let mut queries = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    let mut stderrs = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut centre = vec![0.0; d];
        for j in (0..d).rev() {
            let i = rem % bins[j];
            rem /= bins[j];
            centre[j] = lower[j] + (i as f64 + 0.5) * bin_width;
        }
        let mean = sum[flat] / n;
        let var = (sum_sq[flat] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        queries.push(centre);
        values.push(mean * scale / vol);
        stderrs.push((var / n).sqrt() * scale / vol);
    }
    Ok(DensityEstimate {
        dim: d,
        queries,
        values,
        stderrs,
        bandwidth: bin_width,
        n_paths: sample.len(),
        kind: DensityKind::Histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::presets;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|y| vec![*y]).collect()
    }

    fn sample_1d(points: Vec<f64>, log_weights: Vec<f64>) -> EndpointSample {
        EndpointSample {
            dim: 1,
            points,
            log_weights,
        }
    }

    #[test]
    fn point_mass_gives_peak_kernel() {
        let s = EndpointSample {
            dim: 2,
            points: [0.3, -0.2].repeat(50),
            log_weights: vec![0.0; 50],
        };
        let e = estimate_px_density(&s, &[vec![0.3, -0.2]], 0.1).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 0.01);
        assert!((e.values[0] - peak).abs() < 1e-12 * peak);
        assert!(e.stderrs[0] < 1e-12 * peak);
    }

    #[test]
    fn empty_sample_and_bad_bandwidth() {
        let s = sample_1d(vec![], vec![]);
        assert!(matches!(estimate_px_density(&s, &pts(&[0.0]), 0.1), Err(Error::EmptySample)));
        let s = sample_1d(vec![0.0], vec![0.0]);
        assert!(estimate_px_density(&s, &pts(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn standard_heat_kernel_at_origin() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let s = sample_endpoints(&f, &[0.0], g, 200_000, &RngStream::new(11, 0)).unwrap();
        let h = default_bandwidth(&s).unwrap();
        let e = estimate_px_density(&s, &pts(&[0.0]), h).unwrap();
        let k = f.analytic_kernel().unwrap();
        let exact = k.density(1.0, &[0.0], &[0.0]);
        assert!((exact - 0.3989422804014327).abs() < 1e-15);
        let budget = analytic_bias_budget(&k, 1.0, &[0.0], &[0.0], h);
        assert!((e.values[0] - exact).abs() <= 3.0 * e.stderrs[0] + budget, "{e:?}");
    }

    #[test]
    fn bandwidth_rule() {
        // sd of {0,1,2,3} is sqrt(5/3)
        let s = sample_1d(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]);
        let h = default_bandwidth(&s).unwrap();
        let expected = 1.06 * (5.0f64 / 3.0).sqrt() * 4f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-14);
    }

    #[test]
    fn weighted_reduces_to_unweighted_bitwise() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 0.5, 50).unwrap();
        let s = sample_endpoints(&f, &[0.0], g, 3000, &RngStream::new(1, 0)).unwrap();
        let q = pts(&[-1.0, 0.0, 0.4, 2.0]);
        let a = estimate_px_density(&s, &q, 0.2).unwrap();
        let b = weighted_density(&s, &q, 0.2).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.stderrs, b.stderrs);
        assert_eq!(b.kind, DensityKind::Weighted);
    }

    #[test]
    fn constant_potential_scales_exactly() {
        let g = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let rng = RngStream::new(2, 0);
        let q = pts(&[-0.5, 0.0, 0.7]);
        let f0 = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let f1 = presets::constant(&[1.0], &[0.0], 0.35).unwrap();
        let a = estimate_fundamental(&f0, &[0.0], &q, g, 5000, &rng, Some(0.15)).unwrap();
        let b = estimate_fundamental(&f1, &[0.0], &q, g, 5000, &rng, Some(0.15)).unwrap();
        let s1 = sample_endpoints(&f1, &[0.0], g, 5000, &rng).unwrap();
        let factor = s1.log_weights[0].exp();
        assert!((s1.log_weights[0] - 0.35).abs() < 1e-14);
        for i in 0..3 {
            assert_eq!(b.values[i], a.values[i] * factor);
        }
    }

    #[test]
    fn pinned_trivial_cases() {
        let g = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let rng = RngStream::new(3, 0);
        let f0 = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let s = sample_endpoints(&f0, &[0.0], g, 4000, &rng).unwrap();
        let p = pinned_expectation(&s, &[0.2], 0.2).unwrap();
        assert_eq!(p.value, 1.0);
        assert_eq!(p.stderr, 0.0);
        let f1 = presets::constant(&[1.0], &[0.0], -0.3).unwrap();
        let s = sample_endpoints(&f1, &[0.0], g, 4000, &rng).unwrap();
        for y in [-1.0, 0.0, 1.5] {
            let p = pinned_expectation(&s, &[y], 0.2).unwrap();
            assert!((p.value - s.log_weights[0].exp()).abs() == 0.0);
            assert!((p.value - (-0.3f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn pinned_refuses_empty_neighbourhood() {
        let s = sample_1d(vec![0.0; 100], vec![0.0; 100]);
        match pinned_expectation(&s, &[50.0], 0.1) {
            Err(Error::InsufficientLocalSample { effective, .. }) => assert!(effective < 10.0),
            other => panic!("expected insufficient sample, got {other:?}"),
        }
    }

    #[test]
    fn pinned_girsanov_ratio() {
        let f = presets::constant(&[1.0], &[0.3], 0.0).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let s = sample_endpoints(&f, &[0.0], g, 200_000, &RngStream::new(4, 0)).unwrap();
        let h = default_bandwidth(&s).unwrap();
        let p = pinned_expectation(&s, &[0.3], h).unwrap();
        // exp(0.3 y − 0.045) at y = 0.3
        let exact = 0.045f64.exp();
        assert!((exact - 1.046027859908717).abs() < 1e-15);
        assert!((p.value - exact).abs() <= 3.0 * p.stderr, "{p:?}");
    }

    #[test]
    fn box_grid_weights_integrate_constants() {
        let (nodes, w) = box_grid(&[-1.0, 0.0], &[1.0, 3.0], 11).unwrap();
        assert_eq!(nodes.len(), 121);
        assert!((w.iter().sum::<f64>() - 6.0).abs() < 1e-12);
        assert_eq!(nodes[0], vec![-1.0, 0.0]);
        assert_eq!(nodes[120], vec![1.0, 3.0]);
    }

    #[test]
    fn mass_of_unweighted_kde() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let s = sample_endpoints(&f, &[0.0], g, 20_000, &RngStream::new(5, 0)).unwrap();
        let half = 6.0 * 2f64.sqrt();
        let (nodes, w) = box_grid(&[-half], &[half], 241).unwrap();
        let e = estimate_px_density(&s, &nodes, default_bandwidth(&s).unwrap()).unwrap();
        let m = estimate_mass(&e, &w);
        assert!((0.97..=1.03).contains(&m), "{m}");
    }

    #[test]
    fn histogram_counts_and_mass() {
        let s = sample_1d(vec![0.05, 0.15, 0.15, 0.95, 5.0], vec![0.0; 5]);
        let e = histogram_density(&s, &[0.0], &[1.0], 0.1, false).unwrap();
        assert_eq!(e.len(), 10);
        assert!((e.values[0] - 2.0).abs() < 1e-12);
        assert!((e.values[1] - 4.0).abs() < 1e-12);
        assert!((e.queries[9][0] - 0.95).abs() < 1e-12);
        let mass: f64 = e.values.iter().map(|v| v * 0.1).sum();
        assert!((mass - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bias_budget_on_gaussian() {
        let k = ConstantCoefficientKernel::new(vec![1.0], vec![0.0], 0.0).unwrap();
        // p''(0) = −p(0) for the standard normal density
        let b = analytic_bias_budget(&k, 1.0, &[0.0], &[0.0], 0.01);
        let exact = 0.5 * 1e-4 * 0.3989422804014327;
        assert!((b - exact).abs() < 1e-3 * exact);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimates_are_nonnegative(
            pts in prop::collection::vec(-3.0f64..3.0, 1..40),
            logs in prop::collection::vec(-5.0f64..5.0, 40),
            y in -4.0f64..4.0,
            h in 0.01f64..2.0,
        ) {
            let n = pts.len();
            let s = sample_1d(pts, logs[..n].to_vec());
            let e = weighted_density(&s, &[vec![y]], h).unwrap();
            prop_assert!(e.values[0] >= 0.0);
            prop_assert!(e.stderrs[0] >= 0.0);
        }

        #[test]
        fn weighted_density_is_homogeneous_in_weights(
            pts in prop::collection::vec(-3.0f64..3.0, 2..30),
            shift in -3.0f64..3.0,
            y in -2.0f64..2.0,
        ) {
            let n = pts.len();
            let a = weighted_density(&sample_1d(pts.clone(), vec![0.0; n]), &[vec![y]], 0.3).unwrap();
            let b = weighted_density(&sample_1d(pts, vec![shift; n]), &[vec![y]], 0.3).unwrap();
            let r = b.values[0] / a.values[0];
            prop_assert!((r - shift.exp()).abs() <= 1e-12 * shift.exp());
        }
    }
}
