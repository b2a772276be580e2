//! Sampling-based checks of the standing assumptions on the coefficients.
//! These validate instances on declared grids; they are not proofs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{spd_root, symmetric_eigenvalues, CoefficientField};
use crate::error::{Error, Result};

/// Tensor grid over a space-time box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub t_values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_dim: usize,
}

impl SamplingGrid {
    pub fn new(t_values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if t_values.is_empty() || t_values.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Validation("grid needs at least one time value >= 0".into()));
        }
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Validation("grid box bounds must have equal positive length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Validation("grid box lower bound exceeds upper bound".into()));
        }
        if points_per_dim < 2 {
            return Err(Error::Validation("grid resolution must be at least 2 points per dimension".into()));
        }
        Ok(Self {
            t_values,
            lower,
            upper,
            points_per_dim,
        })
    }

    /// Symmetric box `[-half_width, half_width]^d` at the given times.
    pub fn cube(d: usize, half_width: f64, points_per_dim: usize, t_values: Vec<f64>) -> Result<Self> {
        Self::new(t_values, vec![-half_width; d], vec![half_width; d], points_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// All spatial points of the tensor grid.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = self.points_per_dim;
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|k| {
                        let i = idx % n;
                        idx /= n;
                        self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (n - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// One entry of a validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub check: String,
    pub grid: Option<SamplingGrid>,
    pub min_eig: Option<f64>,
    pub max_eig: Option<f64>,
    /// `None` when the check does not apply to the field.
    pub pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Extreme eigenvalues of `a` over the grid; passes iff they lie in `[1/Λ, Λ]`
/// and `a` is symmetric at every sampled point.
pub fn check_ellipticity(field: &CoefficientField, grid: &SamplingGrid) -> ValidationReport {
    let d = field.dim();
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    let mut note = None;
    for &t in &grid.t_values {
        for x in grid.points() {
            let a = field.a(t, &x);
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let asym = (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| (a[i * d + j] - a[j * d + i]).abs())
                .fold(0.0, f64::max);
            if asym > 1e-12 * scale && note.is_none() {
                note = Some(format!("a is not symmetric at t={t}, x={x:?}"));
            }
            for l in symmetric_eigenvalues(&a, d) {
                min_eig = min_eig.min(l);
                max_eig = max_eig.max(l);
            }
        }
    }
    let bounds = field.bounds();
    let pass = note.is_none() && bounds.contains(min_eig) && bounds.contains(max_eig);
    ValidationReport {
        check: "ellipticity".into(),
        grid: Some(grid.clone()),
        min_eig: Some(min_eig),
        max_eig: Some(max_eig),
        pass: Some(pass),
        value: None,
        note,
    }
}

/// Observed sup of `|b|` and `|c|` on the grid against the declared `b_sup`, `c_sup`.
pub fn check_bounds(field: &CoefficientField, grid: &SamplingGrid) -> Vec<ValidationReport> {
    let mut b_max = 0.0f64;
    let mut c_max = 0.0f64;
    for &t in &grid.t_values {
        for x in grid.points() {
            let b = field.b(t, &x);
            b_max = b_max.max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
            c_max = c_max.max(field.c(t, &x).abs());
        }
    }
    let entry = |check: &str, observed: f64, declared: f64| ValidationReport {
        check: check.into(),
        grid: Some(grid.clone()),
        min_eig: None,
        max_eig: None,
        pass: Some(observed <= declared * (1.0 + 1e-12)),
        value: Some(observed),
        note: Some(format!("declared sup {declared}")),
    };
    vec![
        entry("drift_bound", b_max, field.b_sup()),
        entry("potential_bound", c_max, field.c_sup()),
    ]
}

/// Which matrix the continuity modulus is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModulusTarget {
    Diffusion,
    Sigma,
}

/// Empirical continuity modulus of the coefficient matrix on a ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub radius: f64,
    /// `(distance, sup_{i,j,t} |m_ij(t,x) - m_ij(t,y)|)`, sorted by distance.
    pub pairs: Vec<(f64, f64)>,
    /// Running maximum of the differences: the smallest nondecreasing
    /// function dominating every sampled pair.
    pub envelope: Vec<f64>,
}

impl ContinuityReport {
    /// Envelope value at distance `r` (zero below the smallest sampled distance).
    pub fn envelope_at(&self, r: f64) -> f64 {
        let k = self.pairs.partition_point(|(d, _)| *d <= r);
        if k == 0 {
            0.0
        } else {
            self.envelope[k - 1]
        }
    }
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir.iter().map(|v| v * r / norm).collect()
}

/// Samples `n_pairs` point pairs in `B(0, radius)` with distances spread
/// uniformly over `(0, radius]` and records the largest entrywise difference
/// of `a` (or `σ`) over the given times. Pairs are drawn from a fixed seed so
/// both targets see the same pairs.
pub fn estimate_modulus(
    field: &CoefficientField,
    radius: f64,
    n_pairs: usize,
    t_samples: &[f64],
    target: ModulusTarget,
) -> Result<ContinuityReport> {
    if !(radius > 0.0) {
        return Err(Error::Validation(format!("radius must be positive, got {radius}")));
    }
    let d = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f_6475_6c75_73);
    let matrix = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let a = field.a(t, x);
        match target {
            ModulusTarget::Diffusion => Ok(a),
            ModulusTarget::Sigma => spd_root(&a, d).map(|r| r.sigma),
        }
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let (x, y) = loop {
            let x = uniform_in_ball(&mut rng, d, radius);
            let dir = uniform_in_ball(&mut rng, d, 1.0);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let r = radius * rng.random::<f64>();
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + r * u / norm).collect();
            if y.iter().map(|v| v * v).sum::<f64>().sqrt() < radius {
                break (x, y);
            }
        };
        let dist = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut diff = 0.0f64;
        for &t in t_samples {
            let mx = matrix(t, &x)?;
            let my = matrix(t, &y)?;
            for (u, v) in mx.iter().zip(&my) {
                diff = diff.max((u - v).abs());
            }
        }
        pairs.push((dist, diff));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut running = 0.0f64;
    let envelope = pairs
        .iter()
        .map(|(_, v)| {
            running = running.max(*v);
            running
        })
        .collect();
    Ok(ContinuityReport {
        radius,
        pairs,
        envelope,
    })
}

/// Quadrature settings for the weighted weak-derivative integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Quadrature {
    /// Integration box `[-half_width, half_width]^d`.
    pub half_width: f64,
    pub nodes_per_dim: usize,
    pub t_samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum A3Status {
    Ok,
    NotApplicable,
    Divergent,
}

/// Result of the integrability check on `∂_{x_j} a_ij`. The exponent `θ`,
/// decay rate `m` and the optional declared bound `M` are carried here only
/// for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Report {
    pub theta: f64,
    pub m: f64,
    pub declared_bound: Option<f64>,
    pub value: Option<f64>,
    pub status: A3Status,
}

impl A3Report {
    pub fn to_validation(&self) -> ValidationReport {
        let pass = match (self.status, self.value, self.declared_bound) {
            (A3Status::NotApplicable, ..) => None,
            (A3Status::Divergent, ..) => Some(false),
            (A3Status::Ok, Some(v), Some(bound)) => Some(v <= bound),
            (A3Status::Ok, ..) => Some(true),
        };
        ValidationReport {
            check: "derivative_integrability".into(),
            grid: None,
            min_eig: None,
            max_eig: None,
            pass,
            value: self.value,
            note: Some(match self.status {
                A3Status::Ok => format!("theta={}, m={}", self.theta, self.m),
                A3Status::NotApplicable => "not-applicable: coefficients are not smooth".into(),
                A3Status::Divergent => "divergent: quadrature is not finite".into(),
            }),
        }
    }
}

const FD_STEP: f64 = 1e-4;

/// `Σ_{i,j} sup_t ∫ |∂_{x_j} a_ij(t,x)|^θ e^{-m|x|} dx` by the composite
/// trapezoid rule on a box, with central differences for the derivative.
pub fn estimate_a3_integral(
    field: &CoefficientField,
    theta: f64,
    m: f64,
    declared_bound: Option<f64>,
    quadrature: &A3Quadrature,
) -> Result<A3Report> {
    let d = field.dim();
    if !(theta >= d as f64 && theta > 2.0) {
        return Err(Error::Validation(format!(
            "theta must lie in [d, inf) and exceed 2, got {theta} for d={d}"
        )));
    }
    if !(m >= 0.0) {
        return Err(Error::Validation("decay rate m must be nonnegative".into()));
    }
    if quadrature.nodes_per_dim < 2 || !(quadrature.half_width > 0.0) || quadrature.t_samples.is_empty() {
        return Err(Error::Validation("invalid quadrature settings".into()));
    }
    if !field.is_smooth() {
        return Ok(A3Report {
            theta,
            m,
            declared_bound,
            value: None,
            status: A3Status::NotApplicable,
        });
    }
    let grid = SamplingGrid::cube(
        d,
        quadrature.half_width,
        quadrature.nodes_per_dim,
        quadrature.t_samples.clone(),
    )?;
    let n = quadrature.nodes_per_dim;
    let step = 2.0 * quadrature.half_width / (n - 1) as f64;
    let points = grid.points();
    // trapezoid weights: product of per-dimension endpoint halving
    let weight = |idx: usize| -> f64 {
        let mut w = step.powi(d as i32);
        let mut i = idx;
        for _ in 0..d {
            let k = i % n;
            i /= n;
            if k == 0 || k == n - 1 {
                w *= 0.5;
            }
        }
        w
    };
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut sup = 0.0f64;
            for &t in &quadrature.t_samples {
                let mut integral = 0.0;
                for (idx, x) in points.iter().enumerate() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += FD_STEP;
                    xm[j] -= FD_STEP;
                    let deriv = (field.a(t, &xp)[i * d + j] - field.a(t, &xm)[i * d + j]) / (2.0 * FD_STEP);
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    integral += weight(idx) * deriv.abs().powf(theta) * (-m * norm).exp();
                }
                sup = sup.max(integral);
            }
            total += sup;
        }
    }
    let (value, status) = if total.is_finite() {
        (Some(total), A3Status::Ok)
    } else {
        (None, A3Status::Divergent)
    };
    Ok(A3Report {
        theta,
        m,
        declared_bound,
        value,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::super::presets;
    use super::*;

    fn grid1(h: f64, n: usize) -> SamplingGrid {
        SamplingGrid::cube(1, h, n, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_passes_with_unit_lambda() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let r = check_ellipticity(&f, &grid1(3.0, 11));
        assert_eq!(r.pass, Some(true));
        assert_eq!(r.min_eig, Some(1.0));
        assert_eq!(r.max_eig, Some(1.0));
    }

    #[test]
    fn too_small_diffusion_fails() {
        let f = presets::expression(1, &[vec!["0.4".into()]], &["0".into()], "0", 2.0, 0.0, 0.0, true)
            .unwrap();
        let r = check_ellipticity(&f, &grid1(1.0, 5));
        assert_eq!(r.pass, Some(false));
        assert_eq!(r.min_eig, Some(0.4));
    }

    #[test]
    fn sin_a_extrema() {
        let f = presets::sin_a(1, 0.5).unwrap();
        // grid step pi/2 hits the extrema of sin exactly
        let g = SamplingGrid::cube(1, 2.0 * std::f64::consts::PI, 9, vec![0.0]).unwrap();
        let r = check_ellipticity(&f, &g);
        assert_eq!(r.pass, Some(true));
        assert!((r.min_eig.unwrap() - 0.5).abs() < 1e-12);
        assert!((r.max_eig.unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn non_symmetric_is_reported() {
        let f = presets::expression(
            2,
            &[vec!["1".into(), "0.1".into()], vec!["0".into(), "1".into()]],
            &["0".into(), "0".into()],
            "0",
            2.0,
            0.0,
            0.0,
            true,
        )
        .unwrap();
        let g = SamplingGrid::cube(2, 1.0, 3, vec![0.0]).unwrap();
        let r = check_ellipticity(&f, &g);
        assert_eq!(r.pass, Some(false));
        assert!(r.note.unwrap().contains("symmetric"));
    }

    #[test]
    fn report_serializes_with_required_fields() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let r = check_ellipticity(&f, &grid1(1.0, 3));
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["check", "grid", "min_eig", "max_eig", "pass"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn bounds_checks() {
        let f = presets::disc_bc(1, 0.5, -0.1).unwrap();
        let r = check_bounds(&f, &grid1(2.0, 9));
        assert!(r.iter().all(|e| e.pass == Some(true)));
        assert_eq!(r[0].value, Some(0.5));
        assert_eq!(r[1].value, Some(0.1));
    }

    #[test]
    fn constant_field_has_zero_modulus() {
        let f = presets::constant(&[2.0], &[0.0], 0.0).unwrap();
        let r = estimate_modulus(&f, 3.0, 200, &[0.0], ModulusTarget::Diffusion).unwrap();
        assert!(r.envelope.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sin_a_modulus_is_lipschitz_and_bounded() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let r = estimate_modulus(&f, 4.0, 2000, &[0.0], ModulusTarget::Diffusion).unwrap();
        for (dist, diff) in &r.pairs {
            assert!(*diff <= 0.5 * dist + 1e-12);
        }
        assert!(r.envelope.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.envelope_at(0.0), 0.0);
        assert!(r.envelope_at(std::f64::consts::PI) <= 1.0);
        assert!(r.envelope_at(1e-3) <= 0.5e-3 + 1e-12);
    }

    #[test]
    fn sigma_modulus_dominated_by_diffusion_modulus() {
        // |√a - √b| ≤ |a - b| / (2 √λ_min) with λ_min = 1/Λ, so C = √Λ / 2.
        let f = presets::sin_a(1, 0.5).unwrap();
        let c = f.lambda().sqrt() / 2.0;
        let ra = estimate_modulus(&f, 4.0, 1000, &[0.0], ModulusTarget::Diffusion).unwrap();
        let rs = estimate_modulus(&f, 4.0, 1000, &[0.0], ModulusTarget::Sigma).unwrap();
        for (ea, es) in ra.envelope.iter().zip(&rs.envelope) {
            assert!(*es <= c * ea + 1e-12);
        }
    }

    #[test]
    fn modulus_rejects_bad_radius() {
        let f = presets::sin_a(1, 0.5).unwrap();
        assert!(estimate_modulus(&f, 0.0, 10, &[0.0], ModulusTarget::Diffusion).is_err());
    }

    fn quad(nodes: usize) -> A3Quadrature {
        A3Quadrature {
            half_width: 40.0,
            nodes_per_dim: nodes,
            t_samples: vec![0.0],
        }
    }

    #[test]
    fn a3_constant_is_zero() {
        let f = presets::constant(&[1.5], &[0.0], 0.0).unwrap();
        let r = estimate_a3_integral(&f, 3.0, 1.0, None, &quad(801)).unwrap();
        assert_eq!(r.value, Some(0.0));
        assert_eq!(r.status, A3Status::Ok);
    }

    #[test]
    fn a3_sin_a_converges_under_refinement() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let coarse = estimate_a3_integral(&f, 3.0, 1.0, None, &quad(8001)).unwrap().value.unwrap();
        let fine = estimate_a3_integral(&f, 3.0, 1.0, None, &quad(16001)).unwrap().value.unwrap();
        assert!((coarse - fine).abs() < 1e-5, "{coarse} vs {fine}");
        // ∫ |0.5 cos x|^3 e^{-|x|} dx over R, high-precision adaptive quadrature
        assert!((fine - 0.132_590_290_607_101_75).abs() < 1e-5, "{fine}");
    }

    #[test]
    fn a3_ignores_coordinate_without_dependence() {
        // a depends on x1 only; the j=2 derivative column contributes zero
        let f = presets::expression(
            2,
            &[vec!["1".into(), "0".into()], vec!["0".into(), "1 + 0.5*sin(x1)".into()]],
            &["0".into(), "0".into()],
            "0",
            2.0,
            0.0,
            0.0,
            true,
        )
        .unwrap();
        let q = A3Quadrature {
            half_width: 10.0,
            nodes_per_dim: 41,
            t_samples: vec![0.0],
        };
        let r = estimate_a3_integral(&f, 3.0, 1.0, None, &q).unwrap();
        assert_eq!(r.value, Some(0.0));
    }

    #[test]
    fn a3_not_applicable_for_discontinuous_presets() {
        let f = presets::disc_bc(1, 0.5, -0.1).unwrap();
        let r = estimate_a3_integral(&f, 3.0, 1.0, Some(1.0), &quad(11)).unwrap();
        assert_eq!(r.status, A3Status::NotApplicable);
        assert_eq!(r.to_validation().pass, None);
    }

    #[test]
    fn a3_rejects_small_theta() {
        let f = presets::sin_a(1, 0.5).unwrap();
        assert!(estimate_a3_integral(&f, 2.0, 1.0, None, &quad(11)).is_err());
        let f2 = presets::sin_a(3, 0.5).unwrap();
        assert!(estimate_a3_integral(&f2, 2.5, 1.0, None, &quad(11)).is_err());
    }
}
