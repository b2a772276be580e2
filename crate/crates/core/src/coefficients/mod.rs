//! Coefficient fields `a(t,x)`, `b(t,x)`, `c(t,x)` of the parabolic operator
//! `½ Σ a_ij ∂_ij + Σ b_i ∂_i + c`, together with the matrix square root
//! `σ = √a` used by the diffusion and sampling-based checks of the standing
//! assumptions on the coefficients.
//!
//! Matrices are stored row-major in flat `Vec<f64>` buffers of length `d*d`.

mod expr;
pub mod presets;
mod validate;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::ConstantCoefficientKernel;

pub use expr::ExpressionModel;
pub use validate::{
    check_bounds, check_ellipticity, estimate_a3_integral, estimate_modulus, A3Quadrature,
    A3Report, A3Status, ContinuityReport, ModulusTarget, SamplingGrid, ValidationReport,
};

/// Eigenvalues below this floor are treated as a loss of positive definiteness.
pub const EIGENVALUE_FLOOR: f64 = 1e-14;

/// Uniform ellipticity constant `Λ`: eigenvalues of `a` lie in `[1/Λ, Λ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBounds {
    lambda: f64,
}

impl EllipticityBounds {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(Error::Validation(format!(
                "ellipticity constant must be a finite value >= 1, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lower(&self) -> f64 {
        1.0 / self.lambda
    }

    pub fn upper(&self) -> f64 {
        self.lambda
    }

    /// Inclusive containment with a relative slack of 1e-12.
    pub fn contains(&self, eigenvalue: f64) -> bool {
        eigenvalue >= self.lower() * (1.0 - 1e-12) && eigenvalue <= self.upper() * (1.0 + 1e-12)
    }
}

/// Coefficients evaluated at one space-time point, in the form the path
/// integrators consume.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCoefficients {
    pub dim: usize,
    /// `σ = √a`, row-major.
    pub sigma: Vec<f64>,
    /// `σ⁻¹`, row-major.
    pub sigma_inv: Vec<f64>,
    /// `b_σ = σ⁻¹ b`.
    pub b_sigma: Vec<f64>,
    pub c: f64,
}

impl LocalCoefficients {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sigma: vec![0.0; dim * dim],
            sigma_inv: vec![0.0; dim * dim],
            b_sigma: vec![0.0; dim],
            c: 0.0,
        }
    }
}

/// A closed-form description of `a`, `b` and `c`.
///
/// Implementors only need the three evaluators; `local` has a generic
/// eigendecomposition-based default that presets override with closed forms.
pub trait CoefficientModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn diffusion(&self, t: f64, x: &[f64], a: &mut [f64]);
    fn drift(&self, t: f64, x: &[f64], b: &mut [f64]);
    fn potential(&self, t: f64, x: &[f64]) -> f64;

    /// Whether `a` is differentiable in `x` (central differences make sense).
    fn is_smooth(&self) -> bool {
        true
    }

    /// The constant-coefficient kernel, when `a`, `b`, `c` are constants.
    fn constant_kernel(&self) -> Option<ConstantCoefficientKernel> {
        None
    }

    fn local(
        &self,
        t: f64,
        x: &[f64],
        bounds: &EllipticityBounds,
        out: &mut LocalCoefficients,
    ) -> Result<()> {
        let d = self.dim();
        let mut a = vec![0.0; d * d];
        self.diffusion(t, x, &mut a);
        let root = spd_root(&a, d).map_err(|e| locate(e, t, x, bounds))?;
        if let Some(&bad) = root.eigenvalues.iter().find(|l| !bounds.contains(**l)) {
            return Err(Error::Ellipticity {
                t,
                x: x.to_vec(),
                eigenvalue: bad,
                lower: bounds.lower(),
                upper: bounds.upper(),
            });
        }
        out.sigma.copy_from_slice(&root.sigma);
        out.sigma_inv.copy_from_slice(&root.sigma_inv);
        let mut b = vec![0.0; d];
        self.drift(t, x, &mut b);
        mat_vec(&out.sigma_inv, &b, &mut out.b_sigma);
        out.c = self.potential(t, x);
        Ok(())
    }
}

fn locate(e: Error, t: f64, x: &[f64], bounds: &EllipticityBounds) -> Error {
    match e {
        Error::Ellipticity { eigenvalue, .. } => Error::Ellipticity {
            t,
            x: x.to_vec(),
            eigenvalue,
            lower: bounds.lower(),
            upper: bounds.upper(),
        },
        other => other,
    }
}

/// An immutable, shareable coefficient field with its declared bounds.
#[derive(Clone)]
pub struct CoefficientField {
    model: Arc<dyn CoefficientModel>,
    bounds: EllipticityBounds,
    b_sup: f64,
    c_sup: f64,
    time_shift: f64,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("model", &self.model)
            .field("lambda", &self.bounds.lambda)
            .field("b_sup", &self.b_sup)
            .field("c_sup", &self.c_sup)
            .field("time_shift", &self.time_shift)
            .finish()
    }
}

impl CoefficientField {
    pub fn new(
        model: Arc<dyn CoefficientModel>,
        bounds: EllipticityBounds,
        b_sup: f64,
        c_sup: f64,
    ) -> Result<Self> {
        if model.dim() == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        if !(b_sup >= 0.0) || !(c_sup >= 0.0) {
            return Err(Error::Validation(
                "b_sup and c_sup must be nonnegative".into(),
            ));
        }
        Ok(Self {
            model,
            bounds,
            b_sup,
            c_sup,
            time_shift: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }

    pub fn lambda(&self) -> f64 {
        self.bounds.lambda
    }

    pub fn b_sup(&self) -> f64 {
        self.b_sup
    }

    pub fn c_sup(&self) -> f64 {
        self.c_sup
    }

    pub fn is_smooth(&self) -> bool {
        self.model.is_smooth()
    }

    /// The field `(t,x) ↦ coefficients(t + s, x)`, used to estimate
    /// `p(s,x;t,y)` as `p(0,x;t-s,y)` of the shifted field.
    pub fn time_shifted(&self, s: f64) -> Self {
        let mut shifted = self.clone();
        shifted.time_shift += s;
        shifted
    }

    pub fn a(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut a = vec![0.0; d * d];
        self.model.diffusion(t + self.time_shift, x, &mut a);
        a
    }

    pub fn b(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.dim()];
        self.model.drift(t + self.time_shift, x, &mut b);
        b
    }

    pub fn c(&self, t: f64, x: &[f64]) -> f64 {
        self.model.potential(t + self.time_shift, x)
    }

    /// `σ`, `σ⁻¹`, `b_σ` and `c` at `(t, x)`; fails with the location when
    /// the ellipticity bounds are violated.
    pub fn local(&self, t: f64, x: &[f64], out: &mut LocalCoefficients) -> Result<()> {
        self.model
            .local(t + self.time_shift, x, &self.bounds, out)
    }

    /// Analytic kernel of the full equation for constant-coefficient fields.
    pub fn analytic_kernel(&self) -> Option<ConstantCoefficientKernel> {
        self.model.constant_kernel()
    }
}

/// Eigendecomposition-based square root of an SPD matrix and its inverse.
#[derive(Debug, Clone)]
pub(crate) struct SpdRoot {
    pub sigma: Vec<f64>,
    pub sigma_inv: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

fn check_symmetric(a: &[f64], d: usize) -> Result<()> {
    if a.len() != d * d {
        return Err(Error::Validation(format!(
            "expected {}x{} matrix, got {} entries",
            d,
            d,
            a.len()
        )));
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in (i + 1)..d {
            if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!(
                    "matrix is not symmetric: a[{i}][{j}]={} but a[{j}][{i}]={}",
                    a[i * d + j],
                    a[j * d + i]
                )));
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    Ok(())
}

pub(crate) fn symmetric_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(d, d, a);
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
}

pub(crate) fn spd_root(a: &[f64], d: usize) -> Result<SpdRoot> {
    check_symmetric(a, d)?;
    if d == 1 {
        let l = a[0];
        if !(l >= EIGENVALUE_FLOOR) {
            return Err(Error::Ellipticity {
                t: f64::NAN,
                x: vec![],
                eigenvalue: l,
                lower: EIGENVALUE_FLOOR,
                upper: f64::INFINITY,
            });
        }
        let s = l.sqrt();
        return Ok(SpdRoot {
            sigma: vec![s],
            sigma_inv: vec![1.0 / s],
            eigenvalues: vec![l],
        });
    }
    let m = DMatrix::from_row_slice(d, d, a);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if let Some(&bad) = eigenvalues.iter().find(|l| !(**l >= EIGENVALUE_FLOOR)) {
        return Err(Error::Ellipticity {
            t: f64::NAN,
            x: vec![],
            eigenvalue: bad,
            lower: EIGENVALUE_FLOOR,
            upper: f64::INFINITY,
        });
    }
    let v = &eig.eigenvectors;
    let mut sigma = vec![0.0; d * d];
    let mut sigma_inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            let mut si = 0.0;
            for k in 0..d {
                let r = eigenvalues[k].sqrt();
                let vv = v[(i, k)] * v[(j, k)];
                s += vv * r;
                si += vv / r;
            }
            sigma[i * d + j] = s;
            sigma_inv[i * d + j] = si;
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (sigma[i * d + j] + sigma[j * d + i]);
            sigma[i * d + j] = s;
            sigma[j * d + i] = s;
            let s = 0.5 * (sigma_inv[i * d + j] + sigma_inv[j * d + i]);
            sigma_inv[i * d + j] = s;
            sigma_inv[j * d + i] = s;
        }
    }
    Ok(SpdRoot {
        sigma,
        sigma_inv,
        eigenvalues,
    })
}

/// Symmetric positive-definite square root `σ` with `σσᵀ = a`, row-major.
pub fn sqrt_spd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    spd_root(a, d).map(|r| r.sigma)
}

/// `b_σ(t,x) = σ(t,x)⁻¹ b(t,x)`.
pub fn b_sigma(field: &CoefficientField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let mut lc = LocalCoefficients::new(field.dim());
    field.local(t, x, &mut lc)?;
    Ok(lc.b_sigma)
}

pub(crate) fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}
