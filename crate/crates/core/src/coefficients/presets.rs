//! Catalog of closed-form coefficient fields.
//!
//! * `const`: constant `a`, `b`, `c` (analytic Gaussian kernel available).
//! * `sin_a`: `a(x) = (1 + α sin x₁) I`, `b = 0`, `c = 0`.
//! * `disc_bc`: `a = I`, `b(x) = β sign(x₁) e₁`, `c(x) = γ 1{x₁ > 0}`, with
//!   jump discontinuities in the lower-order coefficients.

use std::sync::Arc;

use super::{
    spd_root, symmetric_eigenvalues, CoefficientField, CoefficientModel, EllipticityBounds,
    ExpressionModel, LocalCoefficients,
};
use crate::error::{Error, Result};
use crate::reference::ConstantCoefficientKernel;

#[derive(Debug)]
struct ConstantModel {
    kernel: ConstantCoefficientKernel,
    local: LocalCoefficients,
}

impl CoefficientModel for ConstantModel {
    fn name(&self) -> &str {
        "const"
    }

    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn diffusion(&self, _t: f64, _x: &[f64], a: &mut [f64]) {
        a.copy_from_slice(self.kernel.a0());
    }

    fn drift(&self, _t: f64, _x: &[f64], b: &mut [f64]) {
        b.copy_from_slice(self.kernel.b0());
    }

    fn potential(&self, _t: f64, _x: &[f64]) -> f64 {
        self.kernel.c0()
    }

    fn constant_kernel(&self) -> Option<ConstantCoefficientKernel> {
        Some(self.kernel.clone())
    }

    fn local(
        &self,
        _t: f64,
        _x: &[f64],
        _bounds: &EllipticityBounds,
        out: &mut LocalCoefficients,
    ) -> Result<()> {
        out.sigma.copy_from_slice(&self.local.sigma);
        out.sigma_inv.copy_from_slice(&self.local.sigma_inv);
        out.b_sigma.copy_from_slice(&self.local.b_sigma);
        out.c = self.local.c;
        Ok(())
    }
}

/// Constant coefficients; `a` is row-major `d×d`. `Λ` is the smallest
/// admissible constant for the spectrum of `a`.
pub fn constant(a: &[f64], b: &[f64], c: f64) -> Result<CoefficientField> {
    let d = b.len();
    let kernel = ConstantCoefficientKernel::new(a.to_vec(), b.to_vec(), c)?;
    let root = spd_root(a, d)?;
    let mut local = LocalCoefficients::new(d);
    local.sigma = root.sigma;
    local.sigma_inv = root.sigma_inv;
    super::mat_vec(&local.sigma_inv, b, &mut local.b_sigma);
    local.c = c;
    let lmin = root.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = root.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lambda = lmax.max(1.0 / lmin).max(1.0);
    let b_sup = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    CoefficientField::new(
        Arc::new(ConstantModel { kernel, local }),
        EllipticityBounds::new(lambda)?,
        b_sup,
        c.abs(),
    )
}

#[derive(Debug)]
struct SinAModel {
    dim: usize,
    amplitude: f64,
}

impl CoefficientModel for SinAModel {
    fn name(&self) -> &str {
        "sin_a"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, _t: f64, x: &[f64], a: &mut [f64]) {
        let s = 1.0 + self.amplitude * x[0].sin();
        a.fill(0.0);
        for i in 0..self.dim {
            a[i * self.dim + i] = s;
        }
    }

    fn drift(&self, _t: f64, _x: &[f64], b: &mut [f64]) {
        b.fill(0.0);
    }

    fn potential(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }

    fn local(
        &self,
        _t: f64,
        x: &[f64],
        _bounds: &EllipticityBounds,
        out: &mut LocalCoefficients,
    ) -> Result<()> {
        let s = (1.0 + self.amplitude * x[0].sin()).sqrt();
        let d = self.dim;
        if d == 1 {
            out.sigma[0] = s;
            out.sigma_inv[0] = 1.0 / s;
        } else {
            out.sigma.fill(0.0);
            out.sigma_inv.fill(0.0);
            for i in 0..d {
                out.sigma[i * d + i] = s;
                out.sigma_inv[i * d + i] = 1.0 / s;
            }
        }
        out.b_sigma.fill(0.0);
        out.c = 0.0;
        Ok(())
    }
}

/// `a(x) = (1 + amplitude·sin x₁) I` with `b = 0`, `c = 0`.
pub fn sin_a(dim: usize, amplitude: f64) -> Result<CoefficientField> {
    if !(amplitude.abs() < 1.0) {
        return Err(Error::Validation(format!(
            "sin_a amplitude must lie in (-1, 1), got {amplitude}"
        )));
    }
    let lambda = (1.0 + amplitude.abs()).max(1.0 / (1.0 - amplitude.abs()));
    CoefficientField::new(
        Arc::new(SinAModel { dim, amplitude }),
        EllipticityBounds::new(lambda)?,
        0.0,
        0.0,
    )
}

#[derive(Debug)]
struct DiscBcModel {
    dim: usize,
    drift: f64,
    potential: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl CoefficientModel for DiscBcModel {
    fn name(&self) -> &str {
        "disc_bc"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, _t: f64, _x: &[f64], a: &mut [f64]) {
        a.fill(0.0);
        for i in 0..self.dim {
            a[i * self.dim + i] = 1.0;
        }
    }

    fn drift(&self, _t: f64, x: &[f64], b: &mut [f64]) {
        b.fill(0.0);
        b[0] = self.drift * sign(x[0]);
    }

    fn potential(&self, _t: f64, x: &[f64]) -> f64 {
        if x[0] > 0.0 {
            self.potential
        } else {
            0.0
        }
    }

    fn is_smooth(&self) -> bool {
        false
    }

    fn local(
        &self,
        t: f64,
        x: &[f64],
        _bounds: &EllipticityBounds,
        out: &mut LocalCoefficients,
    ) -> Result<()> {
        let d = self.dim;
        if d == 1 {
            out.sigma[0] = 1.0;
            out.sigma_inv[0] = 1.0;
        } else {
            out.sigma.fill(0.0);
            out.sigma_inv.fill(0.0);
            for i in 0..d {
                out.sigma[i * d + i] = 1.0;
                out.sigma_inv[i * d + i] = 1.0;
            }
        }
        self.drift(t, x, &mut out.b_sigma);
        out.c = self.potential(t, x);
        Ok(())
    }
}

/// `a = I`, `b(x) = drift·sign(x₁) e₁`, `c(x) = potential·1{x₁ > 0}`.
pub fn disc_bc(dim: usize, drift: f64, potential: f64) -> Result<CoefficientField> {
    CoefficientField::new(
        Arc::new(DiscBcModel {
            dim,
            drift,
            potential,
        }),
        EllipticityBounds::new(1.0)?,
        drift.abs(),
        potential.abs(),
    )
}

/// Coefficients given as expressions in `t` and `x1..xd`.
#[allow(clippy::too_many_arguments)]
pub fn expression(
    dim: usize,
    a: &[Vec<String>],
    b: &[String],
    c: &str,
    lambda: f64,
    b_sup: f64,
    c_sup: f64,
    smooth: bool,
) -> Result<CoefficientField> {
    let model = ExpressionModel::new(dim, a, b, c, smooth)?;
    CoefficientField::new(Arc::new(model), EllipticityBounds::new(lambda)?, b_sup, c_sup)
}

/// Smallest `Λ` compatible with the spectrum of `a` at the given points.
pub fn lambda_for(a_samples: &[Vec<f64>], d: usize) -> f64 {
    a_samples
        .iter()
        .flat_map(|a| symmetric_eigenvalues(a, d))
        .fold(1.0f64, |l, e| l.max(e).max(1.0 / e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_lambda_from_spectrum() {
        let f = constant(&[2.0, 1.0, 1.0, 2.0], &[0.0, 0.0], 0.0).unwrap();
        assert!((f.lambda() - 3.0).abs() < 1e-12);
        let f = constant(&[0.25], &[0.3], -0.2).unwrap();
        assert!((f.lambda() - 4.0).abs() < 1e-12);
        assert_eq!(f.b_sup(), 0.3);
        assert_eq!(f.c_sup(), 0.2);
        assert!(f.analytic_kernel().is_some());
    }

    #[test]
    fn sin_a_closed_form_matches_generic_root() {
        let f = sin_a(2, 0.5).unwrap();
        assert_eq!(f.lambda(), 2.0);
        let x = [0.7, -1.0];
        let mut fast = LocalCoefficients::new(2);
        f.local(0.0, &x, &mut fast).unwrap();
        let root = spd_root(&f.a(0.0, &x), 2).unwrap();
        for (u, v) in fast.sigma.iter().zip(&root.sigma) {
            assert!((u - v).abs() < 1e-14);
        }
        for (u, v) in fast.sigma_inv.iter().zip(&root.sigma_inv) {
            assert!((u - v).abs() < 1e-14);
        }
        assert!(sin_a(1, 1.0).is_err());
    }

    #[test]
    fn disc_bc_values() {
        let f = disc_bc(1, 0.5, -0.1).unwrap();
        assert_eq!(f.b(0.0, &[2.0]), vec![0.5]);
        assert_eq!(f.b(0.0, &[-2.0]), vec![-0.5]);
        assert_eq!(f.b(0.0, &[0.0]), vec![0.0]);
        assert_eq!(f.c(0.0, &[1.0]), -0.1);
        assert_eq!(f.c(0.0, &[-1.0]), 0.0);
        assert!(!f.is_smooth());
        assert!(f.analytic_kernel().is_none());
    }

    #[test]
    fn lambda_for_samples() {
        let l = lambda_for(&[vec![0.5], vec![1.5]], 1);
        assert_eq!(l, 2.0);
    }
}
