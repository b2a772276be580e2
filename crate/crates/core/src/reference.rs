//! Independent oracles: closed-form constant-coefficient kernels, Brownian
//! bridge marginals, a 1-D Crank–Nicolson solver for variable coefficients
//! and the closed-form coupling survival of a 1-D reflected Brownian pair.

use serde::Serialize;

use crate::coefficients::{spd_root, CoefficientField};
use crate::error::{Error, Result};

/// Kernel of `∂_t u = ½ Σ a0_ij ∂_ij u + b0·∇u + c0 u` with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantCoefficientKernel {
    a0: Vec<f64>,
    b0: Vec<f64>,
    c0: f64,
    a_inv: Vec<f64>,
    det: f64,
}

impl ConstantCoefficientKernel {
    pub fn new(a0: Vec<f64>, b0: Vec<f64>, c0: f64) -> Result<Self> {
        let d = b0.len();
        if d == 0 || a0.len() != d * d {
            return Err(Error::Validation(format!(
                "kernel needs a {d}x{d} matrix, got {} entries",
                a0.len()
            )));
        }
        let root = spd_root(&a0, d)
            .map_err(|e| Error::Validation(format!("singular or indefinite a0: {e}")))?;
        let det: f64 = root.eigenvalues.iter().product();
        // a⁻¹ = σ⁻¹ σ⁻¹
        let mut a_inv = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a_inv[i * d + j] = (0..d)
                    .map(|k| root.sigma_inv[i * d + k] * root.sigma_inv[k * d + j])
                    .sum();
            }
        }
        Ok(Self {
            a0,
            b0,
            c0,
            a_inv,
            det,
        })
    }

    pub fn dim(&self) -> usize {
        self.b0.len()
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn b0(&self) -> &[f64] {
        &self.b0
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// The kernel of the driftless diffusion with the same `a0`.
    pub fn driftless(&self) -> Self {
        Self {
            b0: vec![0.0; self.dim()],
            c0: 0.0,
            ..self.clone()
        }
    }

    /// `p(0,x;t,y)`; `t` must be positive.
    pub fn density(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = (0..d).map(|i| y[i] - x[i] - self.b0[i] * t).collect();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += r[i] * self.a_inv[i * d + j] * r[j];
            }
        }
        (2.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0) * self.det.powf(-0.5)
            * (-q / (2.0 * t)).exp()
            * (self.c0 * t).exp()
    }

    /// `∇_x log p(0,x;t,y) = a0⁻¹ (y − x − b0 t) / t`.
    pub fn grad_log_x(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let r: Vec<f64> = (0..d).map(|i| y[i] - x[i] - self.b0[i] * t).collect();
        (0..d)
            .map(|i| (0..d).map(|j| self.a_inv[i * d + j] * r[j]).sum::<f64>() / t)
            .collect()
    }
}

/// Closed-form fundamental solution `p(0,x;t,y)` for constant coefficients.
pub fn gaussian_kernel(k: &ConstantCoefficientKernel, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Validation(format!("kernel time must be positive, got {t}")));
    }
    if x.len() != k.dim() || y.len() != k.dim() {
        return Err(Error::Validation("point dimension does not match kernel".into()));
    }
    Ok(k.density(t, x, y))
}

/// Marginal law of the Brownian bridge from `x` at time 0 to `y` at time `t`,
/// observed at time `s`: `N(x + (s/t)(y − x), s(t−s)/t · I)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeMarginal {
    pub mean: Vec<f64>,
    /// The covariance is `variance · I`.
    pub variance: f64,
}

pub fn brownian_bridge_marginal(t: f64, s: f64, x: &[f64], y: &[f64]) -> Result<BridgeMarginal> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Validation(format!(
            "bridge observation time {s} must lie in (0, {t})"
        )));
    }
    Ok(BridgeMarginal {
        mean: x.iter().zip(y).map(|(a, b)| a + (s / t) * (b - a)).collect(),
        variance: s * (t - s) / t,
    })
}

/// `P(τ > s)` for `ξ = 2B` started at `delta`: `erf(delta / (2√(2s)))`.
pub fn coupling_survival_1d_bm(delta: f64, s: f64) -> f64 {
    libm::erf(delta / (2.0 * (2.0 * s).sqrt()))
}

/// `E[t ∧ τ] = ∫_0^t P(τ > s) ds` for the same pair, by composite Simpson
/// in `u = √s`, which resolves the `δ²` time scale near the origin.
pub fn coupling_expected_time_1d_bm(delta: f64, t: f64) -> f64 {
    let n = 20_000;
    let h = t.sqrt() / n as f64;
    let f = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            2.0 * u * coupling_survival_1d_bm(delta, u * u)
        }
    };
    let mut sum = f(0.0) + f(t.sqrt());
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0
}

/// Finite-difference evaluation of the backward equation on an analytic kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardResidual {
    /// `∂_s p + ½ Σ a_ij ∂_{x_i x_j} p`.
    pub residual: f64,
    pub time_derivative: f64,
    pub diffusion_term: f64,
    /// Central-difference `∇_x p`.
    pub gradient: Vec<f64>,
}

/// Checks `∂_s p^X(s,x;t,y) = −L^X p^X` for a driftless constant kernel.
pub fn backward_residual_check(
    k: &ConstantCoefficientKernel,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    fd_step: f64,
) -> Result<BackwardResidual> {
    if k.b0().iter().any(|v| *v != 0.0) || k.c0() != 0.0 {
        return Err(Error::Validation("backward residual needs b0 = 0 and c0 = 0".into()));
    }
    if !(fd_step > 0.0) || !(t - s > fd_step) {
        return Err(Error::Validation("need 0 < fd_step < t - s".into()));
    }
    let d = k.dim();
    let p = |s: f64, x: &[f64]| k.density(t - s, x, y);
    let h = fd_step;
    let time_derivative = (p(s + h, x) - p(s - h, x)) / (2.0 * h);
    let shifted = |moves: &[(usize, f64)]| {
        let mut z = x.to_vec();
        for &(i, v) in moves {
            z[i] += v;
        }
        p(s, &z)
    };
    let p0 = p(s, x);
    let mut diffusion_term = 0.0;
    let mut gradient = vec![0.0; d];
    for i in 0..d {
        gradient[i] = (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h);
        for j in 0..d {
            let second = if i == j {
                (shifted(&[(i, h)]) - 2.0 * p0 + shifted(&[(i, -h)])) / (h * h)
            } else {
                (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)])
                    - shifted(&[(i, -h), (j, h)])
                    + shifted(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            };
            diffusion_term += 0.5 * k.a0()[i * d + j] * second;
        }
    }
    Ok(BackwardResidual {
        residual: time_derivative + diffusion_term,
        time_derivative,
        diffusion_term,
        gradient,
    })
}

/// Compares `p(0,x;t,y)` with the trapezoid quadrature of
/// `∫ p(0,x;s,ξ) p(s,ξ;t,y) dξ` for a 1-D constant kernel; returns
/// `(direct, composed)`.
pub fn chapman_kolmogorov_analytic(
    k: &ConstantCoefficientKernel,
    x: f64,
    s: f64,
    t: f64,
    y: f64,
    xi_range: (f64, f64),
    n_nodes: usize,
) -> Result<(f64, f64)> {
    if k.dim() != 1 || !(s > 0.0 && s < t) || n_nodes < 2 {
        return Err(Error::Validation(
            "analytic Chapman-Kolmogorov check needs d=1, 0<s<t and at least 2 nodes".into(),
        ));
    }
    let (lo, hi) = xi_range;
    let step = (hi - lo) / (n_nodes - 1) as f64;
    let mut composed = 0.0;
    for i in 0..n_nodes {
        let xi = lo + step * i as f64;
        let w = if i == 0 || i == n_nodes - 1 { 0.5 } else { 1.0 };
        composed += w * k.density(s, &[x], &[xi]) * k.density(t - s, &[xi], &[y]);
    }
    Ok((k.density(t, &[x], &[y]), composed * step))
}

/// Uniform 1-D grid for the Crank–Nicolson oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub dt: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize, dt: f64) -> Result<Self> {
        if !(x_max > x_min) || n_cells < 4 || !(dt > 0.0) {
            return Err(Error::Validation("invalid 1-D grid".into()));
        }
        let g = Self {
            x_min,
            x_max,
            n_cells,
            dt,
        };
        if dt > g.dx() * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "time step {dt} exceeds space step {}",
                g.dx()
            )));
        }
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells)
            .map(|i| self.x_min + (self.x_max - self.x_min) * i as f64 / self.n_cells as f64)
            .collect()
    }
}

/// Initial data for [`crank_nicolson_1d`].
pub enum InitialCondition<'a> {
    /// Point mass, realised as a Gaussian of standard deviation `2 dx`.
    Delta(f64),
    Function(&'a dyn Fn(f64) -> f64),
}

/// Grid values of a Crank–Nicolson solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CnSolution {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl CnSolution {
    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        let lo = self.nodes[0];
        let hi = self.nodes[n - 1];
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let pos = (x - lo) / dx;
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// Trapezoid integral of the grid values.
    pub fn mass(&self) -> f64 {
        let n = self.nodes.len();
        let dx = (self.nodes[n - 1] - self.nodes[0]) / (n - 1) as f64;
        let inner: f64 = self.values[1..n - 1].iter().sum();
        dx * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Form {
    /// `∂_t u = ½ a u'' + b u' + c u` (the equation itself, in the initial point).
    Backward,
    /// `∂_t p = ½ (a p)'' − (b p)' + c p` (the density in the terminal point).
    Forward,
}

fn smoothed_delta(at: f64, width: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        let z = (x - at) / width;
        (-0.5 * z * z).exp() / (width * (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn boundary_mass_bound(field: &CoefficientField, at: f64, t: f64, grid: &Grid1D) -> f64 {
    let dist = (at - grid.x_min).min(grid.x_max - at) - field.b_sup() * t;
    if dist <= 0.0 {
        return 1.0;
    }
    libm::erfc(dist / (2.0 * field.lambda() * t).sqrt())
}

/// Solves `u_t = ½ a u_xx + b u_x + c u` on a 1-D grid up to time `t` with
/// zero Dirichlet boundaries. The potential is split off symmetrically
/// (exactly commuting for constant `c`); the first step is replaced by four
/// implicit Euler quarter steps to damp the non-smooth start.
pub fn crank_nicolson_1d(
    field: &CoefficientField,
    initial: InitialCondition<'_>,
    t: f64,
    grid: &Grid1D,
) -> Result<CnSolution> {
    match initial {
        InitialCondition::Delta(at) => {
            check_delta_grid(field, at, t, grid)?;
            solve(field, &smoothed_delta(at, 2.0 * grid.dx()), t, grid, Form::Backward)
        }
        InitialCondition::Function(f) => {
            let scale = grid.nodes().iter().fold(0.0f64, |m, x| m.max(f(*x).abs()));
            let edge = f(grid.x_min).abs().max(f(grid.x_max).abs());
            if edge > 1e-8 * scale.max(1e-300) {
                return Err(Error::GridTooNarrow { mass: edge / scale });
            }
            solve(field, f, t, grid, Form::Backward)
        }
    }
}

/// Density `y ↦ p(0,x;t,y)` from the forward equation with delta data at `x`
/// of standard deviation `width_cells · dx`.
pub fn crank_nicolson_density_1d(
    field: &CoefficientField,
    x: f64,
    t: f64,
    grid: &Grid1D,
    width_cells: f64,
) -> Result<CnSolution> {
    check_delta_grid(field, x, t, grid)?;
    solve(field, &smoothed_delta(x, width_cells * grid.dx()), t, grid, Form::Forward)
}

fn check_delta_grid(field: &CoefficientField, at: f64, t: f64, grid: &Grid1D) -> Result<()> {
    if field.dim() != 1 {
        return Err(Error::Validation("the finite-difference oracle is one-dimensional".into()));
    }
    let mass = boundary_mass_bound(field, at, t, grid);
    if mass >= 1e-8 {
        return Err(Error::GridTooNarrow { mass });
    }
    Ok(())
}

/// Oracle value of `p(0,x;t,y)` with its delta-smoothing bias estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub y: f64,
    pub value: f64,
    /// `|u(2dx) − u(4dx)| / 3`: the smoothing error of the `2dx` solution
    /// under its quadratic dependence on the width.
    pub smoothing_bias: f64,
}

pub fn fundamental_solution_1d(
    field: &CoefficientField,
    x: f64,
    t: f64,
    ys: &[f64],
    grid: &Grid1D,
) -> Result<Vec<OracleValue>> {
    let narrow = crank_nicolson_density_1d(field, x, t, grid, 2.0)?;
    let wide = crank_nicolson_density_1d(field, x, t, grid, 4.0)?;
    Ok(ys
        .iter()
        .map(|&y| {
            let u2 = narrow.interpolate(y);
            let u4 = wide.interpolate(y);
            OracleValue {
                y,
                value: u2,
                smoothing_bias: (u2 - u4).abs() / 3.0,
            }
        })
        .collect())
}

fn solve(
    field: &CoefficientField,
    f: &dyn Fn(f64) -> f64,
    t: f64,
    grid: &Grid1D,
    form: Form,
) -> Result<CnSolution> {
    if field.dim() != 1 {
        return Err(Error::Validation("the finite-difference oracle is one-dimensional".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let nodes = grid.nodes();
    let mut u: Vec<f64> = nodes.iter().map(|x| f(*x)).collect();
    let n = nodes.len();
    u[0] = 0.0;
    u[n - 1] = 0.0;
    let steps = (t / grid.dt).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let dx = grid.dx();

    let mut solver = ThetaStepper::new(n);
    let mut time = 0.0;
    for step in 0..steps {
        if step == 0 {
            for q in 0..4 {
                let tm = time + (q as f64 + 0.5) * dt / 4.0;
                solver.step(field, &nodes, &mut u, tm, dt / 4.0, dx, 1.0, form);
            }
        } else {
            solver.step(field, &nodes, &mut u, time + 0.5 * dt, dt, dx, 0.5, form);
        }
        time += dt;
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("finite-difference solution is not finite".into()));
    }
    Ok(CnSolution { nodes, values: u })
}

struct ThetaStepper {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl ThetaStepper {
    fn new(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
        }
    }

    /// One θ-scheme step for the transport-diffusion part, wrapped in two
    /// half-steps of the exact potential factor.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        field: &CoefficientField,
        nodes: &[f64],
        u: &mut [f64],
        tm: f64,
        dt: f64,
        dx: f64,
        theta: f64,
        form: Form,
    ) {
        let n = nodes.len();
        for i in 0..n {
            let x = [nodes[i]];
            self.a[i] = field.a(tm, &x)[0];
            self.b[i] = field.b(tm, &x)[0];
            self.c[i] = field.c(tm, &x);
        }
        for i in 0..n {
            u[i] *= (0.5 * dt * self.c[i]).exp();
        }
        // L u_i = lo_i u_{i-1} + di_i u_i + up_i u_{i+1}
        let coeffs = |i: usize| -> (f64, f64, f64) {
            let dx2 = dx * dx;
            match form {
                Form::Backward => {
                    let diff = 0.5 * self.a[i] / dx2;
                    let adv = self.b[i] / (2.0 * dx);
                    (diff - adv, -2.0 * diff, diff + adv)
                }
                Form::Forward => (
                    0.5 * self.a[i - 1] / dx2 + self.b[i - 1] / (2.0 * dx),
                    -self.a[i] / dx2,
                    0.5 * self.a[i + 1] / dx2 - self.b[i + 1] / (2.0 * dx),
                ),
            }
        };
        for i in 1..n - 1 {
            let (lo, di, up) = coeffs(i);
            let lu = lo * u[i - 1] + di * u[i] + up * u[i + 1];
            self.rhs[i] = u[i] + (1.0 - theta) * dt * lu;
            self.lower[i] = -theta * dt * lo;
            self.diag[i] = 1.0 - theta * dt * di;
            self.upper[i] = -theta * dt * up;
        }
        // Dirichlet rows
        self.lower[0] = 0.0;
        self.diag[0] = 1.0;
        self.upper[0] = 0.0;
        self.rhs[0] = 0.0;
        self.lower[n - 1] = 0.0;
        self.diag[n - 1] = 1.0;
        self.upper[n - 1] = 0.0;
        self.rhs[n - 1] = 0.0;
        thomas(&self.lower, &mut self.diag, &self.upper, &mut self.rhs);
        u.copy_from_slice(&self.rhs);
        for i in 0..n {
            u[i] *= (0.5 * dt * self.c[i]).exp();
        }
    }
}

/// Tridiagonal solve in place; the solution overwrites `rhs`.
fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    for i in 1..n {
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}
