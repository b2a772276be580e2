//! Reflection coupling of two copies of the driftless diffusion.
//!
//! Before coupling, `Z` is driven by `H ΔB` with the reflection
//! `H = I − 2uuᵀ/|u|²`, `u = σ(t,Z)⁻¹(X − Z)`. On a grid the pair never
//! meets exactly, so coupling is declared when the separation falls below
//! `factor·√(hΛ)`, when it changes sign along the previous separation
//! direction, or when the Brownian bridge between consecutive grid values of
//! that component crosses zero (sampled with an extra uniform per step). On
//! coupling, `Z` is overwritten by `X` and both move together afterwards.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::coefficients::{mat_vec, CoefficientField, LocalCoefficients};
use crate::error::{Error, Result};
use crate::parallel::try_map_chunks;
use crate::sde::{fill_normals, RngStream, TimeGrid};
use crate::stats::{weighted_line_fit, LineFit, MeanEstimate};

/// Substream tag for the per-step crossing uniforms.
const CROSSING_STREAM: u64 = 0x636f_7570;

/// How coupling is detected on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingRule {
    /// The separation threshold is `factor·√(hΛ)`.
    pub factor: f64,
    /// Also couple on sign changes and sampled bridge crossings.
    pub bridge_crossing: bool,
}

impl Default for CouplingRule {
    fn default() -> Self {
        Self {
            factor: 1e-3,
            bridge_crossing: true,
        }
    }
}

impl CouplingRule {
    /// Plain separation threshold `√(hΛ)/4`, without crossing detection.
    pub fn threshold_only() -> Self {
        Self {
            factor: 0.25,
            bridge_crossing: false,
        }
    }

    pub fn threshold(&self, field: &CoefficientField, grid: &TimeGrid) -> f64 {
        self.factor * (grid.h() * field.lambda()).sqrt()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `I − 2uuᵀ/|u|²` for `u = sigma_z⁻¹ xi`.
pub fn reflection_matrix(sigma_z: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let d = xi.len();
    if sigma_z.len() != d * d {
        return Err(Error::Validation("sigma must be d×d".into()));
    }
    let n = norm(xi);
    if n < 1e-300 {
        return Err(Error::DegenerateDirection(n));
    }
    let inv = DMatrix::from_row_slice(d, d, sigma_z)
        .try_inverse()
        .ok_or_else(|| Error::Validation("sigma is not invertible".into()))?;
    let inv: Vec<f64> = inv.transpose().as_slice().to_vec();
    let mut u = vec![0.0; d];
    mat_vec(&inv, xi, &mut u);
    Ok(householder(&u))
}

fn householder(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] = if i == j { 1.0 } else { 0.0 } - 2.0 * u[i] * u[j] / uu;
        }
    }
    h
}

/// Scratch state for one coupled pair.
struct PairStepper {
    d: usize,
    lx: LocalCoefficients,
    lz: LocalCoefficients,
    x: Vec<f64>,
    z: Vec<f64>,
    xi: Vec<f64>,
    u: Vec<f64>,
    hdb: Vec<f64>,
    tmp: Vec<f64>,
}

impl PairStepper {
    fn new(d: usize, x: &[f64], z: &[f64]) -> Self {
        Self {
            d,
            lx: LocalCoefficients::new(d),
            lz: LocalCoefficients::new(d),
            x: x.to_vec(),
            z: z.to_vec(),
            xi: vec![0.0; d],
            u: vec![0.0; d],
            hdb: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    fn xi_now(&self) -> Vec<f64> {
        self.x.iter().zip(&self.z).map(|(a, b)| a - b).collect()
    }

    fn advance(x: &mut [f64], sigma: &[f64], db: &[f64], tmp: &mut [f64]) {
        mat_vec(sigma, db, tmp);
        for (a, b) in x.iter_mut().zip(tmp.iter()) {
            *a += b;
        }
    }

    /// One step before coupling; returns whether coupling fired at the new
    /// grid point (or, for a degenerate direction, at the current one).
    #[allow(clippy::too_many_arguments)]
    fn step_uncoupled(
        &mut self,
        field: &CoefficientField,
        t: f64,
        h: f64,
        db: &[f64],
        uniform: f64,
        threshold: f64,
        rule: &CouplingRule,
    ) -> Result<Coupling> {
        let d = self.d;
        for i in 0..d {
            self.xi[i] = self.x[i] - self.z[i];
        }
        field.local(t, &self.z, &mut self.lz)?;
        mat_vec(&self.lz.sigma_inv, &self.xi, &mut self.u);
        let uu: f64 = self.u.iter().map(|a| a * a).sum();
        if uu.sqrt() < 1e-12 {
            self.z.copy_from_slice(&self.x);
            return Ok(Coupling::Now);
        }
        field.local(t, &self.x, &mut self.lx)?;
        // H ΔB = ΔB − 2u⟨u,ΔB⟩/|u|²
        let proj: f64 = self.u.iter().zip(db).map(|(a, b)| a * b).sum::<f64>() / uu;
        for i in 0..d {
            self.hdb[i] = db[i] - 2.0 * self.u[i] * proj;
        }
        Self::advance(&mut self.x, &self.lx.sigma, db, &mut self.tmp);
        Self::advance(&mut self.z, &self.lz.sigma, &self.hdb, &mut self.tmp);

        let r0 = norm(&self.xi);
        let mut r1 = 0.0;
        let mut along = 0.0;
        for i in 0..d {
            let v = self.x[i] - self.z[i];
            r1 += v * v;
            along += v * self.xi[i];
        }
        let r1 = r1.sqrt();
        let mut fire = r1 <= threshold;
        if rule.bridge_crossing && !fire {
            let along = along / r0;
            if along <= 0.0 {
                fire = true;
            } else {
                // variance rate of ⟨ξ, e⟩: |αᵀe|² with α = σ_X − σ_Z H
                let mut v = 0.0;
                for j in 0..d {
                    let mut col = 0.0;
                    for i in 0..d {
                        let e_i = self.xi[i] / r0;
                        let mut szh = 0.0;
                        for k in 0..d {
                            let hkj = if k == j { 1.0 } else { 0.0 } - 2.0 * self.u[k] * self.u[j] / uu;
                            szh += self.lz.sigma[i * d + k] * hkj;
                        }
                        col += e_i * (self.lx.sigma[i * d + j] - szh);
                    }
                    v += col * col;
                }
                if v > 0.0 && uniform < (-2.0 * r0 * along / (v * h)).exp() {
                    fire = true;
                }
            }
        }
        if fire {
            self.z.copy_from_slice(&self.x);
            return Ok(Coupling::Next);
        }
        Ok(Coupling::No)
    }

    fn step_coupled(&mut self, field: &CoefficientField, t: f64, db: &[f64]) -> Result<()> {
        field.local(t, &self.x, &mut self.lx)?;
        Self::advance(&mut self.x, &self.lx.sigma, db, &mut self.tmp);
        self.z.copy_from_slice(&self.x);
        Ok(())
    }
}

enum Coupling {
    No,
    /// Coupled at the current grid point (degenerate direction).
    Now,
    /// Coupled at the next grid point.
    Next,
}

/// Runs one pair over the first `steps` grid steps with the given inputs.
/// `visit(k, x, z)` sees every grid state; returns the coupling step.
#[allow(clippy::too_many_arguments)]
fn run_pair(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    grid: &TimeGrid,
    rule: &CouplingRule,
    steps: usize,
    stop_at_coupling: bool,
    mut inputs: impl FnMut(usize, &mut [f64]) -> f64,
    mut visit: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Option<usize>> {
    let d = field.dim();
    let h = grid.h();
    let threshold = rule.threshold(field, grid);
    let mut st = PairStepper::new(d, x, z);
    let mut db = vec![0.0; d];
    let mut tau = None;
    if norm(&st.xi_now()) == 0.0 {
        tau = Some(0);
    }
    visit(0, &st.x, &st.z);
    for k in 0..steps {
        if tau.is_some() && stop_at_coupling {
            break;
        }
        let uniform = inputs(k, &mut db);
        let t = grid.time(k);
        match tau {
            Some(_) => st.step_coupled(field, t, &db)?,
            None => match st.step_uncoupled(field, t, h, &db, uniform, threshold, rule)? {
                Coupling::No => {}
                Coupling::Next => tau = Some(k + 1),
                Coupling::Now => {
                    tau = Some(k);
                    st.step_coupled(field, t, &db)?;
                }
            },
        }
        visit(k + 1, &st.x, &st.z);
    }
    Ok(tau)
}

/// A simulated coupled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub grid: TimeGrid,
    pub dim: usize,
    /// Grid states of `X` and `Z`, `(steps + 1) × dim` each.
    pub x_states: Vec<f64>,
    pub z_states: Vec<f64>,
    /// Grid index at which coupling was declared.
    pub tau_step: Option<usize>,
}

impl CoupledPath {
    pub fn tau(&self) -> Option<f64> {
        self.tau_step.map(|k| self.grid.time(k))
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x_states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn z(&self, k: usize) -> &[f64] {
        &self.z_states[k * self.dim..(k + 1) * self.dim]
    }
}

/// Deterministic core: runs the pair on explicit Brownian increments
/// (`steps × d`) and crossing uniforms (`steps`), where `steps` may be
/// shorter than the grid to replay a truncated input.
pub fn couple_with_inputs(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    grid: TimeGrid,
    rule: &CouplingRule,
    increments: &[f64],
    uniforms: &[f64],
) -> Result<CoupledPath> {
    let d = field.dim();
    if x.len() != d || z.len() != d {
        return Err(Error::Validation("pair points must match the field dimension".into()));
    }
    let steps = uniforms.len().min(grid.n_steps);
    if increments.len() < steps * d {
        return Err(Error::Validation("not enough increments for the requested steps".into()));
    }
    let mut xs = Vec::with_capacity((steps + 1) * d);
    let mut zs = Vec::with_capacity((steps + 1) * d);
    let tau_step = run_pair(
        field,
        x,
        z,
        &grid,
        rule,
        steps,
        false,
        |k, db| {
            db.copy_from_slice(&increments[k * d..(k + 1) * d]);
            uniforms[k]
        },
        |_, a, b| {
            xs.extend_from_slice(a);
            zs.extend_from_slice(b);
        },
    )?;
    Ok(CoupledPath {
        grid,
        dim: d,
        x_states: xs,
        z_states: zs,
        tau_step,
    })
}

/// Draws the inputs of pair `i`: increments from the stream, uniforms from
/// an independent substream so the increments do not depend on the rule.
fn pair_inputs(rng: &RngStream, i: u64, grid: &TimeGrid, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut inc = vec![0.0; grid.n_steps * d];
    fill_normals(&mut rng.path_rng(i), grid.h(), &mut inc);
    let mut ur = rng.substream(CROSSING_STREAM).path_rng(i);
    let uni = (0..grid.n_steps).map(|_| ur.random::<f64>()).collect();
    (inc, uni)
}

/// One coupled pair over the whole grid; uses stream path 0.
pub fn simulate_coupled_pair(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    grid: TimeGrid,
    rule: &CouplingRule,
    rng: &RngStream,
) -> Result<CoupledPath> {
    simulate_coupled_pairs(field, x, z, grid, rule, 1, rng).map(|mut v| v.remove(0))
}

/// `n_pairs` full coupled pairs; pair `i` reads stream path `i`.
pub fn simulate_coupled_pairs(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    grid: TimeGrid,
    rule: &CouplingRule,
    n_pairs: usize,
    rng: &RngStream,
) -> Result<Vec<CoupledPath>> {
    let d = field.dim();
    let parts = try_map_chunks(n_pairs, |range| {
        range
            .map(|i| {
                let (inc, uni) = pair_inputs(rng, i as u64, &grid, d);
                couple_with_inputs(field, x, z, grid, rule, &inc, &uni)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// One point of an empirical survival curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub s: f64,
    pub survival: f64,
    pub stderr: f64,
}

/// Coupling-time statistics over many independent pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingStats {
    pub delta: f64,
    pub t: f64,
    pub n_pairs: usize,
    /// Estimate of `E[t ∧ τ]`.
    pub e_t_tau: MeanEstimate,
    /// Number of pairs coupled at each grid index `0..=n_steps`.
    #[serde(skip)]
    pub coupled_at: Vec<u64>,
    #[serde(skip)]
    pub grid: TimeGrid,
}

impl CouplingStats {
    /// Empirical `P(τ > t_k)` with its binomial standard error.
    pub fn survival_at_step(&self, k: usize) -> SurvivalPoint {
        let coupled: u64 = self.coupled_at[..=k].iter().sum();
        let n = self.n_pairs as f64;
        let p = 1.0 - coupled as f64 / n;
        SurvivalPoint {
            s: self.grid.time(k),
            survival: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
        }
    }

    /// The survival curve at every `stride`-th grid point and at `t`.
    pub fn survival(&self, stride: usize) -> Vec<SurvivalPoint> {
        let n = self.grid.n_steps;
        let stride = stride.max(1);
        let mut out = Vec::new();
        let mut acc = 0u64;
        for k in 0..=n {
            acc += self.coupled_at[k];
            if k % stride == 0 || k == n {
                let p = 1.0 - acc as f64 / self.n_pairs as f64;
                out.push(SurvivalPoint {
                    s: self.grid.time(k),
                    survival: p,
                    stderr: (p * (1.0 - p) / self.n_pairs as f64).sqrt(),
                });
            }
        }
        out
    }

    /// `sup_k |P̂(τ > t_k) − survival(t_k)|` over the grid times in `(0, t]`.
    pub fn ks_distance(&self, survival: impl Fn(f64) -> f64) -> f64 {
        self.survival(1)
            .iter()
            .skip(1)
            .map(|p| (p.survival - survival(p.s)).abs())
            .fold(0.0, f64::max)
    }
}

/// Monte Carlo `E[t ∧ τ]` and survival curve for pairs started at `(x, z)`
/// over `grid` (`t` is the grid length). Pairs stop once coupled.
pub fn coupling_time_stats(
    field: &CoefficientField,
    x: &[f64],
    z: &[f64],
    grid: TimeGrid,
    rule: &CouplingRule,
    n_pairs: usize,
    rng: &RngStream,
) -> Result<CouplingStats> {
    let d = field.dim();
    if x.len() != d || z.len() != d {
        return Err(Error::Validation("pair points must match the field dimension".into()));
    }
    if n_pairs == 0 {
        return Err(Error::Validation("n_pairs must be at least 1".into()));
    }
    let n = grid.n_steps;
    let horizon = grid.t_end - grid.t_start;
    let parts = try_map_chunks(n_pairs, |range| {
        let mut taus = Vec::with_capacity(range.len());
        for i in range {
            let mut nr = rng.path_rng(i as u64);
            let mut ur = rng.substream(CROSSING_STREAM).path_rng(i as u64);
            let h = grid.h();
            let tau = run_pair(
                field,
                x,
                z,
                &grid,
                rule,
                n,
                true,
                |_, db| {
                    fill_normals(&mut nr, h, db);
                    ur.random::<f64>()
                },
                |_, _, _| {},
            )?;
            taus.push(tau);
        }
        Ok::<_, Error>(taus)
    })?;
    let mut coupled_at = vec![0u64; n + 1];
    let mut values = Vec::with_capacity(n_pairs);
    for tau in parts.into_iter().flatten() {
        match tau {
            Some(k) => {
                coupled_at[k] += 1;
                values.push(grid.time(k) - grid.t_start);
            }
            None => values.push(horizon),
        }
    }
    let delta = norm(&x.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(CouplingStats {
        delta,
        t: horizon,
        n_pairs,
        e_t_tau: MeanEstimate::from_values(&values)?,
        coupled_at,
        grid,
    })
}

/// One row of the exponent table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub t: f64,
    pub e_t_tau: f64,
    pub stderr: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingExponent {
    /// Fit of `log E[t∧τ]` against `log δ`.
    pub fit: LineFit,
    pub table: Vec<DeltaRow>,
    /// Full statistics per separation, in table order.
    #[serde(skip)]
    pub stats: Vec<CouplingStats>,
}

/// Regresses `log E[t∧τ]` on `log δ` for pairs `(x0, x0 + δ e₁)`; each
/// separation uses its own substream.
pub fn estimate_coupling_exponent(
    field: &CoefficientField,
    x0: &[f64],
    deltas: &[f64],
    grid: TimeGrid,
    rule: &CouplingRule,
    n_pairs: usize,
    rng: &RngStream,
) -> Result<CouplingExponent> {
    if deltas.len() < 3 {
        return Err(Error::DegenerateRegression(format!(
            "need at least 3 separations, got {}",
            deltas.len()
        )));
    }
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Validation("separations must be positive".into()));
    }
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(0.0, f64::max);
    if hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::Validation("separations must span at least one decade".into()));
    }
    let mut table = Vec::with_capacity(deltas.len());
    let mut all = Vec::with_capacity(deltas.len());
    for (j, &delta) in deltas.iter().enumerate() {
        let mut z = x0.to_vec();
        z[0] += delta;
        let stats = coupling_time_stats(field, x0, &z, grid, rule, n_pairs, &rng.substream(j as u64))?;
        table.push(DeltaRow {
            delta,
            t: stats.t,
            e_t_tau: stats.e_t_tau.mean,
            stderr: stats.e_t_tau.stderr,
            n_pairs,
        });
        all.push(stats);
    }
    let lx: Vec<f64> = table.iter().map(|r| r.delta.ln()).collect();
    let ly: Vec<f64> = table.iter().map(|r| r.e_t_tau.ln()).collect();
    let sd: Vec<f64> = table.iter().map(|r| r.stderr / r.e_t_tau).collect();
    if ly.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRegression("a separation coupled instantly on every pair".into()));
    }
    Ok(CouplingExponent {
        fit: weighted_line_fit(&lx, &ly, &sd)?,
        table,
        stats: all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::presets;
    use crate::reference::{coupling_expected_time_1d_bm, coupling_survival_1d_bm};
    use crate::sde::sample_endpoints;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
            }
        }
        c
    }

    fn identity(d: usize) -> Vec<f64> {
        (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn reflection_examples() {
        assert_eq!(reflection_matrix(&[3.0], &[0.2]).unwrap(), vec![-1.0]);
        let h = reflection_matrix(&identity(3), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h, vec![-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let h = reflection_matrix(&[2.0, 0.0, 0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(max_abs_diff(&h, &[0.6, -0.8, -0.8, -0.6]) < 1e-15);
        assert!(max_abs_diff(&mat_mul(&h, &h, 2), &identity(2)) < 1e-12);
        assert!(matches!(
            reflection_matrix(&identity(2), &[0.0, 1e-310]),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn reflection_flips_normal_direction() {
        let s = [1.3, 0.2, 0.2, 0.9];
        let xi = [0.4, -0.7];
        let h = reflection_matrix(&s, &xi).unwrap();
        let inv = DMatrix::from_row_slice(2, 2, &s).try_inverse().unwrap();
        let u = [
            inv[(0, 0)] * xi[0] + inv[(0, 1)] * xi[1],
            inv[(1, 0)] * xi[0] + inv[(1, 1)] * xi[1],
        ];
        let hu = [h[0] * u[0] + h[1] * u[1], h[2] * u[0] + h[3] * u[1]];
        assert!((hu[0] + u[0]).abs() < 1e-12 && (hu[1] + u[1]).abs() < 1e-12);
        assert_eq!(h[1], h[2]);
    }

    #[test]
    fn equal_start_couples_immediately() {
        let f = presets::sin_a(2, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let p = simulate_coupled_pair(&f, &[0.3, 0.1], &[0.3, 0.1], g, &CouplingRule::default(), &RngStream::new(0, 0))
            .unwrap();
        assert_eq!(p.tau(), Some(0.0));
        assert_eq!(p.x_states, p.z_states);
        let s = coupling_time_stats(&f, &[0.3, 0.1], &[0.3, 0.1], g, &CouplingRule::default(), 100, &RngStream::new(0, 0))
            .unwrap();
        assert_eq!(s.e_t_tau.mean, 0.0);
    }

    #[test]
    fn glued_after_coupling() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let pairs = simulate_coupled_pairs(&f, &[0.0], &[0.05], g, &CouplingRule::default(), 200, &RngStream::new(2, 0))
            .unwrap();
        let mut coupled = 0;
        for p in &pairs {
            if let Some(k) = p.tau_step {
                coupled += 1;
                for j in k..=g.n_steps {
                    assert_eq!(p.x(j), p.z(j));
                }
                for j in 0..k {
                    assert_ne!(p.x(j), p.z(j));
                }
            }
        }
        assert!(coupled > 100);
    }

    #[test]
    fn far_apart_pairs_never_couple() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let g = TimeGrid::new(0.0, 1e-3, 100).unwrap();
        let s = coupling_time_stats(&f, &[0.0], &[5.0], g, &CouplingRule::default(), 500, &RngStream::new(1, 0))
            .unwrap();
        assert!((s.e_t_tau.mean - 1e-3).abs() < 1e-15);
        assert_eq!(s.coupled_at.iter().sum::<u64>(), 0);
    }

    #[test]
    fn coupling_is_a_stopping_time() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 500).unwrap();
        let rule = CouplingRule::default();
        for i in 0..50u64 {
            let (inc, uni) = pair_inputs(&RngStream::new(5, 0), i, &g, 1);
            let full = couple_with_inputs(&f, &[0.0], &[0.1], g, &rule, &inc, &uni).unwrap();
            if let Some(k) = full.tau_step {
                // replaying only the inputs up to τ reproduces the decision
                let cut = couple_with_inputs(&f, &[0.0], &[0.1], g, &rule, &inc[..k], &uni[..k]).unwrap();
                assert_eq!(cut.tau_step, Some(k));
                let early = couple_with_inputs(&f, &[0.0], &[0.1], g, &rule, &inc[..k - 1], &uni[..k - 1]).unwrap();
                assert_eq!(early.tau_step, None);
            }
        }
    }

    #[test]
    fn brownian_survival_and_mean() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        let s = coupling_time_stats(&f, &[0.0], &[0.1], g, &CouplingRule::default(), 20_000, &RngStream::new(3, 0))
            .unwrap();
        let ks = s.ks_distance(|t| coupling_survival_1d_bm(0.1, t));
        assert!(ks < 0.02, "{ks}");
        let exact = coupling_expected_time_1d_bm(0.1, 1.0);
        assert!((s.e_t_tau.mean - exact).abs() < 3.0 * s.e_t_tau.stderr + g.h(), "{:?} vs {exact}", s.e_t_tau);
        let surv = s.survival(10);
        assert!(surv.windows(2).all(|w| w[1].survival <= w[0].survival));
        assert!(s.e_t_tau.mean <= 1.0);
    }

    #[test]
    fn diffusive_rescaling_preserves_coupling_steps() {
        // (kσ, t/k²) and (σ, t) give the same τ in grid steps
        let k = 2.0;
        let f1 = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let fk = presets::constant(&[k * k], &[0.0], 0.0).unwrap();
        let g1 = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let gk = TimeGrid::new(0.0, 1.0 / (k * k), 400).unwrap();
        let rule = CouplingRule {
            factor: 1e-3,
            bridge_crossing: true,
        };
        let mut same = 0;
        let n = 300;
        for i in 0..n {
            let (inc1, uni) = pair_inputs(&RngStream::new(8, 0), i, &g1, 1);
            let inck: Vec<f64> = inc1.iter().map(|v| v / k).collect();
            let a = couple_with_inputs(&f1, &[0.0], &[0.1], g1, &rule, &inc1, &uni).unwrap();
            // hΛ, and hence the threshold, is the same on both grids
            let b = couple_with_inputs(&fk, &[0.0], &[0.1], gk, &rule, &inck, &uni).unwrap();
            if a.tau_step == b.tau_step {
                same += 1;
            }
        }
        assert!(same as f64 >= 0.99 * n as f64, "{same}/{n}");
    }

    #[test]
    fn z_marginal_has_diffusion_law() {
        let f = presets::sin_a(1, 0.5).unwrap();
        let g = TimeGrid::new(0.0, 0.5, 100).unwrap();
        let n = 20_000;
        let pairs = simulate_coupled_pairs(&f, &[0.0], &[0.3], g, &CouplingRule::default(), n, &RngStream::new(4, 0))
            .unwrap();
        let zs: Vec<f64> = pairs.iter().map(|p| p.z(g.n_steps)[0]).collect();
        let direct = sample_endpoints(&f, &[0.3], g, n, &RngStream::new(4, 1)).unwrap();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var)
        };
        let (mz, vz) = stats(&zs);
        let (md, vd) = stats(&direct.points);
        let se_m = ((vz + vd) / n as f64).sqrt();
        assert!((mz - md).abs() < 4.0 * se_m, "{mz} vs {md}");
        // variance of a sample variance ≈ 2σ⁴/n for near-normal data
        let se_v = (2.0 * (vz * vz + vd * vd) / n as f64).sqrt();
        assert!((vz - vd).abs() < 4.0 * se_v, "{vz} vs {vd}");
    }

    #[test]
    fn monotone_in_delta_and_t() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let rng = RngStream::new(6, 0);
        let g = TimeGrid::new(0.0, 0.5, 500).unwrap();
        let e = |d: f64, g: TimeGrid| {
            coupling_time_stats(&f, &[0.0], &[d], g, &CouplingRule::default(), 5000, &rng)
                .unwrap()
                .e_t_tau
        };
        let a = e(0.05, g);
        let b = e(0.2, g);
        assert!(b.mean + 2.0 * b.stderr >= a.mean);
        let g2 = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let c = e(0.2, g2);
        assert!(c.mean + 2.0 * c.stderr >= b.mean);
    }

    #[test]
    fn exponent_requires_three_deltas_and_a_decade() {
        let f = presets::constant(&[1.0], &[0.0], 0.0).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let r = RngStream::new(0, 0);
        let rule = CouplingRule::default();
        assert!(matches!(
            estimate_coupling_exponent(&f, &[0.0], &[0.1, 0.2], g, &rule, 10, &r),
            Err(Error::DegenerateRegression(_))
        ));
        assert!(estimate_coupling_exponent(&f, &[0.0], &[0.1, 0.2, 0.3], g, &rule, 10, &r).is_err());
    }
}
