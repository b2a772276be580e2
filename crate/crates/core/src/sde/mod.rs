//! Euler–Maruyama simulation of `dX = σ(t,X) dB` with the Feynman–Kac weight.

mod bridge;
mod io;
mod rng;
mod weight;

pub use bridge::{sample_bridges, simulate_bridge, BridgeSample};
pub use io::{read_trajectory, write_trajectory};
pub use rng::RngStream;
pub(crate) use rng::fill_normals;
pub use weight::{accumulate_weight, weight_split, WeightAccumulator};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coefficients::{CoefficientField, LocalCoefficients};
use crate::error::{Error, Result};
use crate::parallel::try_map_chunks;
use crate::stats::MeanEstimate;

/// Uniform time grid `t_start = t_0 < … < t_n = t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start >= 0.0) || !(t_end > t_start) || !t_end.is_finite() || n_steps == 0 {
            return Err(Error::Validation(format!(
                "invalid time grid [{t_start}, {t_end}] with {n_steps} steps"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid with `Λ h ≤ 10⁻³ (t_end − t_start)`.
    pub fn with_default_step(t_start: f64, t_end: f64, lambda: f64) -> Result<Self> {
        Self::new(t_start, t_end, (1000.0 * lambda).ceil() as usize)
    }

    pub fn h(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.h()
        }
    }
}

/// A simulated path with the Brownian increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub dim: usize,
    /// Work-item index that produced the path.
    pub path: usize,
    /// `(n_steps + 1) × dim`, row-major.
    pub states: Vec<f64>,
    /// `n_steps × dim`, row-major.
    pub increments: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps)
    }
}

/// Per-worker scratch buffers.
pub(crate) struct Workspace {
    pub local: LocalCoefficients,
    pub x: Vec<f64>,
    pub db: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    pub fn new(d: usize) -> Self {
        Self {
            local: LocalCoefficients::new(d),
            x: vec![0.0; d],
            db: vec![0.0; d],
            dx: vec![0.0; d],
        }
    }

    /// `x ← x + σ(t,x) db` with the weight updated at the left point.
    #[inline]
    pub fn step(
        &mut self,
        field: &CoefficientField,
        t: f64,
        h: f64,
        weight: &mut WeightAccumulator,
    ) -> Result<()> {
        field.local(t, &self.x, &mut self.local)?;
        weight.update(&self.local, &self.db, h);
        self.apply_sigma();
        Ok(())
    }

    /// `x ← x + σ db` using the σ already in `local`.
    #[inline]
    pub fn apply_sigma(&mut self) {
        let d = self.x.len();
        if d == 1 {
            self.x[0] += self.local.sigma[0] * self.db[0];
            return;
        }
        for i in 0..d {
            self.dx[i] = (0..d).map(|j| self.local.sigma[i * d + j] * self.db[j]).sum();
        }
        for i in 0..d {
            self.x[i] += self.dx[i];
        }
    }
}

fn check_start(field: &CoefficientField, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(Error::Validation(format!(
            "initial point has dimension {}, field has {}",
            x0.len(),
            field.dim()
        )));
    }
    Ok(())
}

/// Deterministic Euler–Maruyama core: integrates the given increments.
pub fn integrate_increments(
    field: &CoefficientField,
    x0: &[f64],
    grid: TimeGrid,
    increments: Vec<f64>,
) -> Result<Trajectory> {
    check_start(field, x0)?;
    let d = field.dim();
    if increments.len() != grid.n_steps * d {
        return Err(Error::Validation("increment count does not match grid".into()));
    }
    let mut ws = Workspace::new(d);
    ws.x.copy_from_slice(x0);
    let mut states = Vec::with_capacity((grid.n_steps + 1) * d);
    states.extend_from_slice(x0);
    let mut weight = WeightAccumulator::default();
    let h = grid.h();
    for k in 0..grid.n_steps {
        ws.db.copy_from_slice(&increments[k * d..(k + 1) * d]);
        ws.step(field, grid.time(k), h, &mut weight)?;
        states.extend_from_slice(&ws.x);
    }
    Ok(Trajectory {
        grid,
        dim: d,
        path: 0,
        states,
        increments,
    })
}

fn draw_increments(rng: &mut ChaCha8Rng, grid: &TimeGrid, d: usize) -> Vec<f64> {
    let mut inc = vec![0.0; grid.n_steps * d];
    fill_normals(rng, grid.h(), &mut inc);
    inc
}

/// Full trajectories for `n_paths` paths; path `i` reads stream `i`.
pub fn simulate_paths(
    field: &CoefficientField,
    x0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
) -> Result<Vec<Trajectory>> {
    check_start(field, x0)?;
    if n_paths == 0 {
        return Err(Error::Validation("n_paths must be at least 1".into()));
    }
    let d = field.dim();
    let chunks = try_map_chunks(n_paths, |range| {
        range
            .map(|i| {
                let mut r = rng.path_rng(i as u64);
                let inc = draw_increments(&mut r, &grid, d);
                let mut traj = integrate_increments(field, x0, grid, inc)?;
                traj.path = i;
                Ok(traj)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Terminal states and log-weights of independent paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointSample {
    pub dim: usize,
    /// `n × dim`, row-major.
    pub points: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl EndpointSample {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn concat(dim: usize, parts: Vec<EndpointSample>) -> Self {
        let mut points = Vec::new();
        let mut log_weights = Vec::new();
        for p in parts {
            points.extend(p.points);
            log_weights.extend(p.log_weights);
        }
        Self {
            dim,
            points,
            log_weights,
        }
    }
}

/// Streams one path per work item without storing its history; the draws
/// are identical to [`simulate_paths`] with the same stream.
pub fn sample_endpoints(
    field: &CoefficientField,
    x0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
) -> Result<EndpointSample> {
    Ok(sample_endpoints_crn(field, &[x0.to_vec()], grid, n_paths, rng)?
        .pop()
        .expect("one start"))
}

/// Endpoint samples from several starting points driven by common random
/// numbers: path `i` uses the same increments for every start.
pub fn sample_endpoints_crn(
    field: &CoefficientField,
    starts: &[Vec<f64>],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
) -> Result<Vec<EndpointSample>> {
    for x0 in starts {
        check_start(field, x0)?;
    }
    if n_paths == 0 || starts.is_empty() {
        return Err(Error::Validation("need at least one path and one start".into()));
    }
    let d = field.dim();
    let m = starts.len();
    let h = grid.h();
    let chunks = try_map_chunks(n_paths, |range| {
        let len = range.len();
        let mut out: Vec<EndpointSample> = (0..m)
            .map(|_| EndpointSample {
                dim: d,
                points: Vec::with_capacity(len * d),
                log_weights: Vec::with_capacity(len),
            })
            .collect();
        let mut ws = Workspace::new(d);
        let mut inc = vec![0.0; grid.n_steps * d];
        for i in range {
            let mut r = rng.path_rng(i as u64);
            fill_normals(&mut r, h, &mut inc);
            for (x0, sample) in starts.iter().zip(out.iter_mut()) {
                ws.x.copy_from_slice(x0);
                let mut weight = WeightAccumulator::default();
                for k in 0..grid.n_steps {
                    ws.db.copy_from_slice(&inc[k * d..(k + 1) * d]);
                    ws.step(field, grid.time(k), h, &mut weight)?;
                }
                if !weight.is_finite() {
                    return Err(Error::WeightOverflow { path: i });
                }
                sample.points.extend_from_slice(&ws.x);
                sample.log_weights.push(weight.log_weight());
            }
        }
        Ok(out)
    })?;
    let mut per_start: Vec<Vec<EndpointSample>> = (0..m).map(|_| Vec::new()).collect();
    for chunk in chunks {
        for (j, part) in chunk.into_iter().enumerate() {
            per_start[j].push(part);
        }
    }
    Ok(per_start
        .into_iter()
        .map(|parts| EndpointSample::concat(d, parts))
        .collect())
}

/// Mean of `values[i]·exp(log_weights[i])` with the exponent shifted by its
/// maximum before averaging.
pub(crate) fn weighted_mean(values: &[f64], log_weights: &[f64]) -> Result<MeanEstimate> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::WeightOverflow { path: 0 });
    }
    let shifted: Vec<f64> = values
        .iter()
        .zip(log_weights)
        .map(|(v, l)| if *v == 0.0 { 0.0 } else { v * (l - m).exp() })
        .collect();
    let est = MeanEstimate::from_values(&shifted)?;
    let scale = m.exp();
    if !scale.is_finite() {
        let path = log_weights.iter().position(|l| *l == m).unwrap_or(0);
        return Err(Error::WeightOverflow { path });
    }
    Ok(MeanEstimate {
        mean: est.mean * scale,
        stderr: est.stderr * scale,
        n: est.n,
    })
}

/// Monte Carlo `u(t,x) = E[f(X_t) ℰ(0,t)]` with its standard error.
pub fn feynman_kac_solve(
    field: &CoefficientField,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    rng: &RngStream,
) -> Result<MeanEstimate> {
    let sample = sample_endpoints(field, x0, grid, n_paths, rng)?;
    let values: Vec<f64> = (0..sample.len()).map(|i| f(sample.point(i))).collect();
    weighted_mean(&values, &sample.log_weights)
}
