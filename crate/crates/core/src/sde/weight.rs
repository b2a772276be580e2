use serde::Serialize;

use super::Trajectory;
use crate::coefficients::{CoefficientField, LocalCoefficients};
use crate::error::{Error, Result};

/// Running logarithm of the Feynman–Kac weight, split into its three sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WeightAccumulator {
    /// `Σ ⟨b_σ, ΔB⟩`
    pub log_stoch: f64,
    /// `−½ Σ |b_σ|² h`
    pub log_quad: f64,
    /// `Σ c h`
    pub log_pot: f64,
}

impl WeightAccumulator {
    /// Adds one left-point step.
    #[inline]
    pub fn update(&mut self, local: &LocalCoefficients, db: &[f64], h: f64) {
        let mut dot = 0.0;
        let mut sq = 0.0;
        for (b, w) in local.b_sigma.iter().zip(db) {
            dot += b * w;
            sq += b * b;
        }
        self.log_stoch += dot;
        self.log_quad -= 0.5 * sq * h;
        self.log_pot += local.c * h;
    }

    pub fn log_weight(&self) -> f64 {
        self.log_stoch + self.log_quad + self.log_pot
    }

    pub fn is_finite(&self) -> bool {
        self.log_weight().is_finite()
    }
}

fn accumulate_range(
    traj: &Trajectory,
    field: &CoefficientField,
    from: usize,
    to: usize,
) -> Result<WeightAccumulator> {
    let mut local = LocalCoefficients::new(traj.dim);
    let mut acc = WeightAccumulator::default();
    let h = traj.grid.h();
    for k in from..to {
        field.local(traj.grid.time(k), traj.state(k), &mut local)?;
        acc.update(&local, traj.increment(k), h);
    }
    if !acc.is_finite() {
        return Err(Error::WeightOverflow { path: traj.path });
    }
    Ok(acc)
}

/// Recomputes the weight sums along a recorded trajectory.
pub fn accumulate_weight(traj: &Trajectory, field: &CoefficientField) -> Result<WeightAccumulator> {
    accumulate_range(traj, field, 0, traj.grid.n_steps)
}

/// `(log ℰ(0,τ), log ℰ(τ,t))` for the split at grid index `tau_step`.
pub fn weight_split(traj: &Trajectory, field: &CoefficientField, tau_step: usize) -> Result<(f64, f64)> {
    let n = traj.grid.n_steps;
    if tau_step > n {
        return Err(Error::IndexOutOfRange {
            index: tau_step,
            max: n,
        });
    }
    let head = accumulate_range(traj, field, 0, tau_step)?;
    let tail = accumulate_range(traj, field, tau_step, n)?;
    Ok((head.log_weight(), tail.log_weight()))
}
