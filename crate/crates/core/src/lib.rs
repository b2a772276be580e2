//! Monte Carlo estimation of fundamental solutions of non-divergence form
//! parabolic equations
//! `∂_t u = ½ Σ a_ij ∂_ij u + Σ b_i ∂_i u + c u`
//! through the driftless diffusion `dX = σ dB` (`σ = √a`) and the
//! Feynman–Kac weight, with reflection coupling, Gaussian envelope and
//! Hölder experiments and independent reference solutions.

pub mod coefficients;
pub mod config;
pub mod coupling;
pub mod error;
pub mod estimator;
pub mod output;
pub mod parallel;
pub mod reference;
pub mod runner;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
