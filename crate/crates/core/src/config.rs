//! Versioned TOML experiment configuration.
//!
//! ```toml
//! version = 1
//! seed = 42
//!
//! [coefficients]
//! preset = "const"
//! a = [[1.0]]
//! b = [0.3]
//! c = 0.2
//!
//! [experiment]
//! kind = "estimate"
//! x = [0.0]
//! t = 1.0
//! y = [[-1.0], [0.0], [1.0]]
//! n_paths = 100000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{presets, CoefficientField};
use crate::error::{Error, Result};
use crate::sde::TimeGrid;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Root directory for outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub coefficients: CoefficientSpec,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// Constant coefficients; `a` is given by rows.
    Const { a: Vec<Vec<f64>>, b: Vec<f64>, c: f64 },
    SinA {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "half")]
        amplitude: f64,
    },
    DiscBc {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "half")]
        drift: f64,
        #[serde(default = "minus_tenth")]
        potential: f64,
    },
    /// Expressions in `t` and `x1..xd`.
    Expression {
        dim: usize,
        a: Vec<Vec<String>>,
        b: Vec<String>,
        c: String,
        lambda: f64,
        b_sup: f64,
        c_sup: f64,
        #[serde(default = "yes")]
        smooth: bool,
    },
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn minus_tenth() -> f64 {
    -0.1
}

fn yes() -> bool {
    true
}

impl CoefficientSpec {
    pub fn build(&self) -> Result<CoefficientField> {
        match self {
            CoefficientSpec::Const { a, b, c } => {
                let d = b.len();
                if a.len() != d || a.iter().any(|row| row.len() != d) {
                    return Err(Error::Config(format!(
                        "coefficients.a: expected a {d}x{d} matrix to match coefficients.b"
                    )));
                }
                let flat: Vec<f64> = a.iter().flatten().copied().collect();
                presets::constant(&flat, b, *c)
            }
            CoefficientSpec::SinA { dim, amplitude } => presets::sin_a(*dim, *amplitude),
            CoefficientSpec::DiscBc {
                dim,
                drift,
                potential,
            } => presets::disc_bc(*dim, *drift, *potential),
            CoefficientSpec::Expression {
                dim,
                a,
                b,
                c,
                lambda,
                b_sup,
                c_sup,
                smooth,
            } => presets::expression(*dim, a, b, c, *lambda, *b_sup, *c_sup, *smooth),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CoefficientSpec::Const { b, .. } => b.len(),
            CoefficientSpec::SinA { dim, .. }
            | CoefficientSpec::DiscBc { dim, .. }
            | CoefficientSpec::Expression { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Validate(ValidateParams),
    Simulate(SimulateParams),
    Estimate(EstimateParams),
    Couple(CoupleParams),
    Holder(HolderParams),
    Envelope(EnvelopeParams),
    Oracle(OracleParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Validate(_) => "validate",
            Experiment::Simulate(_) => "simulate",
            Experiment::Estimate(_) => "estimate",
            Experiment::Couple(_) => "couple",
            Experiment::Holder(_) => "holder",
            Experiment::Envelope(_) => "envelope",
            Experiment::Oracle(_) => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateParams {
    #[serde(default = "three")]
    pub half_width: f64,
    #[serde(default = "default_points")]
    pub points_per_dim: usize,
    #[serde(default = "zero_time")]
    pub t_values: Vec<f64>,
    #[serde(default = "unit")]
    pub modulus_radius: f64,
    #[serde(default = "default_modulus_pairs")]
    pub modulus_pairs: usize,
    /// Integrability exponent; defaults to `max(d, 2) + 1`.
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default = "unit")]
    pub m: f64,
    #[serde(default)]
    pub declared_bound: Option<f64>,
    #[serde(default = "default_a3_half_width")]
    pub a3_half_width: f64,
    #[serde(default = "default_a3_nodes")]
    pub a3_nodes: usize,
}

fn three() -> f64 {
    3.0
}

fn unit() -> f64 {
    1.0
}

fn default_points() -> usize {
    41
}

fn zero_time() -> Vec<f64> {
    vec![0.0]
}

fn default_modulus_pairs() -> usize {
    2000
}

fn default_a3_half_width() -> f64 {
    20.0
}

fn default_a3_nodes() -> usize {
    2001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub x: Vec<f64>,
    pub t: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    /// Number of leading paths written as binary trajectory dumps.
    #[serde(default)]
    pub dump_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateParams {
    pub x: Vec<f64>,
    pub t: f64,
    pub y: Vec<Vec<f64>>,
    pub n_paths: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Also report `E^{X_t=y}[ℰ]` at every query.
    #[serde(default)]
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleParams {
    pub x: Vec<f64>,
    /// Separations along the first axis; three or more also fit the exponent.
    pub deltas: Vec<f64>,
    pub t: f64,
    pub n_pairs: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub coupling_factor: Option<f64>,
    #[serde(default = "yes")]
    pub bridge_crossing: bool,
    /// Grid steps between survival rows; defaults to `n_steps / 100`.
    #[serde(default)]
    pub survival_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderParams {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    pub deltas: Vec<f64>,
    pub t: f64,
    pub y: Vec<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeParams {
    pub x: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Distances `|x − y|` per time, evenly spaced on `[0, 3√(Λt)]`.
    #[serde(default = "default_envelope_points")]
    pub n_points: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

fn default_envelope_points() -> usize {
    13
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub x: Vec<f64>,
    pub t: f64,
    pub y: Vec<Vec<f64>>,
    /// Finite-difference grid for fields without a closed-form kernel.
    #[serde(default)]
    pub grid: Option<OracleGrid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub dt: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("experiment.{name}: must be positive, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("experiment.{name}: must be at least 1")))
    }
}

fn point(name: &str, v: &[f64], d: usize) -> Result<()> {
    if v.len() != d || v.iter().any(|a| !a.is_finite()) {
        return Err(Error::Config(format!(
            "experiment.{name}: expected {d} finite coordinates, got {v:?}"
        )));
    }
    Ok(())
}

fn optional_positive(name: &str, v: Option<f64>) -> Result<()> {
    v.map_or(Ok(()), |v| positive(name, v))
}

fn optional_steps(v: Option<usize>) -> Result<()> {
    v.map_or(Ok(()), |v| nonzero("n_steps", v))
}

impl ExperimentConfig {
    /// Parses TOML; syntax and schema errors carry the line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Field-level checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers: must be at least 1".into()));
        }
        let d = self.coefficients.dim();
        if d == 0 {
            return Err(Error::Config("coefficients: dimension must be at least 1".into()));
        }
        match &self.experiment {
            Experiment::Validate(p) => {
                positive("half_width", p.half_width)?;
                positive("modulus_radius", p.modulus_radius)?;
                positive("a3_half_width", p.a3_half_width)?;
                nonzero("modulus_pairs", p.modulus_pairs)?;
                if p.points_per_dim < 2 || p.a3_nodes < 2 {
                    return Err(Error::Config(
                        "experiment.points_per_dim and experiment.a3_nodes: need at least 2".into(),
                    ));
                }
                if p.t_values.is_empty() || p.t_values.iter().any(|t| !(*t >= 0.0)) {
                    return Err(Error::Config("experiment.t_values: need nonnegative times".into()));
                }
                optional_positive("theta", p.theta)?;
                if !(p.m >= 0.0) {
                    return Err(Error::Config("experiment.m: must be nonnegative".into()));
                }
            }
            Experiment::Simulate(p) => {
                point("x", &p.x, d)?;
                positive("t", p.t)?;
                nonzero("n_paths", p.n_paths)?;
                optional_steps(p.n_steps)?;
            }
            Experiment::Estimate(p) => {
                point("x", &p.x, d)?;
                positive("t", p.t)?;
                nonzero("n_paths", p.n_paths)?;
                optional_steps(p.n_steps)?;
                optional_positive("bandwidth", p.bandwidth)?;
                if p.y.is_empty() {
                    return Err(Error::Config("experiment.y: need at least one query".into()));
                }
                for y in &p.y {
                    point("y", y, d)?;
                }
            }
            Experiment::Couple(p) => {
                point("x", &p.x, d)?;
                positive("t", p.t)?;
                nonzero("n_pairs", p.n_pairs)?;
                optional_steps(p.n_steps)?;
                optional_positive("coupling_factor", p.coupling_factor)?;
                if p.deltas.is_empty() {
                    return Err(Error::Config("experiment.deltas: need at least one separation".into()));
                }
                for v in &p.deltas {
                    positive("deltas", *v)?;
                }
                if p.survival_stride == Some(0) {
                    return Err(Error::Config("experiment.survival_stride: must be at least 1".into()));
                }
            }
            Experiment::Holder(p) => {
                point("x0", &p.x0, d)?;
                point("y", &p.y, d)?;
                if let Some(dir) = &p.direction {
                    point("direction", dir, d)?;
                }
                positive("t", p.t)?;
                nonzero("n_paths", p.n_paths)?;
                optional_steps(p.n_steps)?;
                optional_positive("bandwidth", p.bandwidth)?;
                for v in &p.deltas {
                    positive("deltas", *v)?;
                }
            }
            Experiment::Envelope(p) => {
                point("x", &p.x, d)?;
                if p.t_values.len() < 2 {
                    return Err(Error::Config("experiment.t_values: need at least two times".into()));
                }
                for t in &p.t_values {
                    positive("t_values", *t)?;
                }
                if p.n_points < 2 {
                    return Err(Error::Config("experiment.n_points: need at least 2".into()));
                }
                nonzero("n_paths", p.n_paths)?;
                optional_steps(p.n_steps)?;
                optional_positive("bandwidth", p.bandwidth)?;
            }
            Experiment::Oracle(p) => {
                point("x", &p.x, d)?;
                positive("t", p.t)?;
                if p.y.is_empty() {
                    return Err(Error::Config("experiment.y: need at least one query".into()));
                }
                for y in &p.y {
                    point("y", y, d)?;
                }
                if let Some(g) = &p.grid {
                    positive("grid.dt", g.dt)?;
                    if !(g.x_max > g.x_min) || g.n_cells < 4 {
                        return Err(Error::Config("experiment.grid: need x_min < x_max and n_cells >= 4".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form, with
    /// the worker count and output root left out.
    pub fn hash12(&self) -> String {
        let canonical = Self {
            workers: None,
            output: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// Euler–Maruyama grid on `[0, t]`: `n_steps` if given, otherwise the
/// default `Λh ≤ 10⁻³ t`.
pub fn time_grid(field: &CoefficientField, t: f64, n_steps: Option<usize>) -> Result<TimeGrid> {
    match n_steps {
        Some(n) => TimeGrid::new(0.0, t, n),
        None => TimeGrid::with_default_step(0.0, t, field.lambda()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
version = 1
seed = 7

[coefficients]
preset = "const"
a = [[1.0]]
b = [0.3]
c = 0.2

[experiment]
kind = "estimate"
x = [0.0]
t = 1.0
y = [[0.0], [1.0]]
n_paths = 1000
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.experiment.kind(), "estimate");
        let f = cfg.coefficients.build().unwrap();
        assert_eq!(f.dim(), 1);
        assert_eq!(cfg.hash12().len(), 12);
    }

    #[test]
    fn presets_take_defaults() {
        let text = BASE.replace("preset = \"const\"\na = [[1.0]]\nb = [0.3]\nc = 0.2", "preset = \"sin_a\"");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.coefficients, CoefficientSpec::SinA { dim: 1, amplitude: 0.5 });
        assert_eq!(cfg.coefficients.build().unwrap().lambda(), 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for (from, to) in [
            ("seed = 7", "seed = 7\ncolour = 1"),
            ("c = 0.2", "c = 0.2\nd = 3"),
            ("n_paths = 1000", "n_paths = 1000\nnpaths = 3"),
        ] {
            let err = ExperimentConfig::from_toml(&BASE.replace(from, to)).unwrap_err();
            assert!(err.is_config_error(), "{err}");
            assert!(err.to_string().contains("unknown field"), "{err}");
        }
    }

    #[test]
    fn version_and_positivity() {
        let err = ExperimentConfig::from_toml(&BASE.replace("version = 1", "version = 2")).unwrap_err();
        assert!(err.to_string().contains("version"));
        let err = ExperimentConfig::from_toml(&BASE.replace("t = 1.0", "t = -1.0")).unwrap_err();
        assert!(err.to_string().contains("experiment.t"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("y = [[0.0], [1.0]]", "y = [[0.0, 1.0]]")).unwrap_err();
        assert!(err.to_string().contains("experiment.y"), "{err}");
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = ExperimentConfig::from_toml(&BASE.replace("t = 1.0", "t = ")).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.workers = Some(3);
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash12(), b.hash12());
        b.seed = 8;
        assert_ne!(a.hash12(), b.hash12());
    }
}
