use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("ellipticity violation at t={t}, x={x:?}: eigenvalue {eigenvalue:e} outside [{lower:e}, {upper:e}]")]
    Ellipticity {
        t: f64,
        x: Vec<f64>,
        eigenvalue: f64,
        lower: f64,
        upper: f64,
    },

    #[error("weight overflow on path {path}: log-weight is not finite; use a shorter horizon or rescale the coefficients")]
    WeightOverflow { path: usize },

    #[error("index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("field `{0}` has no analytic transition kernel")]
    UnsupportedField(String),

    #[error("degenerate reflection direction: |xi| = {0:e}")]
    DegenerateDirection(f64),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("empty sample")]
    EmptySample,

    #[error("insufficient local sample at y={y:?}: {effective:.2} effective samples (need 10)")]
    InsufficientLocalSample { y: Vec<f64>, effective: f64 },

    #[error("underpowered experiment: no difference distinguishable from zero; increase n_paths to at least {recommended}")]
    Underpowered { recommended: usize },

    #[error("infeasible envelope fit: {0}")]
    InfeasibleFit(String),

    #[error("finite-difference grid too narrow: boundary mass bound {mass:e} exceeds 1e-8; widen the grid")]
    GridTooNarrow { mass: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Config and argument problems map to exit code 2, runtime numerical failures to 3.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Validation(_) | Error::Expression(_))
    }
}
