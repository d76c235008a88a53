use thiserror::Error;

/// Errors raised by the solvers, samplers and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("singular integrand: {0}")]
    Singular(String),

    #[error("step violates stability bound: dt = {dt:e} > {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("numerical blow-up (non-finite value) at time index {time_index}")]
    BlowUp { time_index: usize },

    #[error("window error: {0}")]
    Window(String),

    #[error("fixed-point iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("bandwidth error: h = {h:e} below minimum {min:e}")]
    Bandwidth { h: f64, min: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance matrix not positive semi-definite after {clamps} clamps")]
    NotPsd { clamps: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::BlowUp { .. } | LabError::Divergence { .. } | LabError::NotPsd { .. } => 3,
            LabError::Io(_) => 1,
            _ => 2,
        }
    }
}
