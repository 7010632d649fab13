use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel singularity: {0}")]
    Singularity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point outside the computational domain: {0}")]
    Domain(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e}){advice}")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        advice: &'static str,
    },

    #[error("solver quality check failed: {0}")]
    SolverQuality(String),

    #[error("non-finite energy in replica {replica} at step {step}")]
    NanEnergy { replica: u64, step: u64 },

    #[error("cached energy drifted by {relative:.3e} (relative) at step {step}")]
    EnergyDrift { step: u64, relative: f64 },

    #[error("{estimator}: effective sample size {available:.1} below required {required}")]
    InsufficientSamples {
        estimator: &'static str,
        required: usize,
        available: f64,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
