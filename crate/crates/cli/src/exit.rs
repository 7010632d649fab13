//! Exit codes and the error type that carries them.

use std::fmt;
use std::path::Path;

use coulomb2d::Error;

pub const OK: i32 = 0;
pub const SOLVER: i32 = 2;
pub const SAMPLER: i32 = 3;
pub const STATISTICS: i32 = 4;
pub const VERIFY: i32 = 5;
pub const USAGE: i32 = 64;
pub const CONFIG_MISSING: i32 = 65;
/// Any other failure (I/O on outputs, malformed archives).
pub const OTHER: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    /// A required input file is absent.
    pub fn missing(what: &str, path: &Path) -> Self {
        Self::new(CONFIG_MISSING, format!("{what} not found: {}", path.display()))
    }

    /// Maps a library error to its stage's exit code.
    pub fn stage(context: &str, e: Error) -> Self {
        let code = match &e {
            Error::NonConvergence { .. } | Error::SolverQuality(_) => SOLVER,
            Error::NanEnergy { .. } | Error::EnergyDrift { .. } => SAMPLER,
            Error::InsufficientSamples { .. } => STATISTICS,
            Error::InvalidParameter(_) | Error::Precondition(_) => USAGE,
            _ => OTHER,
        };
        Self::new(code, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(OTHER, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(OTHER, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
