use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel cutoff {cutoff} exceeds half the table resolution {resolution} (aliasing)")]
    KernelAliasing { resolution: usize, cutoff: usize },

    #[error("grid resolution {resolution} too coarse for mollification radius {epsilon} (need ε·N ≥ 4)")]
    MollifierAliasing { epsilon: f64, resolution: usize },

    #[error("measure total variation {total_variation} exceeds declared bound {bound}")]
    MassBound { total_variation: f64, bound: f64 },

    #[error("negative weight {weight} at atom {index}; a non-negative measure is required")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("step {step} rejected: {reason}")]
    StepRejected { step: usize, reason: String },

    #[error("CFL violation at t={t}: dt·max|u|·N/(2π) = {number:.3} > 0.5")]
    Cfl { t: f64, number: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
