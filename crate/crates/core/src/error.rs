use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("noise level {eta} exceeds the terminal diffusion noise {sigma_max}; increase T")]
    NoiseAboveTerminal { eta: f64, sigma_max: f64 },

    #[error("invalid parameter `{name}`: {msg}")]
    Parameter { name: &'static str, msg: String },

    #[error("denoiser failure: {0}")]
    Denoiser(String),

    #[error("no oracle applies: {0}")]
    NoOracle(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("empty sample set")]
    EmptySamples,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
