use std::path::PathBuf;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the operation's domain (zero sizes, bad gains, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root finder did not converge after {iterations} iterations (residual {residual:.3e})")]
    RootsNotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<Complex64>,
    },

    /// Transfer evaluated too close to one of its poles.
    #[error("pole at s = {s}: |denominator| = {magnitude:.3e}")]
    Pole { s: Complex64, magnitude: f64 },

    #[error("internally unstable configuration: {0}")]
    Unstable(String),

    #[error("matrix dimension {dim} exceeds cap {cap}")]
    SizeCap { dim: usize, cap: usize },

    #[error("simulation diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
