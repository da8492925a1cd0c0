//! Error taxonomy shared across the crate.
//!
//! Variants map onto the CLI exit-code categories: configuration problems
//! (bad network data, bad grids) exit 3, simulation/numerical failures exit 4,
//! model-file problems exit 5, anything else exits 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration data (impedances, gains, grid dimensions, ...).
    #[error("config: {0}")]
    Config(String),

    /// Network graph problems such as a bus with no connection.
    #[error("topology: {0}")]
    Topology(String),

    /// Linear-algebra failures: singular or ill-conditioned admittance matrix.
    #[error("numerical: {0}")]
    Numerical(String),

    /// A scenario run produced a non-finite signal.
    #[error("simulation diverged at t = {t_ms} ms: {reason}")]
    Simulation { t_ms: u32, reason: String },

    /// Text-format parse failure (CSV, model file, config file).
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Model file is corrupt, truncated, or has an unsupported version.
    #[error("model: {0}")]
    Model(String),

    /// A feature row does not match the arity a tree was trained with.
    #[error("feature arity mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    /// Mixed data provenance (runs or models from different manifests).
    #[error("provenance mismatch: {0}")]
    Provenance(String),

    /// Invalid argument to a library operation.
    #[error("argument: {0}")]
    Argument(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI error categories.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Topology(_) | Error::Argument(_) | Error::Parse { .. } => 3,
            Error::Numerical(_) | Error::Simulation { .. } => 4,
            Error::Model(_) | Error::Arity { .. } | Error::Provenance(_) => 5,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
