use std::path::PathBuf;

use crate::physics::SimState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid morphology parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("terrain parameter error: {0}")]
    Terrain(String),

    #[error("simulation diverged at t = {time:.4} s")]
    SimulationDiverged { time: f64, last_valid: Box<SimState> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape contract violated: {0}")]
    Shape(String),

    #[error("robot placement failed after {0} retries")]
    Placement(usize),

    #[error("cost of transport undefined: mean horizontal speed {speed:.4} m/s below floor {floor:.4} m/s")]
    UndefinedCot { speed: f64, floor: f64 },

    #[error("cannot compare reports from different protocols ({0} vs {1})")]
    ProtocolMismatch(String, String),

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
