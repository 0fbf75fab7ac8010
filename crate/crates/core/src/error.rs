use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("track segment chain does not close: position gap {gap_m:.3e} m, heading gap {gap_rad:.3e} rad")]
    TrackNotClosed { gap_m: f64, gap_rad: f64 },

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("timestep must be positive, got {0}")]
    NonPositiveTimestep(f64),

    #[error("world is already terminal ({0:?})")]
    AlreadyTerminal(crate::sim::Terminal),

    #[error("index range {from}..={to} out of bounds for trajectory of length {len}")]
    RelabelRange { from: usize, to: usize, len: usize },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty replay buffer")]
    EmptyBuffer,

    #[error("non-finite policy output (log_std = {log_std:?}, features = {features:?})")]
    NonFinitePolicy { log_std: [f64; 3], features: Vec<f64> },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("illegal transition from {from:?} via {cmd:?}")]
    IllegalTransition {
        from: crate::service::Phase,
        cmd: crate::service::ControlCommand,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
