use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario needs at least one robot")]
    NoRobots,
    #[error("target density {density} on {cells} cells yields no targets")]
    NoTargets { density: f64, cells: usize },
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("robot id {robot} out of range for a team of {n}")]
    InvalidRobot { robot: usize, n: usize },
    #[error("robot {0} already has an action in the partial assignment")]
    AlreadyAssigned(usize),
    #[error("assignment has {got} entries for a team of {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("instance too large: 5^{n_robots} assignments exceeds the cap of {cap}")]
    InstanceTooLarge { n_robots: usize, cap: u64 },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in {stage}: {detail}")]
    NonFinite { stage: String, detail: String },
    #[error("protocol violation: robot {receiver} received a payload from non-neighbor {sender}")]
    ProtocolViolation { sender: usize, receiver: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
