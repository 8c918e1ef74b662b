use std::path::PathBuf;

use crate::torus::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("torus dimensions must all be at least 1, got {0}x{1}x{2}")]
    ZeroDimension(usize, usize, usize),
    #[error("cannot parse torus dimensions from {0:?} (expected DXxDYxDZ)")]
    BadDims(String),
    #[error("node {node} out of range for a topology of {nodes} nodes")]
    NodeOutOfRange { node: NodeId, nodes: usize },
    #[error("outage probability {value} for node {node} is outside [0, 1]")]
    InvalidProbability { node: NodeId, value: f64 },
    #[error("outage vector has {got} entries, topology has {expected} nodes")]
    OutageLength { expected: usize, got: usize },
    #[error("hop cost must be positive and finite, got {0}")]
    InvalidCost(f64),
    #[error("node set must not be empty")]
    EmptyNodeSet,
    #[error("node {0} listed more than once")]
    DuplicateNode(NodeId),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("rank {rank} outside communicator {comm} of size {size}")]
    RankOutOfRange { rank: usize, comm: u32, size: usize },
    #[error("point-to-point send from rank {0} to itself")]
    SelfSend(usize),
    #[error("communicator {0} was not declared")]
    UnknownCommunicator(u32),
    #[error("invalid communicator {id}: {msg}")]
    InvalidCommunicator { id: u32, msg: String },
    #[error("event kind `{0}` is not a collective")]
    NotCollective(&'static str),
    #[error("invalid synthetic pattern: {0}")]
    InvalidSynthetic(String),
    #[error("{procs} processes do not fit on {nodes} nodes")]
    TooManyProcesses { procs: usize, nodes: usize },
    #[error("requested window of {needed} nodes but topology has {nodes}")]
    WindowTooLarge { needed: usize, nodes: usize },
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("invalid fault scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("traffic matrix has {traffic} processes, mapping has {mapping}")]
    SizeMismatch { traffic: usize, mapping: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
