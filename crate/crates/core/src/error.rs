use thiserror::Error;

/// Errors raised while building or validating inputs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(usize, usize),
    #[error("{field}: unknown label `{label}`")]
    UnknownLabel { field: String, label: String },
    #[error("{field}: duplicate label `{label}`")]
    DuplicateLabel { field: String, label: String },
    #[error("{field}: cost factor {value} is below 1")]
    CostBelowOne { field: String, value: f64 },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("malformed scenario at `{path}`: {reason}")]
    Malformed { path: String, reason: String },
    #[error("cannot read `{path}`: {reason}")]
    Io { path: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Errors raised by the numerical kernels and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{edges} edges exceed the enumeration cap of {cap}; use greedy scheduling")]
    EnumerationCap { edges: usize, cap: usize },
    #[error("schedule set is empty")]
    EmptyScheduleSet,
    #[error("graph is not connected to the destination; matrix is singular")]
    Singular,
    #[error("node {node} has a positive source but no directed path to the sink")]
    Infeasible { node: usize },
    #[error("node {node} has a negative source {value}")]
    NegativeSource { node: usize, value: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("stationary distribution is not unique")]
    NotErgodic,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("queue of node {node} went negative ({value}) at slot {slot}")]
    NegativeQueue {
        node: usize,
        value: f64,
        slot: usize,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
