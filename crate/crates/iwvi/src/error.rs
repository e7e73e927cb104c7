//! Crate-wide error type.

use crate::graph::NodeId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node:?}: vector has dimension {got}, expected {expected}")]
    DimensionMismatch {
        node: NodeId,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("node {0:?} does not exist in the graph")]
    NodeNotFound(NodeId),

    #[error("node {node:?}: missing feature vector")]
    MissingFeature { node: NodeId },

    #[error("node {node:?}: no ground-truth label")]
    MissingLabel { node: NodeId },

    #[error("vector is not a probability simplex point: {reason}")]
    InvalidSimplex { reason: String },

    #[error(
        "probability vector contains a zero entry at index {index}; \
         floor the distribution first (see VariationalParams::floored)"
    )]
    ZeroProbability { index: usize },

    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("temperature must satisfy tau >= tau_min > 0 (tau={tau}, tau_min={tau_min})")]
    InvalidTemperature { tau: f64, tau_min: f64 },

    #[error("gradient contains a non-finite entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("state space has {size} joint assignments, exceeding the cap of {cap}")]
    StateSpaceTooLarge { size: u128, cap: u128 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("config error at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("refusing to overwrite existing run directory {0} (pass --force to override)")]
    RunDirExists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
