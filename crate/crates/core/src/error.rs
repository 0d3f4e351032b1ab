use thiserror::Error;

use crate::network::{NodeId, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("no drive assigned to external node {0}")]
    MissingDrive(NodeId),

    #[error("drive assigned to node {0}, which is not an external node")]
    UnexpectedDrive(NodeId),

    #[error("no boundary voltage supplied for fixed node {0}")]
    MissingBoundary(NodeId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conductance matrix over internal nodes is singular")]
    SingularSystem,

    #[error("implicit step did not converge after {iterations} iterations (relative change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("current balance violated at node {node}: residual {residual:e} A exceeds bound {bound:e} A")]
    KclViolation {
        node: NodeId,
        residual: f64,
        bound: f64,
    },

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("spectra are incompatible: {0}")]
    SpectrumMismatch(String),

    #[error("output has zero norm over the included bins; dissimilarity is undefined")]
    ZeroOutput,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    Task(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
