use thiserror::Error;

/// Errors produced anywhere in the discretization and solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("random inclusion generation gave up after {attempts} attempts ({placed} of {requested} placed)")]
    GenerationExhausted {
        attempts: usize,
        placed: usize,
        requested: usize,
    },

    #[error("node {node} lies on interface {inclusion} (|level set| = {value:e})")]
    NodeOnInterface {
        node: usize,
        inclusion: usize,
        value: f64,
    },

    #[error("interface not resolved by the mesh at element {element}: {reason}")]
    UnresolvedInterface { element: usize, reason: String },

    #[error("interface {inclusion} is degenerate: {reason}")]
    DegenerateInterface { inclusion: usize, reason: String },

    #[error("coupling matrix is rank deficient: row {row} has norm {norm:e}")]
    RankDeficient { row: usize, norm: f64 },

    #[error("factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("fine dof {dof} receives no coarse contribution")]
    EmptySupport { dof: usize },

    #[error("{solver} did not converge in {iterations} iterations (last increment {last:e})")]
    MaxIterations {
        solver: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("eigenvalue iteration did not converge in {iterations} iterations (estimate {estimate:e})")]
    NonConvergence { iterations: usize, estimate: f64 },

    #[error("inner solve failed: {0}")]
    InnerSolveFailure(Box<Error>),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
