//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by dataset construction, decomposition, and estimation.
#[derive(Error, Debug)]
pub enum Error {
    /// Structural problems: unknown axes, dimension mismatches, bad indices.
    #[error("structural error: {0}")]
    Structural(String),

    /// Integer overflow while deriving modality element counts.
    #[error("capacity error in modality '{modality}': {detail}")]
    Capacity { modality: String, detail: String },

    /// A requested component count exceeds what the data can support.
    #[error("rank error on axis '{axis}': requested {requested} components but the attainable bound is {bound}")]
    Rank {
        axis: String,
        requested: usize,
        bound: usize,
    },

    /// Retained eigenvalues fell below the rank-deficiency floor.
    #[error("rank-deficient spectrum on axis '{axis}': eigenvalue {index} is {value:.3e}, below the floor {floor:.3e}; reduce the component count")]
    RankDeficient {
        axis: String,
        index: usize,
        value: f64,
        floor: f64,
    },

    /// An iterative numerical routine failed to reach its tolerance.
    #[error("numerical error in {context}: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Numerical {
        context: String,
        residual: f64,
        tolerance: f64,
    },

    /// The eigenvalue solver hit its iteration cap before converging.
    #[error("failed to converge after {iterations} iterations (gradient norm {gradient_norm:.3e}, tolerance {tolerance:.3e})")]
    Convergence {
        iterations: usize,
        gradient_norm: f64,
        tolerance: f64,
    },

    /// Inputs outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A null-hypothesis variance specification is not realizable.
    #[error("hypothesis error: {0}")]
    Hypothesis(String),
}

pub type Result<T> = std::result::Result<T, Error>;
