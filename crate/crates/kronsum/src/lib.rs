//! Estimation of per-axis conditional-dependency graphs for multi-modal
//! tensor data under a Kronecker-sum precision model.
//!
//! Datasets are collections of sparse tensors (modalities) whose axes are
//! shared by name.  Every axis gets a sparse symmetric factor; the precision
//! matrix of each modality is the Kronecker sum of its axes' factors.  The
//! estimator never materializes a `d x d` matrix: it works from partial
//! spectral decompositions of the per-axis matricizations, solves a convex
//! program for the factor eigenvalues, recomposes only the retained edges,
//! and attaches Wald-test statistics to each edge.
//!
//! The high-level entry point is [`pipeline::estimate`].  The inner stages
//! are exposed individually:
//!
//! - [`dataset`]: sparse tensor collections, axis unification, matricization;
//! - [`nonparanormal`]: rank-based marginal normalization as a matrix-free
//!   operator;
//! - [`spectrum`]: partial Gram eigendecompositions via blocked subspace
//!   iteration;
//! - [`solver`]: the spectral negative-log-likelihood program for the factor
//!   eigenvalues;
//! - [`recompose`]: thresholded reconstruction of factor edges from the
//!   spectral representation;
//! - [`identify`]: exact arithmetic for the trace-identifiability structure
//!   of a modality layout;
//! - [`stattest`]: null Fisher information, Wald z-scores, and
//!   Bonferroni-corrected p-values;
//! - [`synth`]: synthetic graph/data generation, a dense reference
//!   estimator, and precision-recall scoring;
//! - [`dense`]: small dense helpers (Kronecker products, partial traces)
//!   used mainly by tests and the dense reference path.

pub mod dataset;
pub mod dense;
pub mod error;
pub mod identify;
pub mod nonparanormal;
pub mod normal;
pub mod pipeline;
pub mod recompose;
pub mod solver;
pub mod sparse;
pub mod spectrum;
pub mod stattest;
pub mod synth;

pub use dataset::{build_structure, Axis, Dataset, DatasetBuilder, ModalityStructure};
pub use error::{Error, Result};
pub use nonparanormal::TieMethod;
pub use pipeline::{
    estimate, ComponentSpec, Components, EstimateResult, PipelineOptions, StageTimings,
    ThresholdSpec,
};
pub use recompose::{Edge, FactorGraph, RuleVariant, ThresholdRule};
pub use solver::{solve_eigenvalues, EigenvalueSolution, SolverOptions};
pub use spectrum::{axis_spectrum, AxisSpectrum, ScreeRow};
pub use stattest::{edge_test, EdgeTestResult, NullHypothesis, SigmaMode};
