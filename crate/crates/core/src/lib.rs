//! Differential performance analysis for execution traces.
//!
//! Given a set of program runs, each recorded as input values, per-function
//! call counts, and a running time, this crate
//!
//! 1. clusters the (input, time) points into a small number of affine
//!    performance classes (either a K-means variant with line centroids, or
//!    spectral clustering over an alignment similarity graph), and
//! 2. learns a binary classification tree over the call counts that explains
//!    which program internals separate the classes.
//!
//! The result is a discriminant tree: internal nodes test call counts,
//! leaves hold a distribution over the fitted affine time models.
//!
//! Entry points: [`trace::load_traces`] to read a trace file,
//! [`pipeline::analyze`] to run the full analysis, and
//! [`benchgen::generate`] to produce synthetic trace families for testing.

pub mod affine;
pub mod benchgen;
pub mod dtree;
pub mod klinear;
pub mod pipeline;
pub mod spectral;
pub mod trace;

mod eigen;

pub use affine::{fit_affine, mse, prediction_error, r_squared, AffineModel, FitReport};
pub use dtree::{cross_validate, learn_tree, DiscriminantTree, LabeledAuxSet, TreeParams};
pub use klinear::{klinear_cluster, Clustering, InitStrategy, KLinearConfig};
pub use pipeline::{analyze, fixed_k_analyze, AnalysisReport, AnalyzeOutcome, PipelineConfig};
pub use spectral::{
    alignment_kernel_approx, alignment_kernel_exact, spectral_cluster, AlignmentConfig,
    SimilarityMatrix,
};
pub use trace::{load_traces, project_points, save_traces, ExecutionTrace, PointSet, TraceSet, VariableSchema};
