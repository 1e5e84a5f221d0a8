//! Low-rank sparse coding with a trace-quotient graph embedding for patient
//! similarity on incomplete records.
//!
//! Data are `m × n` matrices with samples as columns. The pipeline completes
//! the observed matrix, learns a unit-norm dictionary and elastic-net codes,
//! and fits an orthonormal projection of the codes that pulls same-class
//! neighbours together and pushes other-class neighbours apart.

pub mod data_io;
pub mod error;
pub mod graph_embedding;
pub mod linalg;
pub mod matrix_recovery;
pub mod similarity;
pub mod sparse_coding;
pub mod trainer;

pub use error::{Result, SpargeError};
pub use graph_embedding::{GraphMode, LaplacianPair, StiefelProjection};
pub use matrix_recovery::{MaskedVector, ObservedMatrix};
pub use similarity::{EmbeddedPatient, EvalMetrics, SimilarityResult};
pub use sparse_coding::{CodeMatrix, CodingParams, Dictionary, SparseCode};
pub use trainer::{fit, Descent, FitReport, Hyperparams, SpargeModel, SvtRule};
