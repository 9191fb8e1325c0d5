//! Semi-supervised strategies: a self-training wrapper around any base
//! learner and transductive label spreading on a kNN graph.

pub mod self_training;
pub mod spreading;

use thiserror::Error;

use crate::label::Class;
use crate::learners::LearnerError;

pub use self_training::{self_train, Criterion, Promotion, SelfTrainingOutcome, SelfTrainingSpec};
pub use spreading::{build_knn_graph, label_spread, KnnGraph, LabelSpreadingSpec, Metric, NeighborLists, SpreadOutcome, DEFAULT_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum SslError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("invalid SSL configuration: {0}")]
    InvalidSpec(String),
    #[error("no labelled example of class {0}")]
    MissingClass(Class),
    #[error("expected {expected} columns/rows, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("n_neighbors={k} needs more than {n} rows")]
    TooFewRows { k: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, SslError>;
