//! Evaluation: stratified nested cross-validation with label masking, grid
//! search, F1 scoring with bootstrap intervals, and report generation.

pub mod experiment;
pub mod figures;
pub mod folds;
pub mod grid;
pub mod metrics;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::learners::LearnerError;
use crate::ssl::SslError;

pub use experiment::{
    run_experiment, AuditEntry, CellKey, CellReport, Dataset, ExperimentConfig, ExperimentReport, FoldRecord, Paradigm,
    Prediction, Scope, ScoreRow, Selection, SCHEMA_VERSION,
};
pub use folds::{make_folds, make_folds_with, mask_labels, stratified_splits, FoldPlan, MaskPlan, Split, SupervisionRatio};
pub use grid::{grid_search, Grids, SelfTrainingParams, SpreadingParams};
pub use metrics::{bootstrap_ci, bootstrap_statistic, f1_score, Confusion};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} examples, found {found}")]
    TooFewExamples { needed: usize, found: usize },
    #[error("cannot keep {retained} of {train} labels with both classes present")]
    MaskImpossible { train: usize, retained: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("every grid configuration failed: {}", .0.join("; "))]
    AllConfigsFailed(Vec<String>),
    #[error("leakage detected: {0}")]
    Leakage(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Ssl(#[from] SslError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Sub-seed for one named stream, so that e.g. masks do not depend on which
/// paradigm is being run.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
