//! Label-efficient prediction of antigenic relationships between influenza A
//! haemagglutinin sequences.
//!
//! The pipeline runs corpus construction from HI titres ([`corpus`]), pair
//! featurization over precomputed protein embeddings ([`features`]),
//! supervised base learners ([`learners`]), self-training and label
//! spreading ([`ssl`]) and nested cross-validation under simulated label
//! scarcity ([`eval`]), with figure-ready output in [`eval::figures`].

pub mod corpus;
pub mod eval;
pub mod features;
pub mod label;
pub mod learners;
pub mod ssl;
pub mod synthetic;

pub use label::{Class, Label};
