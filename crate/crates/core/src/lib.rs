//! Explanatory analysis of speaker-verification target-trial scores.
//!
//! Scores of same-speaker trials are regressed on enrollment-versus-test
//! acoustic mismatch (absolute differences of standardized utterance-level
//! feature summaries) with a per-speaker random intercept, and mismatch
//! factors are ranked by how well models built on them track the scores.
//!
//! The pipeline is: [`catalog`] (feature schema) → [`ingest`] (utterance
//! summaries and trial lists) → [`predictors`] (standardization, distances,
//! group sums) → [`lme`] (model fit and tests) → [`ranking`] and
//! [`diagnostics`]. [`synth`] generates data with known parameters.

pub mod catalog;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod lme;
pub mod numeric;
pub mod predictors;
pub mod ranking;
pub mod report;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
