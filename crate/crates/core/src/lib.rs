//! Rare-attack intrusion detection on flow-record tables.
//!
//! The pipeline cleans and scales a labelled table, synthesizes extra rows for
//! rare attack classes with a conditional tabular GAN, rebalances the
//! training set with SMOTE followed by edited-nearest-neighbour cleaning,
//! and trains a focal-loss feed-forward classifier whose evaluation is
//! reported as confusion matrices, per-class metrics and ROC curves.

pub mod classifier;
pub mod data;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod ctgan;
pub mod nn;
pub mod pipeline;
pub mod resample;
pub mod rng;

pub use error::{Error, Result};
