//! Group-competition sample reweighting for small image classifiers.
//!
//! Samples in a mini-batch are stitched into composites, classified once
//! without gradients, and each sample's share of the composite posterior at
//! its own label becomes a score that reweights its training loss.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod imageops;
pub mod model;
pub mod nscore;
pub mod runner;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use tensor::Tensor;
