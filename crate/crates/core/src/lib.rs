//! Symptom-aligned analysis of speech features: dimensionality reduction,
//! clustering, local explanations, group statistics and classification.

pub mod classify;
pub mod cluster;
pub mod corpus;
pub mod dimred;
pub mod error;
pub mod explain;
pub mod pipeline;
pub mod plot;
pub mod stats;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
